//! Spherical metric-learning losses over cosine similarities.
//!
//! Both losses take the `ℓ2`-normalized embedding rows (the spherical view)
//! and integer class labels. Pair/proxy membership masks are computed on
//! detached values and enter the tape as constants.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlLossKind {
    #[serde(alias = "proxy-anchor")]
    ProxyAnchor,
    #[serde(alias = "multi-similarity")]
    MultiSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyAnchorParams {
    pub alpha: f64,
    pub margin: f64,
}

impl Default for ProxyAnchorParams {
    fn default() -> Self {
        ProxyAnchorParams {
            alpha: 32.0,
            margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiSimilarityParams {
    pub alpha: f64,
    pub beta: f64,
    pub base: f64,
    /// Pair-mining slack.
    pub epsilon: f64,
}

impl Default for MultiSimilarityParams {
    fn default() -> Self {
        MultiSimilarityParams {
            alpha: 2.0,
            beta: 50.0,
            base: 0.5,
            epsilon: 0.1,
        }
    }
}

const UNIT_TOL: f64 = 1e-6;

fn check_spherical(tape: &Tape, emb: Var, labels: &[usize]) -> Result<()> {
    let t = tape.value(emb);
    if t.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} embeddings but {} labels",
            t.rows(),
            labels.len()
        )));
    }
    for i in 0..t.rows() {
        let n = t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!(
                "embedding row {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Proxy-Anchor loss.
///
/// `emb` is `B×n` with unit rows, `proxies` is `C×n` (normalized here).
/// The positive part averages over proxies with at least one positive in the
/// batch; the negative part averages over all proxies.
pub fn proxy_anchor_loss(
    tape: &mut Tape,
    emb: Var,
    labels: &[usize],
    proxies: Var,
    params: ProxyAnchorParams,
) -> Result<Var> {
    check_spherical(tape, emb, labels)?;
    let b = labels.len();
    let classes = tape.value(proxies).rows();
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} has no proxy ({classes} proxies)"
        )));
    }
    let mut pos_mask = vec![0.0; b * classes];
    let mut has_pos = vec![0.0; classes];
    for (i, &y) in labels.iter().enumerate() {
        pos_mask[i * classes + y] = 1.0;
        has_pos[y] = 1.0;
    }
    let neg_mask: Vec<f64> = pos_mask.iter().map(|m| 1.0 - m).collect();
    let n_pos = has_pos.iter().sum::<f64>();

    let pn = tape.l2_normalize(proxies);
    let pt = tape.transpose(pn);
    let sim = tape.matmul(emb, pt)?;

    let pos_mask = tape.constant(Tensor::matrix(b, classes, pos_mask)?);
    let neg_mask = tape.constant(Tensor::matrix(b, classes, neg_mask)?);
    let has_pos = tape.constant(Tensor::row_vector(has_pos));

    let s = tape.shift(sim, -params.margin);
    let s = tape.scale(s, -params.alpha);
    let e = tape.exp(s);
    let e = tape.mul(e, pos_mask)?;
    let cs = tape.col_sums(e);
    let cs = tape.shift(cs, 1.0);
    let lp = tape.log(cs);
    let lp = tape.mul(lp, has_pos)?;
    let pos_sum = tape.sum(lp);
    let pos_term = tape.scale(pos_sum, 1.0 / n_pos);

    let s = tape.shift(sim, params.margin);
    let s = tape.scale(s, params.alpha);
    let e = tape.exp(s);
    let e = tape.mul(e, neg_mask)?;
    let cs = tape.col_sums(e);
    let cs = tape.shift(cs, 1.0);
    let ln = tape.log(cs);
    let neg_sum = tape.sum(ln);
    let neg_term = tape.scale(neg_sum, 1.0 / classes as f64);

    tape.add(pos_term, neg_term)
}

/// Multi-Similarity loss with its hard-pair mining.
///
/// For anchor `i`, a negative is kept when its similarity exceeds the
/// hardest positive minus `ε`; a positive is kept when its similarity is
/// below the hardest negative plus `ε` (all positives are kept when the
/// batch has no negative for `i`). Anchors without positives contribute
/// nothing. The sum over anchors is divided by the batch size.
pub fn multi_similarity_loss(
    tape: &mut Tape,
    emb: Var,
    labels: &[usize],
    params: MultiSimilarityParams,
) -> Result<Var> {
    check_spherical(tape, emb, labels)?;
    let b = labels.len();
    if b == 0 {
        return Ok(tape.scalar_const(0.0));
    }
    let et = tape.transpose(emb);
    let sim = tape.matmul(emb, et)?;
    let (pos_mask, neg_mask) = mine_pairs(tape.value(sim), labels, params.epsilon);
    tape.record_branches(pos_mask.iter().chain(&neg_mask).map(|&m| m as u8));
    if pos_mask.iter().chain(&neg_mask).all(|&m| m == 0.0) {
        return Ok(tape.scalar_const(0.0));
    }
    let pos_mask = tape.constant(Tensor::matrix(b, b, pos_mask)?);
    let neg_mask = tape.constant(Tensor::matrix(b, b, neg_mask)?);

    let s = tape.shift(sim, -params.base);
    let s = tape.scale(s, -params.alpha);
    let e = tape.exp(s);
    let e = tape.mul(e, pos_mask)?;
    let rs = tape.row_sums(e);
    let rs = tape.shift(rs, 1.0);
    let lp = tape.log(rs);
    let pos = tape.scale(lp, 1.0 / params.alpha);

    let s = tape.shift(sim, -params.base);
    let s = tape.scale(s, params.beta);
    let e = tape.exp(s);
    let e = tape.mul(e, neg_mask)?;
    let rs = tape.row_sums(e);
    let rs = tape.shift(rs, 1.0);
    let ln = tape.log(rs);
    let neg = tape.scale(ln, 1.0 / params.beta);

    let per_anchor = tape.add(pos, neg)?;
    let total = tape.sum(per_anchor);
    Ok(tape.scale(total, 1.0 / b as f64))
}

fn mine_pairs(sim: &Tensor, labels: &[usize], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let b = labels.len();
    let mut pos = vec![0.0; b * b];
    let mut neg = vec![0.0; b * b];
    for i in 0..b {
        let row = sim.row(i);
        let positives: Vec<usize> = (0..b)
            .filter(|&k| k != i && labels[k] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<usize> = (0..b).filter(|&k| labels[k] != labels[i]).collect();
        let min_pos = positives
            .iter()
            .map(|&k| row[k])
            .fold(f64::INFINITY, f64::min);
        let max_neg = negatives
            .iter()
            .map(|&k| row[k])
            .fold(f64::NEG_INFINITY, f64::max);
        for &k in &negatives {
            if row[k] + eps > min_pos {
                neg[i * b + k] = 1.0;
            }
        }
        for &k in &positives {
            if negatives.is_empty() || row[k] - eps < max_neg {
                pos[i * b + k] = 1.0;
            }
        }
    }
    (pos, neg)
}
