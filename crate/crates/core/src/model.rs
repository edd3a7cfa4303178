//! MLP encoder with a spherical and a hyperbolic head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::diff;
use crate::hierloss::HierProxySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub weight: Tensor,
    /// `1 × out`.
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Encoder {
    /// He-normal weights and zero biases for layer sizes `[in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad encoder layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("std");
                let weight = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Ok(Linear {
                    weight: Tensor::matrix(fan_in, fan_out, weight)?,
                    bias: Tensor::zeros(1, fan_out),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Encoder { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }
}

/// The encoder's output seen three ways; all views share `raw`.
#[derive(Debug, Clone, Copy)]
pub struct DualEmbedding {
    pub raw: Var,
    /// `raw / ‖raw‖`, consumed by the metric-learning loss.
    pub spherical: Var,
    /// `exp_0(clip_r(raw))`.
    pub hyperbolic: Var,
}

/// Tape handles of every model parameter.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub layers: Vec<(Var, Var)>,
    pub class_proxies: Var,
    pub hier_proxies: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub class_proxies: Tensor,
    pub hier_proxies: HierProxySet,
}

pub const CLASS_PROXIES: &str = "class_proxies";
pub const HIER_PROXIES: &str = "hier_proxies";

impl Model {
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        classes: usize,
        hier_proxy_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = Encoder::new(sizes, activation, rng)?;
        let dim = encoder.output_dim();
        if classes == 0 {
            return Err(Error::invalid("model needs at least one class"));
        }
        let normal = Normal::new(0.0, 1.0).expect("std");
        let cp = (0..classes * dim).map(|_| normal.sample(rng)).collect();
        let class_proxies = Tensor::matrix(classes, dim, cp)?;
        let hier_proxies = HierProxySet::init(hier_proxy_count, dim, rng)?;
        Ok(Model {
            encoder,
            class_proxies,
            hier_proxies,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.encoder.layers.len() {
            names.push(format!("encoder.{i}.weight"));
            names.push(format!("encoder.{i}.bias"));
        }
        names.push(CLASS_PROXIES.to_string());
        names.push(HIER_PROXIES.to_string());
        names
    }

    /// Parameters in [`Model::param_names`] order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.encoder.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.class_proxies);
        out.push(self.hier_proxies.pre_images());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.encoder.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.class_proxies);
        out.push(self.hier_proxies.pre_images_mut());
        out
    }

    /// Records every parameter as a tape leaf; `trainable(name)` decides
    /// whether it requires a gradient.
    pub fn register(
        &self,
        tape: &mut Tape,
        trainable: impl Fn(&str) -> bool,
    ) -> (ModelVars, Vec<Var>) {
        let names = self.param_names();
        let vars: Vec<Var> = self
            .params()
            .into_iter()
            .zip(&names)
            .map(|(t, n)| tape.leaf(t.clone(), trainable(n)))
            .collect();
        let nl = self.encoder.layers.len();
        let layers = (0..nl).map(|i| (vars[2 * i], vars[2 * i + 1])).collect();
        let mv = ModelVars {
            layers,
            class_proxies: vars[2 * nl],
            hier_proxies: vars[2 * nl + 1],
        };
        (mv, vars)
    }

    /// Raw embeddings for a row-major feature buffer, off the tape.
    pub fn embed(&self, features: &[f64]) -> Result<Tensor> {
        let d = self.encoder.input_dim();
        if !features.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "feature buffer of length {} is not a multiple of {d}",
                features.len()
            )));
        }
        let mut tape = Tape::new();
        let (mv, _) = self.register(&mut tape, |_| false);
        let x = tape.constant(Tensor::matrix(features.len() / d, d, features.to_vec())?);
        let z = encode(&mut tape, &mv, self.encoder.activation, x)?;
        Ok(tape.value(z).clone())
    }
}

/// Raw last-layer output `z` for a batch `x` (`B × in`).
pub fn encode(tape: &mut Tape, vars: &ModelVars, activation: Activation, x: Var) -> Result<Var> {
    let in_dim = tape.value(vars.layers[0].0).rows();
    if tape.value(x).cols() != in_dim {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match encoder input {in_dim}",
            tape.value(x).cols()
        )));
    }
    let mut h = x;
    let last = vars.layers.len() - 1;
    for (i, &(w, b)) in vars.layers.iter().enumerate() {
        let y = tape.matmul(h, w)?;
        h = tape.add_row(y, b)?;
        if i < last {
            h = match activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
            };
        }
    }
    Ok(h)
}

/// Encodes `x` and derives both heads.
pub fn forward(
    tape: &mut Tape,
    vars: &ModelVars,
    activation: Activation,
    x: Var,
    clip_radius: f64,
    curvature: f64,
) -> Result<DualEmbedding> {
    let raw = encode(tape, vars, activation, x)?;
    let spherical = tape.l2_normalize(raw);
    let hyperbolic = diff::clip_and_exp(tape, raw, clip_radius, curvature)?;
    Ok(DualEmbedding {
        raw,
        spherical,
        hyperbolic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Backbone,
    LastLayer,
    ClassProxies,
    HierProxies,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrMultipliers {
    pub last_layer: f64,
    pub class_proxies: f64,
    pub hier_proxies: f64,
}

impl Default for LrMultipliers {
    fn default() -> Self {
        LrMultipliers {
            last_layer: 1.0,
            class_proxies: 1e4,
            hier_proxies: 1.0,
        }
    }
}

impl LrMultipliers {
    /// Large-dataset profile: the embedding layer learns 100× faster.
    pub fn large_dataset() -> Self {
        LrMultipliers {
            last_layer: 1e2,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub kind: GroupKind,
    pub lr_mult: f64,
    /// Decoupled weight decay applies to this group.
    pub decay: bool,
    /// Indices into [`Model::param_names`].
    pub members: Vec<usize>,
}

/// Partitions every parameter into exactly one of the four groups.
pub fn parameter_groups(model: &Model, mults: LrMultipliers) -> Result<Vec<ParamGroup>> {
    let names = model.param_names();
    let last = model.encoder.layers.len() - 1;
    let mut groups = vec![
        ParamGroup {
            kind: GroupKind::Backbone,
            lr_mult: 1.0,
            decay: true,
            members: vec![],
        },
        ParamGroup {
            kind: GroupKind::LastLayer,
            lr_mult: mults.last_layer,
            decay: true,
            members: vec![],
        },
        ParamGroup {
            kind: GroupKind::ClassProxies,
            lr_mult: mults.class_proxies,
            decay: false,
            members: vec![],
        },
        ParamGroup {
            kind: GroupKind::HierProxies,
            lr_mult: mults.hier_proxies,
            decay: false,
            members: vec![],
        },
    ];
    for (idx, name) in names.iter().enumerate() {
        let g = group_of(name, last)
            .ok_or_else(|| Error::invalid(format!("parameter {name} belongs to no group")))?;
        groups[g as usize].members.push(idx);
    }
    let covered: usize = groups.iter().map(|g| g.members.len()).sum();
    if covered != names.len() {
        return Err(Error::invalid(
            "parameter groups do not partition the model",
        ));
    }
    Ok(groups)
}

pub fn group_of(name: &str, last_layer: usize) -> Option<GroupKind> {
    match name {
        CLASS_PROXIES => Some(GroupKind::ClassProxies),
        HIER_PROXIES => Some(GroupKind::HierProxies),
        _ => {
            let rest = name.strip_prefix("encoder.")?;
            let (idx, field) = rest.split_once('.')?;
            if field != "weight" && field != "bias" {
                return None;
            }
            let idx: usize = idx.parse().ok()?;
            Some(if idx == last_layer {
                GroupKind::LastLayer
            } else {
                GroupKind::Backbone
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Model::new(&[6, 10, 4], Activation::Relu, 3, 5, &mut rng).unwrap()
    }

    #[test]
    fn zero_last_layer_gives_bias_direction() {
        let mut m = model();
        let last = m.encoder.layers.last_mut().unwrap();
        last.weight = Tensor::zeros(10, 4);
        last.bias = Tensor::row_vector(vec![3.0, 0.0, -4.0, 0.0]);
        let mut tape = Tape::new();
        let (mv, _) = m.register(&mut tape, |_| true);
        let x = tape.constant(Tensor::matrix(2, 6, (0..12).map(|v| v as f64).collect()).unwrap());
        let e = forward(&mut tape, &mv, Activation::Relu, x, 2.3, 0.1).unwrap();
        for i in 0..2 {
            assert_eq!(tape.value(e.spherical).row(i), &[0.6, 0.0, -0.8, 0.0]);
        }
    }

    #[test]
    fn views_agree_with_slice_geometry() {
        let m = model();
        let feats: Vec<f64> = (0..18).map(|v| (v as f64 * 0.7).sin() * 5.0).collect();
        let mut tape = Tape::new();
        let (mv, _) = m.register(&mut tape, |_| true);
        let x = tape.constant(Tensor::matrix(3, 6, feats.clone()).unwrap());
        let e = forward(&mut tape, &mv, Activation::Relu, x, 2.3, 0.1).unwrap();
        let raw = m.embed(&feats).unwrap();
        assert_eq!(&raw, tape.value(e.raw));
        for i in 0..3 {
            let sph = geometry::l2_normalize_slice(raw.row(i));
            let hyp = geometry::exp_map_0_slice(&geometry::clip_slice(raw.row(i), 2.3), 0.1);
            for (a, b) in tape.value(e.spherical).row(i).iter().zip(&sph) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in tape.value(e.hyperbolic).row(i).iter().zip(&hyp) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(geometry::norm_sq(tape.value(e.hyperbolic).row(i)) * 0.1 < 1.0);
        }
    }

    #[test]
    fn wrong_feature_dim_is_error() {
        let m = model();
        assert!(m.embed(&[1.0; 5]).is_err());
        let mut tape = Tape::new();
        let (mv, _) = m.register(&mut tape, |_| true);
        let x = tape.constant(Tensor::zeros(2, 5));
        assert!(forward(&mut tape, &mv, Activation::Relu, x, 2.3, 0.1).is_err());
    }

    #[test]
    fn groups_partition_parameters() {
        let m = model();
        let groups = parameter_groups(&m, LrMultipliers::default()).unwrap();
        let mut seen: Vec<usize> = groups.iter().flat_map(|g| g.members.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..m.param_names().len()).collect::<Vec<_>>());
        assert_eq!(groups[2].lr_mult, 1e4);
        assert!(!groups[2].decay && !groups[3].decay);
        assert_eq!(
            parameter_groups(&m, LrMultipliers::large_dataset()).unwrap()[1].lr_mult,
            1e2
        );
        assert_eq!(group_of("encoder.0.weight", 1), Some(GroupKind::Backbone));
        assert_eq!(group_of("encoder.1.bias", 1), Some(GroupKind::LastLayer));
        assert_eq!(group_of("stray", 1), None);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let m = model();
        let row: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let both = [row.clone(), row].concat();
        let z = m.embed(&both).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }
}
