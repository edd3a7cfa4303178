//! Training: loss assembly, the step loop, metrics and checkpoints.
//!
//! Randomness comes from three ChaCha8 streams derived from the config seed:
//! stream 0 initializes the model, stream 1 draws batches and stream 2
//! drives triplet mining and LCA sampling. Keeping batches on their own
//! stream makes runs with and without the hierarchical term see the same
//! batches.

pub mod checkpoint;
pub mod optim;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::{Serialize, SerializeMap, Serializer};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{OptimizerState, ParamSchedule};

use crate::autodiff::{Tape, Tensor, Var};
use crate::config::TrainConfig;
use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::eval::{extract_tree, random_binary_tree, recall_at_k, InducedTree};
use crate::hierloss::{
    assign_lcas, hier_loss_assigned, HierGeometry, HierInputs, HierProxySet, LcaAssignment,
};
use crate::mining::{
    build_triplets, knn_from_distances, reciprocal_knn, DistanceMatrix, TripletBatch, TripletKind,
};
use crate::mlloss::{multi_similarity_loss, proxy_anchor_loss, MlLossKind};
use crate::model::{forward, parameter_groups, GroupKind, Model, ParamGroup};

const INIT_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;
const HIER_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `L_ML + λ·(L_x + L_ρ)` on the tape.
pub fn total_loss(
    tape: &mut Tape,
    loss_ml: Var,
    hier: Option<(Var, Var)>,
    lambda: f64,
) -> Result<Var> {
    match hier {
        None => Ok(loss_ml),
        Some((hx, hp)) => {
            let h = tape.add(hx, hp)?;
            let h = tape.scale(h, lambda);
            tape.add(loss_ml, h)
        }
    }
}

/// Everything random about one step, fixed after sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub batch: Vec<usize>,
    pub warmup: bool,
    pub sample_lcas: Vec<LcaAssignment>,
    pub proxy_lcas: Vec<LcaAssignment>,
}

/// Loss values of one step; the hierarchical terms are already scaled by λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ml: f64,
    pub hier_x: f64,
    pub hier_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub plan: StepPlan,
    pub losses: StepLosses,
    /// Metrics of the epoch this step completed, if any.
    pub epoch_end: Option<EpochMetrics>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub recall: Vec<(usize, f64)>,
    pub loss_ml: f64,
    pub loss_hier_x: f64,
    pub loss_hier_p: f64,
    pub mean_proxy_norm_pair: Option<f64>,
    pub mean_proxy_norm_triple: Option<f64>,
}

impl EpochMetrics {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

impl Serialize for EpochMetrics {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(8 + self.recall.len()))?;
        m.serialize_entry("epoch", &self.epoch)?;
        m.serialize_entry("split", &self.split)?;
        for (k, r) in &self.recall {
            m.serialize_entry(&format!("recall@{k}"), r)?;
        }
        m.serialize_entry("loss_ml", &self.loss_ml)?;
        m.serialize_entry("loss_hier_x", &self.loss_hier_x)?;
        m.serialize_entry("loss_hier_p", &self.loss_hier_p)?;
        m.serialize_entry("mean_proxy_norm_pair", &self.mean_proxy_norm_pair)?;
        m.serialize_entry("mean_proxy_norm_triple", &self.mean_proxy_norm_triple)?;
        m.end()
    }
}

/// Running sums over the current epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct EpochAccumulator {
    steps: f64,
    ml: f64,
    hier_x: f64,
    hier_p: f64,
    pair_norm_sum: f64,
    triple_norm_sum: f64,
    norm_count: f64,
}

impl EpochAccumulator {
    fn to_vec(self) -> Vec<f64> {
        vec![
            self.steps,
            self.ml,
            self.hier_x,
            self.hier_p,
            self.pair_norm_sum,
            self.triple_norm_sum,
            self.norm_count,
        ]
    }

    fn from_slice(v: &[f64]) -> Self {
        EpochAccumulator {
            steps: v[0],
            ml: v[1],
            hier_x: v[2],
            hier_p: v[3],
            pair_norm_sum: v[4],
            triple_norm_sum: v[5],
            norm_count: v[6],
        }
    }
}

/// Ball points of the rows of `features` under the model.
pub fn embed_points(model: &Model, cfg: &TrainConfig, features: &[f64]) -> Result<Vec<f64>> {
    let z = model.embed(features)?;
    Ok(HierGeometry::hyperbolic(cfg.curvature, cfg.clip_radius).realize_rows(z.data(), z.cols()))
}

/// Ball points of the hierarchical proxies.
pub fn proxy_points(model: &Model, cfg: &TrainConfig) -> Vec<f64> {
    model
        .hier_proxies
        .realized(&HierGeometry::hyperbolic(cfg.curvature, cfg.clip_radius))
}

/// Recall@k over `eval_ks` on a dataset, ranking by hyperbolic distance.
pub fn evaluate_recall(
    model: &Model,
    cfg: &TrainConfig,
    ds: &Dataset,
) -> Result<Vec<(usize, f64)>> {
    let points = embed_points(model, cfg, &ds.features_f64())?;
    let dist = DistanceMatrix::hyperbolic(&points, cfg.embedding_dim, cfg.curvature);
    let labels: Vec<usize> = ds.labels.iter().map(|&l| l as usize).collect();
    let r = recall_at_k(&dist, &labels, &cfg.eval_ks)?;
    Ok(cfg.eval_ks.iter().copied().zip(r).collect())
}

/// Tree over the given samples (ball points) and the model's proxies.
pub fn induced_tree(model: &Model, cfg: &TrainConfig, points: &[f64]) -> Result<InducedTree> {
    let geom = HierGeometry::hyperbolic(cfg.curvature, cfg.clip_radius);
    extract_tree(points, &proxy_points(model, cfg), cfg.embedding_dim, &geom)
}

/// Dasgupta costs of the extracted tree and of `random_trees` random binary
/// trees over a seeded subset of `ds`. `weight` takes sample ids.
pub struct DasguptaComparison {
    pub subset: Vec<usize>,
    pub extracted: f64,
    pub random_mean: f64,
}

pub fn dasgupta_comparison(
    model: &Model,
    cfg: &TrainConfig,
    ds: &Dataset,
    weight: impl Fn(u64, u64) -> f64,
    random_trees: usize,
) -> Result<DasguptaComparison> {
    let mut rng = stream(cfg.seed, 3);
    let m = cfg.dasgupta_subset.min(ds.len());
    let mut subset = index::sample(&mut rng, ds.len(), m).into_vec();
    subset.sort_unstable();
    let points = embed_points(model, cfg, &ds.gather(&subset))?;
    let w = |a: usize, b: usize| weight(ds.ids[subset[a]], ds.ids[subset[b]]);
    let tree = induced_tree(model, cfg, &points)?;
    let extracted = crate::eval::dasgupta_cost(&tree, w)?;
    let mut total = 0.0;
    for _ in 0..random_trees {
        let t = random_binary_tree(m, &mut rng)?;
        total += crate::eval::dasgupta_cost(&t, w)?;
    }
    Ok(DasguptaComparison {
        subset,
        extracted,
        random_mean: total / random_trees.max(1) as f64,
    })
}

enum Lcas<'a> {
    Sample(&'a mut ChaCha8Rng),
    Fixed(&'a StepPlan),
}

struct Built {
    tape: Tape,
    vars: Vec<Var>,
    total: Var,
    losses: StepLosses,
    plan: StepPlan,
    /// Ball points of all proxies before the update.
    proxy_values: Vec<f64>,
}

fn mine(
    values: &[f64],
    dim: usize,
    geom: &HierGeometry,
    k: usize,
    budget: usize,
    kind: TripletKind,
    rng: &mut ChaCha8Rng,
) -> Result<TripletBatch> {
    let n = values.len() / dim;
    if n < 3 {
        return Ok(TripletBatch::empty(kind));
    }
    let row = |i: usize| &values[i * dim..(i + 1) * dim];
    let d = DistanceMatrix::from_fn(n, |i, j| geom.distance(row(i), row(j)));
    let recip = reciprocal_knn(&knn_from_distances(&d, k.min(n - 1))?);
    Ok(build_triplets(&recip, budget, kind, rng))
}

fn build_step(
    model: &Model,
    cfg: &TrainConfig,
    groups: &[ParamGroup],
    data: &Dataset,
    batch: &[usize],
    warmup: bool,
    lcas: Lcas<'_>,
) -> Result<Built> {
    let names = model.param_names();
    let frozen: Vec<bool> = (0..names.len())
        .map(|i| {
            warmup
                && groups
                    .iter()
                    .any(|g| g.kind == GroupKind::Backbone && g.members.contains(&i))
        })
        .collect();
    let mut tape = Tape::new();
    let (mv, vars) = model.register(&mut tape, |n| {
        let idx = names.iter().position(|x| x == n).expect("known name");
        !frozen[idx]
    });
    let x = tape.constant(Tensor::matrix(batch.len(), data.dim, data.gather(batch))?);
    let emb = forward(
        &mut tape,
        &mv,
        model.encoder.activation,
        x,
        cfg.clip_radius,
        cfg.curvature,
    )?;
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i] as usize).collect();
    let loss_ml = match cfg.ml_loss {
        MlLossKind::ProxyAnchor => proxy_anchor_loss(
            &mut tape,
            emb.spherical,
            &labels,
            mv.class_proxies,
            cfg.proxy_anchor(),
        )?,
        MlLossKind::MultiSimilarity => {
            multi_similarity_loss(&mut tape, emb.spherical, &labels, cfg.multi_similarity())?
        }
    };

    let geom = cfg.geometry();
    let proxy_var = geom.realize(&mut tape, mv.hier_proxies)?;
    let proxy_values = tape.value(proxy_var).data().to_vec();
    let dim = cfg.embedding_dim;
    let mut plan = StepPlan {
        batch: batch.to_vec(),
        warmup,
        sample_lcas: vec![],
        proxy_lcas: vec![],
    };
    let mut hier = None;
    if cfg.hier_enabled {
        let points = match geom.space {
            crate::hierloss::HierSpace::Hyperbolic => emb.hyperbolic,
            crate::hierloss::HierSpace::Spherical => emb.spherical,
        };
        let point_values = tape.value(points).data().to_vec();
        match lcas {
            Lcas::Sample(rng) => {
                let noise = cfg.noise();
                let tx = mine(
                    &point_values,
                    dim,
                    &geom,
                    cfg.neighbors,
                    cfg.sample_triplet_budget,
                    TripletKind::Samples,
                    rng,
                )?;
                let tp = mine(
                    &proxy_values,
                    dim,
                    &geom,
                    cfg.neighbors,
                    cfg.proxy_triplet_budget,
                    TripletKind::Proxies,
                    rng,
                )?;
                plan.sample_lcas =
                    assign_lcas(&tx, &point_values, &proxy_values, dim, &geom, noise, rng)?;
                plan.proxy_lcas =
                    assign_lcas(&tp, &proxy_values, &proxy_values, dim, &geom, noise, rng)?;
            }
            Lcas::Fixed(p) => {
                plan.sample_lcas = p.sample_lcas.clone();
                plan.proxy_lcas = p.proxy_lcas.clone();
            }
        }
        let on_samples = HierInputs {
            points,
            point_values: &point_values,
            proxies: proxy_var,
            proxy_values: &proxy_values,
            dim,
        };
        let hx = hier_loss_assigned(
            &mut tape,
            on_samples,
            &plan.sample_lcas,
            cfg.delta,
            &geom,
            cfg.reduction,
        )?;
        let on_proxies = HierInputs {
            points: proxy_var,
            point_values: &proxy_values,
            ..on_samples
        };
        let hp = hier_loss_assigned(
            &mut tape,
            on_proxies,
            &plan.proxy_lcas,
            cfg.delta,
            &geom,
            cfg.reduction,
        )?;
        hier = Some((hx, hp));
    }
    let total = total_loss(&mut tape, loss_ml, hier, cfg.lambda)?;
    let (hier_x, hier_p) = hier.map_or((0.0, 0.0), |(hx, hp)| {
        (cfg.lambda * tape.item(hx), cfg.lambda * tape.item(hp))
    });
    let losses = StepLosses {
        total: tape.item(total),
        ml: tape.item(loss_ml),
        hier_x,
        hier_p,
    };
    Ok(Built {
        tape,
        vars,
        total,
        losses,
        plan,
        proxy_values,
    })
}

/// Stateful trainer over a fixed train/test pair.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    groups: Vec<ParamGroup>,
    optim: OptimizerState,
    train: Dataset,
    test: Dataset,
    batch_rng: ChaCha8Rng,
    hier_rng: ChaCha8Rng,
    step: u64,
    acc: EpochAccumulator,
    best_recall: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        if train.len() < 2 {
            return Err(Error::invalid("training set needs at least two samples"));
        }
        if train.dim != test.dim {
            return Err(Error::invalid("train and test feature dimensions differ"));
        }
        let mut init = stream(config.seed, INIT_STREAM);
        let model = Model::new(
            &config.layer_sizes(train.dim),
            config.activation,
            train.num_classes(),
            config.proxy_count,
            &mut init,
        )?;
        let groups = parameter_groups(&model, config.lr_multipliers())?;
        let optim = OptimizerState::new(&model.params(), config.weight_decay);
        Ok(Trainer {
            batch_rng: stream(config.seed, BATCH_STREAM),
            hier_rng: stream(config.seed, HIER_STREAM),
            config,
            model,
            groups,
            optim,
            train,
            test,
            step: 0,
            acc: EpochAccumulator::default(),
            best_recall: f64::NEG_INFINITY,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.train.len().div_ceil(self.batch_size()) as u64
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size.min(self.train.len())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Index of the epoch the next step belongs to.
    pub fn epoch(&self) -> usize {
        (self.step / self.steps_per_epoch()) as usize
    }

    pub fn is_done(&self) -> bool {
        self.epoch() >= self.config.epochs
    }

    pub fn best_recall(&self) -> f64 {
        self.best_recall
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optim
    }

    /// Deterministic total loss of `plan` under the current parameters.
    pub fn plan_loss(&self, plan: &StepPlan) -> Result<f64> {
        let b = build_step(
            &self.model,
            &self.config,
            &self.groups,
            &self.train,
            &plan.batch,
            plan.warmup,
            Lcas::Fixed(plan),
        )?;
        Ok(b.losses.total)
    }

    /// One optimization step; evaluates and reports when an epoch ends.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let warmup = self.epoch() < self.config.warmup_epochs;
        let (n, b) = (self.train.len(), self.batch_size());
        let batch = index::sample(&mut self.batch_rng, n, b).into_vec();
        let built = build_step(
            &self.model,
            &self.config,
            &self.groups,
            &self.train,
            &batch,
            warmup,
            Lcas::Sample(&mut self.hier_rng),
        )?;
        let abort = |reason: String| Error::TrainingAborted {
            step: self.step,
            reason,
        };
        if !built.losses.total.is_finite() {
            return Err(abort(format!("loss is {}", built.losses.total)));
        }
        let grads = built.tape.backward(built.total)?;
        let grads: Vec<Option<Tensor>> = built
            .vars
            .iter()
            .map(|&v| built.tape.requires_grad(v).then(|| grads.get(v)))
            .collect();
        let names = self.model.param_names();
        if let Some(i) = grads
            .iter()
            .position(|g| g.as_ref().is_some_and(|g| !g.all_finite()))
        {
            return Err(abort(format!("gradient of {} is not finite", names[i])));
        }
        let mut schedule = vec![
            ParamSchedule {
                lr: 0.0,
                decay: false
            };
            names.len()
        ];
        for g in &self.groups {
            for &m in &g.members {
                schedule[m] = ParamSchedule {
                    lr: self.config.lr * g.lr_mult,
                    decay: g.decay,
                };
            }
        }
        self.optim
            .step(&mut self.model.params_mut(), &grads, &schedule)?;

        self.acc.steps += 1.0;
        self.acc.ml += built.losses.ml;
        self.acc.hier_x += built.losses.hier_x;
        self.acc.hier_p += built.losses.hier_p;
        if self.tracks_norms() {
            let dim = self.config.embedding_dim;
            let norm = |p: usize| {
                built.proxy_values[p * dim..(p + 1) * dim]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            };
            for a in built.plan.sample_lcas.iter().chain(&built.plan.proxy_lcas) {
                self.acc.pair_norm_sum += norm(a.rho_pair);
                self.acc.triple_norm_sum += norm(a.rho_triple);
                self.acc.norm_count += 1.0;
            }
        }
        self.step += 1;
        let epoch_end = if self.step.is_multiple_of(self.steps_per_epoch()) {
            Some(self.finish_epoch()?)
        } else {
            None
        };
        Ok(StepReport {
            step: self.step - 1,
            plan: built.plan,
            losses: built.losses,
            epoch_end,
        })
    }

    fn tracks_norms(&self) -> bool {
        self.config.hier_enabled && self.config.lambda > 0.0
    }

    fn finish_epoch(&mut self) -> Result<EpochMetrics> {
        let recall = evaluate_recall(&self.model, &self.config, &self.test)?;
        let a = self.acc;
        let steps = a.steps.max(1.0);
        let norms = |s: f64| (self.tracks_norms() && a.norm_count > 0.0).then(|| s / a.norm_count);
        let m = EpochMetrics {
            epoch: self.epoch() - 1,
            split: "test".into(),
            loss_ml: a.ml / steps,
            loss_hier_x: a.hier_x / steps,
            loss_hier_p: a.hier_p / steps,
            mean_proxy_norm_pair: norms(a.pair_norm_sum),
            mean_proxy_norm_triple: norms(a.triple_norm_sum),
            recall,
        };
        if let Some(r1) = m.recall.first().map(|r| r.1) {
            self.best_recall = self.best_recall.max(r1);
        }
        self.acc = EpochAccumulator::default();
        Ok(m)
    }

    /// Runs steps until the epoch ends and returns its metrics.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        loop {
            if let Some(m) = self.train_step()?.epoch_end {
                return Ok(m);
            }
        }
    }

    /// Trains the remaining epochs. With an output directory, appends each
    /// record to `metrics.ndjson` and writes `last.ckpt` every epoch,
    /// `best.ckpt` on a new best Recall@1 and `final.ckpt` at the end.
    pub fn fit(&mut self, out_dir: Option<&Path>) -> Result<Vec<EpochMetrics>> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.json");
            fs::write(&cfg_path, self.config.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
        }
        let mut log = Vec::new();
        while !self.is_done() {
            let before = self.best_recall;
            let m = self.train_epoch()?;
            if let Some(dir) = out_dir {
                let path = dir.join("metrics.ndjson");
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                writeln!(f, "{}", m.to_json()).map_err(|e| Error::io(&path, e))?;
                let ckpt = self.checkpoint();
                ckpt.save(&dir.join("last.ckpt"))?;
                if self.best_recall > before {
                    ckpt.save(&dir.join("best.ckpt"))?;
                }
            }
            log.push(m);
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join("final.ckpt"))?;
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let names = self.model.param_names();
        let mut tensors: Vec<(String, Tensor)> = names
            .iter()
            .cloned()
            .zip(self.model.params().into_iter().cloned())
            .collect();
        for (i, n) in names.iter().enumerate() {
            tensors.push((format!("optim.m.{n}"), self.optim.m[i].clone()));
            tensors.push((format!("optim.v.{n}"), self.optim.v[i].clone()));
        }
        tensors.push((
            "optim.steps".into(),
            Tensor::row_vector(self.optim.steps.iter().map(|&s| s as f64).collect()),
        ));
        let mut state = vec![self.step as f64, self.best_recall];
        state.extend(self.acc.to_vec());
        tensors.push(("trainer.state".into(), Tensor::row_vector(state)));
        Checkpoint {
            config_json: self.config.to_json(),
            tensors,
            rngs: vec![
                ("batch".into(), RngState::capture(&self.batch_rng)),
                ("hier".into(), RngState::capture(&self.hier_rng)),
            ],
        }
    }

    /// Rebuilds a trainer from a checkpoint and the datasets it was trained on.
    pub fn resume(ckpt: &Checkpoint, train: Dataset, test: Dataset) -> Result<Self> {
        let config = TrainConfig::from_json(&ckpt.config_json)?;
        let mut t = Trainer::new(config, train, test)?;
        t.model = model_from_checkpoint(ckpt, &t.config, t.train.dim)?;
        let names = t.model.param_names();
        for (i, n) in names.iter().enumerate() {
            t.optim.m[i] = shaped(ckpt.tensor(&format!("optim.m.{n}"))?, t.optim.m[i].shape())?;
            t.optim.v[i] = shaped(ckpt.tensor(&format!("optim.v.{n}"))?, t.optim.v[i].shape())?;
        }
        let steps = ckpt.tensor("optim.steps")?;
        if steps.len() != names.len() {
            return Err(Error::Validation(
                "optimizer step vector has the wrong length".into(),
            ));
        }
        t.optim.steps = steps.data().iter().map(|&s| s as u64).collect();
        let state = ckpt.tensor("trainer.state")?;
        if state.len() != 9 {
            return Err(Error::Validation(
                "trainer state has the wrong length".into(),
            ));
        }
        t.step = state.data()[0] as u64;
        t.best_recall = state.data()[1];
        t.acc = EpochAccumulator::from_slice(&state.data()[2..]);
        t.batch_rng = ckpt.rng("batch")?.restore();
        t.hier_rng = ckpt.rng("hier")?.restore();
        Ok(t)
    }
}

fn shaped(t: &Tensor, want: &[usize]) -> Result<Tensor> {
    if t.shape() != want {
        return Err(Error::Validation(format!(
            "checkpoint tensor has shape {:?}, expected {want:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}

/// Model parameters stored in a checkpoint.
pub fn model_from_checkpoint(
    ckpt: &Checkpoint,
    cfg: &TrainConfig,
    input_dim: usize,
) -> Result<Model> {
    let classes = ckpt.tensor(crate::model::CLASS_PROXIES)?.rows();
    let hier = ckpt.tensor(crate::model::HIER_PROXIES)?;
    let mut rng = stream(cfg.seed, INIT_STREAM);
    let mut model = Model::new(
        &cfg.layer_sizes(input_dim),
        cfg.activation,
        classes,
        hier.rows(),
        &mut rng,
    )?;
    let names = model.param_names();
    for (name, p) in names.iter().zip(model.params_mut()) {
        *p = shaped(ckpt.tensor(name)?, p.shape())?;
    }
    model.hier_proxies = HierProxySet::new(model.hier_proxies.pre_images().clone())?;
    Ok(model)
}

/// Splits `dataset` by class and trains from scratch.
pub fn train_loop(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<(Trainer, Vec<EpochMetrics>)> {
    let (train, test) = split(dataset, cfg.split_fraction, cfg.split_seed)?;
    let mut trainer = Trainer::new(cfg.clone(), train, test)?;
    let log = trainer.fit(out_dir)?;
    Ok((trainer, log))
}
