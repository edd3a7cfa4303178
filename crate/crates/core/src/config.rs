//! Flat JSON run configuration.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::hierloss::{HierGeometry, HierSpace, LcaNoise, NoiseDomain, Reduction};
use crate::mlloss::{MlLossKind, MultiSimilarityParams, ProxyAnchorParams};
use crate::model::{Activation, LrMultipliers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    On,
    Off,
}

/// Training hyperparameters. Serialized field order is fixed, so
/// `to_json` is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(alias = "c")]
    pub curvature: f64,
    #[serde(alias = "r")]
    pub clip_radius: f64,
    #[serde(alias = "K")]
    pub neighbors: usize,
    pub proxy_count: usize,
    pub lambda: f64,
    pub delta: f64,
    pub ml_loss: MlLossKind,
    pub hier_space: HierSpace,
    /// `false` removes the hierarchical term from the step entirely.
    pub hier_enabled: bool,
    pub lca_noise: Switch,
    pub lca_noise_domain: NoiseDomain,
    pub reduction: Reduction,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub pa_alpha: f64,
    pub pa_margin: f64,
    pub ms_alpha: f64,
    pub ms_beta: f64,
    pub ms_base: f64,
    pub ms_epsilon: f64,
    pub lr_mult_last_layer: f64,
    pub lr_mult_class_proxies: f64,
    pub lr_mult_hier_proxies: f64,
    /// Fraction of classes used for training in the class-disjoint split.
    pub split_fraction: f64,
    pub split_seed: u64,
    /// Upper bound on sample triplets per step.
    pub sample_triplet_budget: usize,
    /// Upper bound on proxy triplets per step.
    pub proxy_triplet_budget: usize,
    pub eval_ks: Vec<usize>,
    /// Test samples used for the Dasgupta cost of the extracted tree.
    pub dasgupta_subset: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let pa = ProxyAnchorParams::default();
        let ms = MultiSimilarityParams::default();
        let lm = LrMultipliers::default();
        TrainConfig {
            curvature: 0.1,
            clip_radius: 2.3,
            neighbors: 20,
            proxy_count: 512,
            lambda: 1.0,
            delta: 0.1,
            ml_loss: MlLossKind::ProxyAnchor,
            hier_space: HierSpace::Hyperbolic,
            hier_enabled: true,
            lca_noise: Switch::On,
            lca_noise_domain: NoiseDomain::Value,
            reduction: Reduction::Mean,
            lr: 1e-3,
            weight_decay: 1e-2,
            epochs: 30,
            warmup_epochs: 1,
            batch_size: 100,
            seed: 0,
            hidden_dims: vec![64],
            embedding_dim: 16,
            activation: Activation::Relu,
            pa_alpha: pa.alpha,
            pa_margin: pa.margin,
            ms_alpha: ms.alpha,
            ms_beta: ms.beta,
            ms_base: ms.base,
            ms_epsilon: ms.epsilon,
            lr_mult_last_layer: lm.last_layer,
            lr_mult_class_proxies: lm.class_proxies,
            lr_mult_hier_proxies: lm.hier_proxies,
            split_fraction: 0.5,
            split_seed: 0,
            sample_triplet_budget: 256,
            proxy_triplet_budget: 256,
            eval_ks: vec![1, 2, 4],
            dasgupta_subset: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.curvature.is_finite() && self.curvature > 0.0) {
            return bad(format!(
                "curvature must be positive, got {}",
                self.curvature
            ));
        }
        if !(self.clip_radius.is_finite() && self.clip_radius > 0.0) {
            return bad(format!(
                "clip_radius must be positive, got {}",
                self.clip_radius
            ));
        }
        if self.neighbors == 0 {
            return bad("neighbors must be at least 1".into());
        }
        if self.proxy_count < 2 {
            return bad("proxy_count must be at least 2".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad(format!("delta must be finite and >= 0, got {}", self.delta));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and >= 0".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.embedding_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return bad("eval_ks must be a nonempty list of positive integers".into());
        }
        if !(0.0..=1.0).contains(&self.split_fraction) {
            return bad("split_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn geometry(&self) -> HierGeometry {
        HierGeometry {
            space: self.hier_space,
            curvature: self.curvature,
            clip_radius: self.clip_radius,
        }
    }

    pub fn noise(&self) -> LcaNoise {
        match self.lca_noise {
            Switch::On => LcaNoise::Gumbel(self.lca_noise_domain),
            Switch::Off => LcaNoise::Off,
        }
    }

    pub fn proxy_anchor(&self) -> ProxyAnchorParams {
        ProxyAnchorParams {
            alpha: self.pa_alpha,
            margin: self.pa_margin,
        }
    }

    pub fn multi_similarity(&self) -> MultiSimilarityParams {
        MultiSimilarityParams {
            alpha: self.ms_alpha,
            beta: self.ms_beta,
            base: self.ms_base,
            epsilon: self.ms_epsilon,
        }
    }

    pub fn lr_multipliers(&self) -> LrMultipliers {
        LrMultipliers {
            last_layer: self.lr_mult_last_layer,
            class_proxies: self.lr_mult_class_proxies,
            hier_proxies: self.lr_mult_hier_proxies,
        }
    }

    /// Encoder layer sizes for a given input dimension.
    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut s = vec![input_dim];
        s.extend(&self.hidden_dims);
        s.push(self.embedding_dim);
        s
    }

    /// Applies one `key=value` override. The value is parsed as JSON and
    /// falls back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self)? {
            Value::Object(m) => m,
            _ => unreachable!("config is an object"),
        };
        let key = canonical_key(key);
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        map.insert(key.to_string(), parse_value(value));
        let cfg: TrainConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(format!("{key}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }
}

fn canonical_key(key: &str) -> &str {
    match key {
        "c" => "curvature",
        "r" => "clip_radius",
        "K" => "neighbors",
        other => other,
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Path keys that a run config accepts next to the training fields.
pub const PATH_KEYS: [&str; 3] = ["dataset", "tree", "out_dir"];

/// A training config plus the files it operates on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: Option<String>,
    pub tree: Option<String>,
    pub out_dir: Option<String>,
}

impl RunConfig {
    /// Parses a flat JSON object; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut take = |k: &str| -> Result<Option<String>> {
            match map.remove(k) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s)),
                Some(other) => Err(Error::Config(format!(
                    "`{k}` must be a string, got {other}"
                ))),
            }
        };
        let dataset = take("dataset")?;
        let tree = take("tree")?;
        let out_dir = take("out_dir")?;
        let train: TrainConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        Ok(RunConfig {
            train,
            dataset,
            tree,
            out_dir,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "tree" => self.tree = Some(value.to_string()),
            "out_dir" => self.out_dir = Some(value.to_string()),
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    /// Canonical JSON: training fields followed by the path keys.
    pub fn to_json(&self) -> String {
        let Value::Object(mut map) = serde_json::to_value(&self.train).expect("config serializes")
        else {
            unreachable!("config is an object")
        };
        let paths: Map<String, Value> = [
            ("dataset", &self.dataset),
            ("tree", &self.tree),
            ("out_dir", &self.out_dir),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.clone().map_or(Value::Null, Value::String)))
        .collect();
        map.extend(paths);
        serde_json::to_string(&map).expect("map serializes")
    }
}
