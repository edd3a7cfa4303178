//! Python bindings for the `hier` crate.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hier::config::TrainConfig;
use hier::data::{self, Dataset, GenerateSpec};
use hier::eval::{self, InducedTree};
use hier::geometry::{self, Curvature, HyperbolicPoint, TangentVector};
use hier::mining::DistanceMatrix;
use hier::train::{self, Checkpoint};

fn err(e: hier::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn flatten(rows: &[Vec<f64>]) -> PyResult<(Vec<f64>, usize)> {
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err(
            "rows must be non-empty and of equal length",
        ));
    }
    Ok((rows.concat(), dim))
}

/// Poincare ball of curvature `-c`.
#[pyclass(module = "pyhier", frozen)]
struct PoincareBall {
    curvature: Curvature,
}

impl PoincareBall {
    fn point(&self, coords: Vec<f64>) -> PyResult<HyperbolicPoint> {
        HyperbolicPoint::new(coords, self.curvature).map_err(err)
    }
}

#[pymethods]
impl PoincareBall {
    #[new]
    #[pyo3(signature = (c = 0.1))]
    fn new(c: f64) -> PyResult<Self> {
        Ok(PoincareBall {
            curvature: Curvature::new(c).map_err(err)?,
        })
    }

    #[getter]
    fn c(&self) -> f64 {
        self.curvature.value()
    }

    fn exp_map(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        let v = TangentVector::new(v).map_err(err)?;
        Ok(geometry::exp_map_0(&v, self.curvature).into_coords())
    }

    #[pyo3(signature = (v, r = 2.3))]
    fn clip_and_exp(&self, v: Vec<f64>, r: f64) -> PyResult<Vec<f64>> {
        let v = TangentVector::new(v).map_err(err)?;
        Ok(geometry::clip_and_exp(&v, r, self.curvature)
            .map_err(err)?
            .into_coords())
    }

    fn mobius_add(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<f64>> {
        let (u, v) = (self.point(u)?, self.point(v)?);
        Ok(geometry::mobius_add(&u, &v).map_err(err)?.into_coords())
    }

    fn distance(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        let (u, v) = (self.point(u)?, self.point(v)?);
        geometry::hyp_distance(&u, &v).map_err(err)
    }

    fn conformal_factor(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(geometry::conformal_factor(&self.point(x)?))
    }

    fn __repr__(&self) -> String {
        format!("PoincareBall(c={})", self.curvature.value())
    }
}

/// Gaussian clusters placed along a complete class tree.
#[pyclass(module = "pyhier", frozen)]
struct SyntheticHierarchy {
    inner: data::SyntheticHierarchy,
}

#[pymethods]
impl SyntheticHierarchy {
    #[new]
    #[pyo3(signature = (depth = 3, branching = 2, samples_per_class = 200, feature_dim = 32, cluster_spread = 0.3, seed = 0))]
    fn new(
        depth: usize,
        branching: usize,
        samples_per_class: usize,
        feature_dim: usize,
        cluster_spread: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = GenerateSpec {
            samples_per_class,
            feature_dim,
            cluster_spread,
            seed,
            ..GenerateSpec::complete(depth, branching)
        };
        Ok(SyntheticHierarchy {
            inner: data::generate(spec).map_err(err)?,
        })
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.tree.num_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.dataset.labels.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        let ds = &self.inner.dataset;
        (0..ds.len())
            .map(|i| ds.row(i).iter().map(|&x| x as f64).collect())
            .collect()
    }

    fn class_weight(&self, a: usize, b: usize) -> PyResult<f64> {
        let c = self.inner.tree.num_classes();
        if a >= c || b >= c {
            return Err(PyValueError::new_err(format!("classes must be below {c}")));
        }
        Ok(self.inner.tree.class_weight(a, b))
    }

    fn tree_text(&self) -> String {
        data::format_tree(&self.inner.tree)
    }

    fn save(&self, features_path: &str, tree_path: &str) -> PyResult<()> {
        data::write_features(&self.inner.dataset, features_path.as_ref()).map_err(err)?;
        data::write_tree(&self.inner.tree, tree_path.as_ref()).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.dataset.len()
    }
}

/// Step-wise trainer over a class-disjoint split of a dataset.
#[pyclass(module = "pyhier")]
struct Trainer {
    inner: train::Trainer,
}

#[pymethods]
impl Trainer {
    /// `config` is a flat JSON object; missing keys take their defaults.
    #[new]
    #[pyo3(signature = (data, config = "{}"))]
    fn new(data: &SyntheticHierarchy, config: &str) -> PyResult<Self> {
        let cfg = TrainConfig::from_json(config).map_err(err)?;
        let (tr, te) =
            data::split(&data.inner.dataset, cfg.split_fraction, cfg.split_seed).map_err(err)?;
        Ok(Trainer {
            inner: train::Trainer::new(cfg, tr, te).map_err(err)?,
        })
    }

    #[staticmethod]
    fn resume(path: &str, data: &SyntheticHierarchy) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path.as_ref()).map_err(err)?;
        let cfg = TrainConfig::from_json(&ckpt.config_json).map_err(err)?;
        let (tr, te) =
            data::split(&data.inner.dataset, cfg.split_fraction, cfg.split_seed).map_err(err)?;
        Ok(Trainer {
            inner: train::Trainer::resume(&ckpt, tr, te).map_err(err)?,
        })
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step_count()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch()
    }

    fn is_done(&self) -> bool {
        self.inner.is_done()
    }

    /// Runs one step and returns its `(total, ml, hier_x, hier_p)` losses.
    fn train_step(&mut self) -> PyResult<(f64, f64, f64, f64)> {
        let l = self.inner.train_step().map_err(err)?.losses;
        Ok((l.total, l.ml, l.hier_x, l.hier_p))
    }

    /// Finishes the current epoch and returns its metrics record as JSON.
    fn train_epoch(&mut self) -> PyResult<String> {
        Ok(self.inner.train_epoch().map_err(err)?.to_json())
    }

    /// Trains to the configured epoch count; returns one JSON record per epoch.
    #[pyo3(signature = (out_dir = None))]
    fn fit(&mut self, out_dir: Option<&str>) -> PyResult<Vec<String>> {
        let log = self.inner.fit(out_dir.map(AsRef::as_ref)).map_err(err)?;
        Ok(log.iter().map(|m| m.to_json()).collect())
    }

    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r =
            train::evaluate_recall(&self.inner.model, &self.inner.config, self.inner.test_set())
                .map_err(err)?;
        let d = PyDict::new(py);
        for (k, v) in r {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Ball points of the test split, one row per sample.
    fn test_embeddings(&self) -> PyResult<Vec<Vec<f64>>> {
        let ds = self.inner.test_set();
        let pts = train::embed_points(&self.inner.model, &self.inner.config, &ds.features_f64())
            .map_err(err)?;
        Ok(pts
            .chunks(self.inner.config.embedding_dim)
            .map(<[f64]>::to_vec)
            .collect())
    }

    fn proxy_points(&self) -> Vec<Vec<f64>> {
        train::proxy_points(&self.inner.model, &self.inner.config)
            .chunks(self.inner.config.embedding_dim)
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.checkpoint().save(path.as_ref()).map_err(err)
    }
}

/// Recall@k of `points` on the ball, ranked by hyperbolic distance.
#[pyfunction]
#[pyo3(signature = (points, labels, ks, c = 0.1))]
fn recall_at_k(
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    ks: Vec<usize>,
    c: f64,
) -> PyResult<Vec<f64>> {
    let (flat, dim) = flatten(&points)?;
    Curvature::new(c).map_err(err)?;
    let dist = DistanceMatrix::hyperbolic(&flat, dim, c);
    eval::recall_at_k(&dist, &labels, &ks).map_err(err)
}

/// Dasgupta cost of the tree given by `parents` (None for the root) whose
/// first `leaves` nodes are leaves. `weights` is a `leaves × leaves` matrix.
#[pyfunction]
fn dasgupta_cost(
    parents: Vec<Option<usize>>,
    leaves: usize,
    weights: Vec<Vec<f64>>,
) -> PyResult<f64> {
    if weights.len() != leaves || weights.iter().any(|r| r.len() != leaves) {
        return Err(PyValueError::new_err("weights must be leaves x leaves"));
    }
    let tree = InducedTree::new(parents, leaves).map_err(err)?;
    eval::dasgupta_cost(&tree, |i, j| weights[i][j]).map_err(err)
}

/// Finite-difference battery: `(name, max relative error, passed)` per composite.
#[pyfunction]
#[pyo3(signature = (seed = 0, instances = 100))]
fn gradcheck(seed: u64, instances: usize) -> PyResult<Vec<(String, f64, bool)>> {
    let results = hier::gradcheck::run_battery(seed, instances).map_err(err)?;
    Ok(results
        .iter()
        .map(|r| (r.name.to_string(), r.max_rel_error, r.passed()))
        .collect())
}

type FeatureColumns = (Vec<u64>, Vec<u32>, Vec<Vec<f32>>);

/// Reads a feature file into `(ids, labels, rows)`.
#[pyfunction]
fn read_features(path: &str) -> PyResult<FeatureColumns> {
    let ds: Dataset = data::read_features(path.as_ref()).map_err(err)?;
    let rows = (0..ds.len()).map(|i| ds.row(i).to_vec()).collect();
    Ok((ds.ids, ds.labels, rows))
}

#[pymodule]
fn pyhier(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PoincareBall>()?;
    m.add_class::<SyntheticHierarchy>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(dasgupta_cost, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(read_features, m)?)?;
    Ok(())
}
