//! Python module `malora`: network model, simulator, baselines and learner.

use std::path::PathBuf;
use std::sync::Arc;

use malora_core::analytic::{decode_action as decode, encode_action as encode, Assignment, EeReport, NetworkModel, ACTIONS_PER_ED};
use malora_core::baselines::{self, BaselineParams, BaselineTag};
use malora_core::config::ExperimentConfig;
use malora_core::env::{EnvConfig, Observation};
use malora_core::link::LinkModel;
use malora_core::maac::{AttentionMode, EvalRow, LearnerConfig, TrainConfig, Trainer as CoreTrainer};
use malora_core::radio::{self, PhyConfig, SpreadingFactor, TxPower};
use malora_core::sim::{self, SimConfig};
use malora_core::topology::{grid_gateways, NetworkTopology, Point};
use malora_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Diverged(msg) => PyRuntimeError::new_err(msg),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for malora_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Airtime in seconds of one packet at `sf` under the default PHY settings.
#[pyfunction]
fn time_on_air(sf: u8) -> PyResult<f64> {
    Ok(radio::time_on_air(SpreadingFactor::new(sf).py_err()?, &PhyConfig::default()))
}

#[pyfunction]
fn erf(x: f64) -> f64 {
    malora_core::special::erf(x)
}

/// `(sf, tp_dbm)` for an action index in `0..48`.
#[pyfunction]
fn decode_action(index: usize) -> PyResult<(u8, i32)> {
    let (sf, tp) = decode(index).py_err()?;
    Ok((sf.value(), tp.dbm()))
}

#[pyfunction]
fn encode_action(sf: u8, tp_dbm: i32) -> PyResult<usize> {
    Ok(encode(SpreadingFactor::new(sf).py_err()?, TxPower::new(tp_dbm).py_err()?))
}

fn report_dict<'py>(py: Python<'py>, r: &EeReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("pdr", r.pdr_per_ed.clone())?;
    d.set_item("ee", r.ee_per_ed.clone())?;
    d.set_item("system_ee", r.system_ee)?;
    d.set_item("mean_pdr", r.mean_pdr())?;
    d.set_item("feasible_fraction", r.feasible_fraction())?;
    d.set_item("min_ee", r.min_ee())?;
    Ok(d)
}

fn eval_dict<'py>(py: Python<'py>, e: &EvalRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", e.step)?;
    d.set_item("system_ee", e.system_ee)?;
    d.set_item("mean_pdr", e.mean_pdr)?;
    d.set_item("feasible_fraction", e.feasible_fraction)?;
    d.set_item("min_ee", e.min_ee)?;
    d.set_item("actions", e.actions.clone())?;
    Ok(d)
}

/// Resolved experiment configuration (TOML file plus `key=value` overrides).
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, overrides=Vec::new()))]
    fn new(path: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ExperimentConfig::load_with_overrides(path.as_deref(), &overrides).py_err()?;
        Ok(PyConfig { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().py_err()
    }

    fn hash(&self) -> PyResult<String> {
        self.inner.hash().py_err()
    }
}

/// Analytic network model over fixed device and gateway positions.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    model: Arc<NetworkModel>,
}

#[pymethods]
impl PyNetwork {
    /// Single-channel network with the default radio and link settings.
    #[new]
    #[pyo3(signature = (ed_positions, gateway_positions, area_side_m=8000.0))]
    fn new(ed_positions: Vec<(f64, f64)>, gateway_positions: Vec<(f64, f64)>, area_side_m: f64) -> PyResult<Self> {
        let pts = |v: Vec<(f64, f64)>| v.into_iter().map(|(x, y)| Point::new(x, y)).collect();
        let topo = NetworkTopology::single_channel(pts(ed_positions), pts(gateway_positions), area_side_m);
        let model = NetworkModel::new(topo, PhyConfig::default(), LinkModel::default()).py_err()?;
        Ok(PyNetwork { model: Arc::new(model) })
    }

    /// Uniformly placed devices with gateways on a square grid.
    #[staticmethod]
    #[pyo3(signature = (num_eds, seed, area_side_m=8000.0, gateways_per_side=2))]
    fn random(num_eds: usize, seed: u64, area_side_m: f64, gateways_per_side: usize) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = NetworkTopology::random(&mut rng, num_eds, grid_gateways(gateways_per_side, area_side_m), 1, area_side_m);
        let model = NetworkModel::new(topo, PhyConfig::default(), LinkModel::default()).py_err()?;
        Ok(PyNetwork { model: Arc::new(model) })
    }

    /// Network described by a configuration; `num_eds` overrides its size.
    #[staticmethod]
    #[pyo3(signature = (config, num_eds=None))]
    fn from_config(config: &PyConfig, num_eds: Option<usize>) -> PyResult<Self> {
        let n = num_eds.unwrap_or(config.inner.topology.num_eds);
        Ok(PyNetwork {
            model: Arc::new(config.inner.model(n).py_err()?),
        })
    }

    #[getter]
    fn num_eds(&self) -> usize {
        self.model.num_eds()
    }

    #[getter]
    fn num_gateways(&self) -> usize {
        self.model.num_gateways()
    }

    fn ed_positions(&self) -> Vec<(f64, f64)> {
        self.model.topology.ed_positions.iter().map(|p| (p.x, p.y)).collect()
    }

    /// Per-device PDR and EE plus system totals for one action per device.
    #[pyo3(signature = (actions, pdr_threshold=0.7))]
    fn evaluate<'py>(&self, py: Python<'py>, actions: Vec<usize>, pdr_threshold: f64) -> PyResult<Bound<'py, PyDict>> {
        let a = Assignment::from_actions(&actions).py_err()?;
        report_dict(py, &self.model.evaluate(&a, pdr_threshold).py_err()?)
    }

    /// Monte Carlo delivery ratios for one action per device.
    #[pyo3(signature = (actions, horizon_s=86400.0, replications=2, seed=0))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        actions: Vec<usize>,
        horizon_s: f64,
        replications: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let a = Assignment::from_actions(&actions).py_err()?;
        let cfg = SimConfig {
            horizon_s,
            replications,
            rng_seed: seed,
            ..SimConfig::default()
        };
        let model = self.model.clone();
        let r = py.detach(move || sim::simulate(&model, &a, &cfg)).py_err()?;
        let d = PyDict::new(py);
        d.set_item("pdr", r.pdr_per_ed)?;
        d.set_item("packets_sent", r.packets_sent)?;
        d.set_item("packets_received", r.packets_received)?;
        Ok(d)
    }
}

/// Actions chosen by a named baseline (`random`, `min_sf_max_tp`,
/// `adr_like`, `maxmin_greedy`).
#[pyfunction]
#[pyo3(signature = (tag, network, seed=0, pdr_threshold=0.7))]
fn baseline(tag: &str, network: &PyNetwork, seed: u64, pdr_threshold: f64) -> PyResult<Vec<usize>> {
    let tag: BaselineTag = tag.parse().py_err()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = baselines::assign(tag, &network.model, &BaselineParams::default(), pdr_threshold, &mut rng).py_err()?;
    Ok(a.actions())
}

/// Multi-agent attention actor-critic trainer on one network.
#[pyclass(name = "Trainer")]
struct PyTrainer {
    model: Arc<NetworkModel>,
    inner: CoreTrainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (
        network, seed, total_steps=50_000, eval_interval=2_500, hidden_width=128,
        batch_size=256, update_interval=4, attention="learned"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        network: &PyNetwork,
        seed: u64,
        total_steps: usize,
        eval_interval: usize,
        hidden_width: usize,
        batch_size: usize,
        update_interval: usize,
        attention: &str,
    ) -> PyResult<Self> {
        let attention = match attention {
            "learned" => AttentionMode::Learned,
            "uniform" => AttentionMode::Uniform,
            other => return Err(PyValueError::new_err(format!("attention must be learned or uniform, not {other}"))),
        };
        let learner = LearnerConfig {
            hidden_width,
            batch_size,
            update_interval,
            attention,
            ..LearnerConfig::default()
        };
        let train = TrainConfig {
            total_steps,
            eval_interval,
        };
        let inner = CoreTrainer::new(network.model.clone(), EnvConfig::default(), learner, train, seed).py_err()?;
        Ok(PyTrainer {
            model: network.model.clone(),
            inner,
        })
    }

    /// Resumes from a checkpoint written by `save`.
    #[staticmethod]
    fn load(network: &PyNetwork, path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainer {
            model: network.model.clone(),
            inner: CoreTrainer::load(network.model.clone(), &path).py_err()?,
        })
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.inner.step_count()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    /// Advances up to `steps` environment steps.
    #[pyo3(signature = (steps=1))]
    fn step(&mut self, py: Python<'_>, steps: usize) -> PyResult<usize> {
        let target = self.inner.step_count() + steps;
        let inner = &mut self.inner;
        py.detach(|| inner.run_until(target, None)).py_err()?;
        Ok(self.inner.step_count())
    }

    /// Trains to the step budget; returns the initial and final evaluations.
    fn run<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let inner = &mut self.inner;
        let out = py.detach(|| inner.run(None)).py_err()?;
        let d = PyDict::new(py);
        d.set_item("initial", eval_dict(py, &out.initial)?)?;
        d.set_item("final", eval_dict(py, &out.final_eval)?)?;
        let curve: PyResult<Vec<_>> = out.log.evals.iter().map(|e| eval_dict(py, e)).collect();
        d.set_item("evaluations", curve?)?;
        Ok(d)
    }

    /// Greedy rollout of the current policies.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        eval_dict(py, &self.inner.evaluate().py_err()?)
    }

    /// Each agent's action distribution when the network runs `actions`.
    fn policy_probabilities(&self, actions: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let snapshot = self.inner.policy();
        let a = Assignment::from_actions(&actions).py_err()?;
        let report = self.model.evaluate(&a, snapshot.env_config.pdr_threshold).py_err()?;
        let obs = Observation::from_report(&report);
        obs.iter()
            .zip(&snapshot.actors)
            .map(|(o, actor)| {
                let x = snapshot.normalizer.batch(std::iter::once(&o.to_array()));
                Ok(actor.probabilities(&x).py_err()?.row(0).to_vec())
            })
            .collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py_err()
    }
}

#[pymodule]
fn malora(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ACTIONS_PER_ED", ACTIONS_PER_ED)?;
    m.add_function(wrap_pyfunction!(time_on_air, m)?)?;
    m.add_function(wrap_pyfunction!(erf, m)?)?;
    m.add_function(wrap_pyfunction!(decode_action, m)?)?;
    m.add_function(wrap_pyfunction!(encode_action, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyTrainer>()?;
    Ok(())
}
