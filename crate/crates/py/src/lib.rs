//! Python bindings for the core estimators, oracles, and training loop.
//!
//! Build with `cargo build --release -p infomaxda-py`, then rename
//! `libinfomaxda_py.so` to `infomaxda_py.so` on the Python path (see
//! `python/smoke_test.py`).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use infomaxda::numerics::Tensor2D;
use infomaxda::oracle;
use infomaxda::synthdata;
use infomaxda::trainer;

fn to_py_err(e: infomaxda::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn tensor_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Tensor2D> {
    Tensor2D::from_nested(&rows).map_err(to_py_err)
}

fn tensor_to_rows(t: &Tensor2D) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Exact MI of `dims` correlated-Gaussian coordinate pairs, in nats.
#[pyfunction]
fn gaussian_mi(rho: f64, dims: usize) -> PyResult<f64> {
    oracle::gaussian_mi(rho, dims).map_err(to_py_err)
}

/// Closed-form KL between diagonal Gaussians.
#[pyfunction]
fn gaussian_kld(mu1: Vec<f64>, var1: Vec<f64>, mu2: Vec<f64>, var2: Vec<f64>) -> PyResult<f64> {
    oracle::gaussian_kld(&mu1, &var1, &mu2, &var2).map_err(to_py_err)
}

/// Exact MI of a finite joint distribution given as a row-major matrix.
#[pyfunction]
fn discrete_mi(probs: Vec<Vec<f64>>) -> PyResult<f64> {
    let nx = probs.len();
    let nz = probs.first().map_or(0, Vec::len);
    let joint =
        oracle::DiscreteJoint::new(nx, nz, probs.concat()).map_err(to_py_err)?;
    Ok(oracle::discrete_mi(&joint))
}

#[pyfunction]
fn pearson_corr(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    oracle::pearson_corr(&a, &b).map_err(to_py_err)
}

/// Two interleaved half-circles with Gaussian noise: `(points, labels)`.
#[pyfunction]
fn two_moons(n: usize, noise: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let set = synthdata::gen_two_moons(n, noise, seed).map_err(to_py_err)?;
    Ok((tensor_to_rows(&set.x), set.y))
}

/// Correlated Gaussian pairs `(x, z)` with known ground-truth MI.
#[pyfunction]
fn correlated_gaussians(
    n: usize,
    dims: usize,
    rho: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (x, z) = synthdata::gen_correlated_gaussians(n, dims, rho, seed).map_err(to_py_err)?;
    Ok((tensor_to_rows(&x), tensor_to_rows(&z)))
}

fn report_to_dict<'py>(py: Python<'py>, r: &oracle::CheckReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("suite", &r.suite)?;
    d.set_item("instances_run", r.instances_run)?;
    d.set_item("max_abs_violation", r.max_abs_violation)?;
    d.set_item("worst_case_seed", r.worst_case_seed)?;
    d.set_item("tolerance", r.tolerance)?;
    d.set_item("passed", r.passed)?;
    d.set_item("status", &r.status)?;
    Ok(d)
}

/// Run one exact-oracle suite: "elbo", "infomax", or "dv".
#[pyfunction]
fn oracle_suite<'py>(
    py: Python<'py>,
    suite: &str,
    instances: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = match suite {
        "elbo" => oracle::elbo_identity_suite(instances, seed, 1e-9),
        "infomax" => oracle::infomax_identity_suite(instances, seed, 1e-12),
        "dv" => oracle::dv_inequality_check(instances, seed, 1e-12),
        other => {
            return Err(PyValueError::new_err(format!(
                "suite must be elbo, infomax, or dv; got `{other}`"
            )))
        }
    }
    .map_err(to_py_err)?;
    report_to_dict(py, &report)
}

/// Finite-difference check of one loss ("cls", "kld", "ent", "mi",
/// "dv_single", "recon").
#[pyfunction]
fn gradcheck<'py>(py: Python<'py>, loss: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let kind: oracle::LossKind = loss.parse().map_err(to_py_err)?;
    let report = oracle::gradcheck_loss(kind, seed, 1e-5, 1e-4).map_err(to_py_err)?;
    report_to_dict(py, &report)
}

fn parse_estimator(name: &str) -> PyResult<trainer::Estimator> {
    name.parse().map_err(to_py_err)
}

/// Train MI critics on correlated Gaussian pairs and return the per-epoch
/// held-out estimate curve next to the closed-form ground truth.
#[pyfunction]
#[pyo3(signature = (rho, dims=1, n=100_000, epochs=14, seed=7, estimator="two_critic"))]
fn estimate_gaussian_mi<'py>(
    py: Python<'py>,
    rho: f64,
    dims: usize,
    n: usize,
    epochs: usize,
    seed: u64,
    estimator: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let (x, z) = synthdata::gen_correlated_gaussians(n, dims, rho, seed).map_err(to_py_err)?;
    let cfg = trainer::TrainConfig {
        lr: 0.005,
        batch_size: 256,
        max_epochs: epochs,
        seed,
        estimator: parse_estimator(estimator)?,
        hinge_lambda: 2.0,
        arch: trainer::ArchConfig {
            critic_hidden: vec![64, 64],
            ..trainer::ArchConfig::default()
        },
        ..trainer::TrainConfig::default()
    };
    let outcome = trainer::estimate_mi_run(&cfg, &x, &z).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("true_mi", oracle::gaussian_mi(rho, dims).map_err(to_py_err)?)?;
    d.set_item("final_estimate", outcome.final_estimate())?;
    d.set_item(
        "curve",
        outcome
            .curve
            .iter()
            .map(|p| (p.epoch, p.estimate))
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// One adaptation run on the rotated-moons task; returns final accuracies and
/// the per-epoch metric curves.
#[pyfunction]
#[pyo3(signature = (rotation_deg=45.0, n=1000, noise=0.1, epochs=100, seed=0, ablation="km", data_seed=100))]
#[allow(clippy::too_many_arguments)]
fn train_moons<'py>(
    py: Python<'py>,
    rotation_deg: f64,
    n: usize,
    noise: f64,
    epochs: usize,
    seed: u64,
    ablation: &str,
    data_seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut source = synthdata::gen_two_moons(n, noise, data_seed).map_err(to_py_err)?;
    source.x = synthdata::standardize_features(&source.x);
    let mut target_full = synthdata::rotate_labeled(
        &synthdata::gen_two_moons(n, noise, data_seed.wrapping_add(100)).map_err(to_py_err)?,
        rotation_deg,
    )
    .map_err(to_py_err)?;
    target_full.x = synthdata::standardize_features(&target_full.x);
    let (target, labels) = target_full.hide_labels();

    let cfg = trainer::TrainConfig {
        max_epochs: epochs,
        seed,
        ablation: ablation.parse().map_err(to_py_err)?,
        ..trainer::TrainConfig::default()
    };
    let eval = trainer::EvalData {
        target_labels: Some(&labels),
        third: None,
    };
    let model = trainer::train(&cfg, &source, &target, &eval).map_err(to_py_err)?;

    let d = PyDict::new(py);
    let last = model.metrics.last();
    d.set_item("final_source_acc", last.map(|m| m.source_acc))?;
    d.set_item("final_target_acc", last.map(|m| m.target_acc))?;
    d.set_item("final_mi_estimate", last.map(|m| m.mi_estimate))?;
    d.set_item(
        "source_acc",
        model.metrics.iter().map(|m| m.source_acc).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "target_acc",
        model.metrics.iter().map(|m| m.target_acc).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "mi_estimate",
        model.metrics.iter().map(|m| m.mi_estimate).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Moment-matched latent KL between two sample batches.
#[pyfunction]
fn latent_kld(z_source: Vec<Vec<f64>>, z_target: Vec<Vec<f64>>) -> PyResult<f64> {
    let zs = tensor_from_rows(z_source)?;
    let zt = tensor_from_rows(z_target)?;
    Ok(infomaxda::losses::latent_kld(&zs, &zt)
        .map_err(to_py_err)?
        .value)
}

#[pymodule]
fn infomaxda_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_mi, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kld, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_mi, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_corr, m)?)?;
    m.add_function(wrap_pyfunction!(two_moons, m)?)?;
    m.add_function(wrap_pyfunction!(correlated_gaussians, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_suite, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_gaussian_mi, m)?)?;
    m.add_function(wrap_pyfunction!(train_moons, m)?)?;
    m.add_function(wrap_pyfunction!(latent_kld, m)?)?;
    Ok(())
}
