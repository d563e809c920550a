//! The eight subcommands. Every command resolves its configuration, writes
//! its artifacts under the run directory, and reports through the manifest.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde_json::json;

use infomaxda::oracle::{
    dv_inequality_check, elbo_identity_suite, gaussian_mi, gradcheck_loss, infomax_identity_suite,
    CheckReport, LossKind,
};
use infomaxda::synthdata::gen_correlated_gaussians;
use infomaxda::trainer::{
    cross_eval, estimate_mi_run, metrics_to_csv, train, Ablation, Estimator, EvalData, TrainConfig,
};

use crate::artifacts::{ensure_dir, RunManifest};
use crate::config::{
    self, get_f64, get_f64_list, get_u64, get_u64_list, get_usize, render, ConfigMap,
};
use crate::data;
use crate::CliError;

fn write_resolved_config(manifest: &mut RunManifest, map: &ConfigMap) -> Result<(), CliError> {
    manifest.write_artifact("config.resolved", &render(map))
}

fn summary_json(manifest: &mut RunManifest, value: serde_json::Value) -> Result<(), CliError> {
    manifest.write_artifact(
        "summary.json",
        &serde_json::to_string_pretty(&value).expect("summary serializes"),
    )
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let cfg = config::train_config(map)?;
    let built = data::build(map)?;
    let eval = EvalData {
        target_labels: built.target_labels.as_deref(),
        third: built.third.as_ref(),
    };
    let started = Instant::now();
    let model = train(&cfg, &built.source, &built.target, &eval)?;
    let wall = started.elapsed().as_secs_f64();

    manifest.write_artifact("metrics.csv", &metrics_to_csv(&model.metrics))?;
    write_resolved_config(manifest, map)?;
    let last = model.metrics.last();
    summary_json(
        manifest,
        json!({
            "epochs": model.metrics.len(),
            "final_source_acc": last.map(|m| m.source_acc),
            "final_target_acc": last.map(|m| m.target_acc),
            "final_mi_estimate": last.map(|m| m.mi_estimate),
            "wall_time_s": wall,
            "config": map,
        }),
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// gaussian-mi
// ---------------------------------------------------------------------------

pub fn cmd_gaussian_mi(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let rho = get_f64(map, "data.rho")?;
    if !(rho.abs() < 1.0) {
        return Err(CliError::Validation(format!(
            "--rho must satisfy |rho| < 1, got {rho}"
        )));
    }
    let dims = get_usize(map, "data.dims")?;
    if dims == 0 {
        return Err(CliError::Validation("--dims must be >= 1".into()));
    }
    let n = get_usize(map, "data.n")?;
    let cfg = config::train_config(map)?;
    if cfg.estimator == Estimator::Autoencoder {
        return Err(CliError::Validation(
            "--estimator must be two_critic or mine_single for gaussian-mi".into(),
        ));
    }
    let true_mi = gaussian_mi(rho, dims).map_err(CliError::from)?;
    let data_seed = get_u64(map, "data.seed")?;
    let (x, z) = gen_correlated_gaussians(n, dims, rho, data_seed)?;

    let started = Instant::now();
    let outcome = if cfg.max_epochs == 0 {
        None
    } else {
        Some(estimate_mi_run(&cfg, &x, &z)?)
    };
    let wall = started.elapsed().as_secs_f64();

    let mut csv = String::from("epoch,estimate,true_mi\n");
    if let Some(out) = &outcome {
        for p in &out.curve {
            csv.push_str(&format!("{},{},{}\n", p.epoch, p.estimate, true_mi));
        }
    }
    manifest.write_artifact("mi_curve.csv", &csv)?;
    write_resolved_config(manifest, map)?;
    summary_json(
        manifest,
        json!({
            "rho": rho,
            "dims": dims,
            "true_mi": true_mi,
            "final_estimate": outcome.as_ref().and_then(|o| o.final_estimate()),
            "epochs": outcome.as_ref().map_or(0, |o| o.curve.len()),
            "wall_time_s": wall,
            "config": map,
        }),
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// Cell runner: bounded parallelism with deterministic result order
// ---------------------------------------------------------------------------

fn run_cells<C, T, F>(jobs: usize, cells: Vec<C>, run_one: F) -> Result<Vec<T>, CliError>
where
    C: Send + Sync,
    T: Send,
    F: Fn(&C) -> Result<T, CliError> + Sync,
{
    let jobs = jobs.max(1).min(cells.len().max(1));
    if jobs == 1 {
        return cells.iter().map(&run_one).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<T, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let result = run_one(&cells[i]);
                if let Some(slot) = results.lock().expect("cell results lock").get_mut(i) {
                    *slot = Some(result);
                }
            });
        }
    });
    results
        .into_inner()
        .expect("cell results lock")
        .into_iter()
        .map(|slot| slot.expect("every cell ran"))
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

struct CellResult {
    accuracy: f64,
    metrics_csv: String,
}

fn run_train_cell(
    cfg: &TrainConfig,
    built: &data::BuiltData,
    labels: &[usize],
) -> Result<CellResult, CliError> {
    let eval = EvalData {
        target_labels: Some(labels),
        third: None,
    };
    let model = train(cfg, &built.source, &built.target, &eval)?;
    let accuracy = model
        .metrics
        .last()
        .map(|m| m.target_acc)
        .unwrap_or(f64::NAN);
    Ok(CellResult {
        accuracy,
        metrics_csv: metrics_to_csv(&model.metrics),
    })
}

fn require_labels(built: &data::BuiltData, what: &str) -> Result<Vec<usize>, CliError> {
    built.target_labels.clone().ok_or_else(|| {
        CliError::Validation(format!(
            "{what} needs target labels for evaluation; provide a labeled target file"
        ))
    })
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

pub fn cmd_ablate(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let base = config::train_config(map)?;
    let built = data::build(map)?;
    let labels = require_labels(&built, "ablate")?;
    let seeds = get_u64_list(map, "protocol.seeds")?;
    if seeds.is_empty() {
        return Err(CliError::Validation("--seeds must list at least one seed".into()));
    }
    let jobs = get_usize(map, "protocol.jobs")?;

    let cells: Vec<(Ablation, u64)> = Ablation::ALL
        .into_iter()
        .flat_map(|mode| seeds.iter().map(move |&s| (mode, s)))
        .collect();
    let results = run_cells(jobs, cells.clone(), |(mode, seed)| {
        let mut cfg = base.clone();
        cfg.ablation = *mode;
        cfg.seed = *seed;
        run_train_cell(&cfg, &built, &labels)
    })?;

    for ((mode, seed), result) in cells.iter().zip(&results) {
        let cell_dir = manifest.out_dir().join(format!("runs/{}-s{seed}", mode.as_str()));
        ensure_dir(&cell_dir)?;
        crate::artifacts::write_atomic(&cell_dir.join("metrics.csv"), &result.metrics_csv)?;
        manifest.record_artifact(&format!("runs/{}-s{seed}/metrics.csv", mode.as_str()));
    }

    let mut csv = String::from("mode");
    for s in &seeds {
        csv.push_str(&format!(",seed_{s}"));
    }
    csv.push_str(",mean,std\n");
    let mut rows_json = Vec::new();
    for (mi, mode) in Ablation::ALL.iter().enumerate() {
        let accs: Vec<f64> = (0..seeds.len())
            .map(|si| results[mi * seeds.len() + si].accuracy)
            .collect();
        let (mean, std) = mean_std(&accs);
        csv.push_str(mode.as_str());
        for a in &accs {
            csv.push_str(&format!(",{a}"));
        }
        csv.push_str(&format!(",{mean},{std}\n"));
        rows_json.push(json!({
            "mode": mode.as_str(),
            "accuracies": accs,
            "mean": mean,
            "std": std,
        }));
    }
    manifest.write_artifact("ablation.csv", &csv)?;
    write_resolved_config(manifest, map)?;
    summary_json(manifest, json!({ "rows": rows_json, "seeds": seeds, "config": map }))?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn cmd_sweep(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let base = config::train_config(map)?;
    let built = data::build(map)?;
    let labels = require_labels(&built, "sweep")?;
    let alphas = get_f64_list(map, "protocol.alphas")?;
    let betas = get_f64_list(map, "protocol.betas")?;
    if alphas.is_empty() || betas.is_empty() {
        return Err(CliError::Validation("--alphas and --betas must be non-empty".into()));
    }
    let jobs = get_usize(map, "protocol.jobs")?;

    let cells: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    let results = run_cells(jobs, cells.clone(), |(alpha, beta)| {
        let mut cfg = base.clone();
        cfg.alpha = *alpha;
        cfg.beta = *beta;
        cfg.ablation = Ablation::Km;
        run_train_cell(&cfg, &built, &labels)
    })?;

    for ((alpha, beta), result) in cells.iter().zip(&results) {
        let cell_dir = manifest.out_dir().join(format!("runs/a{alpha}-b{beta}"));
        ensure_dir(&cell_dir)?;
        crate::artifacts::write_atomic(&cell_dir.join("metrics.csv"), &result.metrics_csv)?;
        manifest.record_artifact(&format!("runs/a{alpha}-b{beta}/metrics.csv"));
    }

    let mut csv = String::from("alpha\\beta");
    for b in &betas {
        csv.push_str(&format!(",{b}"));
    }
    csv.push('\n');
    let mut matrix = Vec::new();
    for (ai, a) in alphas.iter().enumerate() {
        csv.push_str(&format!("{a}"));
        let mut row = Vec::new();
        for bi in 0..betas.len() {
            let acc = results[ai * betas.len() + bi].accuracy;
            csv.push_str(&format!(",{acc}"));
            row.push(acc);
        }
        csv.push('\n');
        matrix.push(row);
    }
    manifest.write_artifact("matrix.csv", &csv)?;
    write_resolved_config(manifest, map)?;
    summary_json(
        manifest,
        json!({ "alphas": alphas, "betas": betas, "matrix": matrix, "config": map }),
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

pub fn cmd_compare(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let base = config::train_config(map)?;
    let built = data::build(map)?;
    let labels = require_labels(&built, "compare")?;
    let seeds = get_u64_list(map, "protocol.seeds")?;
    if seeds.is_empty() {
        return Err(CliError::Validation("--seeds must list at least one seed".into()));
    }
    let jobs = get_usize(map, "protocol.jobs")?;

    let cells: Vec<(Estimator, u64)> = Estimator::ALL
        .into_iter()
        .flat_map(|e| seeds.iter().map(move |&s| (e, s)))
        .collect();
    let results = run_cells(jobs, cells.clone(), |(estimator, seed)| {
        let mut cfg = base.clone();
        cfg.estimator = *estimator;
        cfg.seed = *seed;
        run_train_cell(&cfg, &built, &labels)
    })?;

    let mut csv = String::from("estimator");
    for s in &seeds {
        csv.push_str(&format!(",seed_{s}"));
    }
    csv.push_str(",mean,std\n");
    let mut rows_json = Vec::new();
    for (ei, estimator) in Estimator::ALL.iter().enumerate() {
        let accs: Vec<f64> = (0..seeds.len())
            .map(|si| results[ei * seeds.len() + si].accuracy)
            .collect();
        let (mean, std) = mean_std(&accs);
        csv.push_str(estimator.as_str());
        for a in &accs {
            csv.push_str(&format!(",{a}"));
        }
        csv.push_str(&format!(",{mean},{std}\n"));
        rows_json.push(json!({
            "estimator": estimator.as_str(),
            "accuracies": accs,
            "mean": mean,
            "std": std,
        }));
    }
    manifest.write_artifact("comparison.csv", &csv)?;
    write_resolved_config(manifest, map)?;
    summary_json(manifest, json!({ "rows": rows_json, "seeds": seeds, "config": map }))?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// cross-eval
// ---------------------------------------------------------------------------

pub fn cmd_cross_eval(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let cfg = config::train_config(map)?;
    let built = data::build(map)?;
    let labels = require_labels(&built, "cross-eval")?;
    let third = built.third.as_ref().ok_or_else(|| {
        CliError::Validation(
            "cross-eval needs a third domain: set data.third_rotation_deg or data.third_path".into(),
        )
    })?;
    let eval = EvalData {
        target_labels: Some(&labels),
        third: Some(third),
    };
    let model = train(&cfg, &built.source, &built.target, &eval)?;
    let outcome = cross_eval(&model, third)?;

    let mut csv = String::from("epoch,target_acc,third_acc\n");
    for (epoch, (t, th)) in outcome
        .target_curve
        .iter()
        .zip(&outcome.third_curve)
        .enumerate()
    {
        csv.push_str(&format!("{epoch},{t},{th}\n"));
    }
    manifest.write_artifact("curves.csv", &csv)?;
    write_resolved_config(manifest, map)?;
    summary_json(
        manifest,
        json!({
            "third_acc": outcome.third_acc,
            "pearson_r": outcome.pearson_r,
            "pearson_unavailable_reason": outcome.pearson_unavailable_reason,
            "final_target_acc": outcome.target_curve.last(),
            "config": map,
        }),
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

pub fn cmd_oracle(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let suite = map["protocol.suite"].as_str();
    let instances = get_usize(map, "protocol.instances")?;
    if instances == 0 {
        return Err(CliError::Validation("--instances must be >= 1".into()));
    }
    let seed = get_u64(map, "train.seed")?;
    let tol_override = match map["protocol.tolerance"].as_str() {
        "default" => None,
        raw => Some(raw.parse::<f64>().map_err(|_| {
            CliError::Validation(format!("--tolerance must be a number, got `{raw}`"))
        })?),
    };

    let mut reports: Vec<CheckReport> = Vec::new();
    let tol = |default: f64| tol_override.unwrap_or(default);
    match suite {
        "elbo" => reports.push(elbo_identity_suite(instances, seed, tol(1e-9))?),
        "infomax" => reports.push(infomax_identity_suite(instances, seed, tol(1e-12))?),
        "dv" => reports.push(dv_inequality_check(instances, seed, tol(1e-12))?),
        "all" => {
            reports.push(elbo_identity_suite(instances, seed, tol(1e-9))?);
            reports.push(infomax_identity_suite(instances, seed, tol(1e-12))?);
            reports.push(dv_inequality_check(instances, seed, tol(1e-12))?);
        }
        other => {
            return Err(CliError::Validation(format!(
                "--suite must be elbo, infomax, dv, or all; got `{other}`"
            )))
        }
    }

    for report in &reports {
        println!("{}", serde_json::to_string(report).expect("report serializes"));
    }
    manifest.write_artifact(
        "oracle_report.json",
        &serde_json::to_string_pretty(&reports).expect("reports serialize"),
    )?;
    write_resolved_config(manifest, map)?;
    Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

pub fn cmd_gradcheck(map: &ConfigMap, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let loss: LossKind = map["protocol.loss"]
        .parse()
        .map_err(|e: infomaxda::Error| CliError::Validation(e.to_string()))?;
    let seed = get_u64(map, "train.seed")?;
    let report = gradcheck_loss(loss, seed, 1e-5, 1e-4)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    manifest.write_artifact(
        "gradcheck_report.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_resolved_config(manifest, map)?;
    Ok(if report.passed { 0 } else { 1 })
}
