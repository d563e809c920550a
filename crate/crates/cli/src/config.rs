//! Flat dotted-key configuration: defaults, optional config file, and
//! command-line `--key value` overrides, merged in that order. The merged map
//! is echoed verbatim into the run manifest and `config.resolved`, which can
//! be fed back through `--config` to reproduce a run bit-for-bit.

use std::collections::BTreeMap;

use infomaxda::trainer::{Ablation, ArchConfig, Estimator, TrainConfig};

use crate::CliError;

pub type ConfigMap = BTreeMap<String, String>;

/// Keys every subcommand understands, with global defaults.
fn base_defaults() -> ConfigMap {
    let mut m = ConfigMap::new();
    for (k, v) in [
        ("train.alpha", "1.0"),
        ("train.beta", "0.01"),
        ("train.gamma", "2.0"),
        ("train.lr", "0.001"),
        ("train.momentum", "0.9"),
        ("train.batch_size", "32"),
        ("train.epochs", "100"),
        ("train.seed", "0"),
        ("train.ablation", "km"),
        ("train.estimator", "two_critic"),
        ("train.hinge_lambda", "2.0"),
        ("train.ema_rate", "off"),
        ("train.critic_grad_clip", "off"),
        ("train.critic_steps", "1"),
        ("train.entropy", "true"),
        ("train.verify_phase_isolation", "false"),
        ("arch.encoder_hidden", "32"),
        ("arch.latent_dim", "4"),
        ("arch.classifier_hidden", ""),
        ("arch.critic_hidden", "64"),
        ("arch.decoder_hidden", "32"),
        ("data.kind", "two_moons"),
        ("data.n", "1000"),
        ("data.noise", "0.1"),
        ("data.source_rotation_deg", "0"),
        ("data.rotation_deg", "45"),
        ("data.third_rotation_deg", "off"),
        ("data.seed", "100"),
        ("data.dims", "2"),
        ("data.classes", "3"),
        ("data.shift", "2,2"),
        ("data.normalize", "true"),
        ("data.source_path", ""),
        ("data.target_path", ""),
        ("data.third_path", ""),
        ("data.rho", "0.9"),
    ] {
        m.insert(k.to_string(), v.to_string());
    }
    m
}

/// Per-subcommand defaults layered over the base.
fn subcommand_defaults(subcommand: &str) -> Vec<(&'static str, &'static str)> {
    match subcommand {
        // The MI-estimation protocol trains critics only; its tuned defaults
        // differ from the adaptation loop's.
        "gaussian-mi" => vec![
            ("train.lr", "0.005"),
            ("train.batch_size", "256"),
            ("train.epochs", "14"),
            ("train.seed", "7"),
            ("arch.critic_hidden", "64,64"),
            ("data.n", "100000"),
            ("data.dims", "1"),
            ("data.seed", "7"),
        ],
        "train" => vec![("train.epochs", "200")],
        "ablate" => vec![("train.epochs", "200"), ("protocol.seeds", "1,2,3,4,5"), ("protocol.jobs", "1")],
        "sweep" => vec![
            ("train.epochs", "60"),
            ("protocol.alphas", "0.01,0.1,1,10,100"),
            ("protocol.betas", "0.0001,0.001,0.01,0.1,1"),
            ("protocol.jobs", "1"),
        ],
        "compare" => vec![("train.epochs", "200"), ("protocol.seeds", "1,2,3,4,5"), ("protocol.jobs", "1")],
        "cross-eval" => vec![
            ("train.epochs", "200"),
            ("data.rotation_deg", "30"),
            ("data.third_rotation_deg", "60"),
        ],
        "oracle" => vec![
            ("protocol.suite", "all"),
            ("protocol.instances", "1000"),
            ("train.seed", "7"),
            ("protocol.tolerance", "default"),
        ],
        "gradcheck" => vec![("protocol.loss", "cls"), ("train.seed", "5")],
        _ => vec![],
    }
}

/// Short flag aliases accepted on the command line.
fn alias(key: &str) -> &str {
    match key {
        "rho" => "data.rho",
        "dims" => "data.dims",
        "n" => "data.n",
        "estimator" => "train.estimator",
        "epochs" => "train.epochs",
        "seed" => "train.seed",
        "data-seed" => "data.seed",
        "batch" => "train.batch_size",
        "lr" => "train.lr",
        "alpha" => "train.alpha",
        "beta" => "train.beta",
        "gamma" => "train.gamma",
        "hinge-lambda" => "train.hinge_lambda",
        "ema-bias-correction" => "train.ema_rate",
        "critic-grad-clip" => "train.critic_grad_clip",
        "ablation" => "train.ablation",
        "seeds" => "protocol.seeds",
        "alphas" => "protocol.alphas",
        "betas" => "protocol.betas",
        "jobs" => "protocol.jobs",
        "suite" => "protocol.suite",
        "instances" => "protocol.instances",
        "tolerance" => "protocol.tolerance",
        "loss" => "protocol.loss",
        "third-rotation" => "data.third_rotation_deg",
        "rotation" => "data.rotation_deg",
        other => other,
    }
}

/// Parse a `key = value` config file (one pair per line, `#` comments).
pub fn parse_config_file(content: &str, path: &str) -> Result<ConfigMap, CliError> {
    let mut map = ConfigMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "{path}:{}: expected `key = value`, found `{line}`",
                idx + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Resolve the full configuration for a subcommand: defaults, then the config
/// file (if any), then CLI overrides. Unknown keys are validation errors.
pub fn resolve(
    subcommand: &str,
    file: Option<&ConfigMap>,
    overrides: &ConfigMap,
) -> Result<ConfigMap, CliError> {
    let mut merged = base_defaults();
    for (k, v) in subcommand_defaults(subcommand) {
        merged.insert(k.to_string(), v.to_string());
    }
    let known: Vec<String> = merged.keys().cloned().collect();
    let apply = |merged: &mut ConfigMap, key: &str, value: &str, origin: &str| -> Result<(), CliError> {
        let canonical = alias(key).to_string();
        if !known.contains(&canonical) && !canonical.starts_with("protocol.") {
            return Err(CliError::Validation(format!(
                "unknown configuration key `{key}` ({origin})"
            )));
        }
        merged.insert(canonical, value.to_string());
        Ok(())
    };
    if let Some(file_map) = file {
        for (k, v) in file_map {
            apply(&mut merged, k, v, "config file")?;
        }
    }
    for (k, v) in overrides {
        apply(&mut merged, k, v, "command line")?;
    }
    Ok(merged)
}

/// Render the resolved map in config-file syntax (sorted, reproducible).
pub fn render(map: &ConfigMap) -> String {
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// Typed accessors
// ---------------------------------------------------------------------------

pub fn get_f64(map: &ConfigMap, key: &str) -> Result<f64, CliError> {
    let raw = &map[key];
    raw.parse()
        .map_err(|_| CliError::Validation(format!("`{key}` must be a number, got `{raw}`")))
}

pub fn get_usize(map: &ConfigMap, key: &str) -> Result<usize, CliError> {
    let raw = &map[key];
    raw.parse()
        .map_err(|_| CliError::Validation(format!("`{key}` must be a non-negative integer, got `{raw}`")))
}

pub fn get_u64(map: &ConfigMap, key: &str) -> Result<u64, CliError> {
    let raw = &map[key];
    raw.parse()
        .map_err(|_| CliError::Validation(format!("`{key}` must be an integer, got `{raw}`")))
}

pub fn get_bool(map: &ConfigMap, key: &str) -> Result<bool, CliError> {
    match map[key].as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(CliError::Validation(format!(
            "`{key}` must be true or false, got `{other}`"
        ))),
    }
}

pub fn get_sizes(map: &ConfigMap, key: &str) -> Result<Vec<usize>, CliError> {
    let raw = map[key].trim();
    if raw.is_empty() {
        return Ok(vec![]);
    }
    raw.split(',')
        .map(|part| {
            part.trim().parse().map_err(|_| {
                CliError::Validation(format!("`{key}` must be a comma list of sizes, got `{raw}`"))
            })
        })
        .collect()
}

pub fn get_f64_list(map: &ConfigMap, key: &str) -> Result<Vec<f64>, CliError> {
    let raw = map[key].trim();
    if raw.is_empty() {
        return Ok(vec![]);
    }
    raw.split(',')
        .map(|part| {
            part.trim().parse().map_err(|_| {
                CliError::Validation(format!("`{key}` must be a comma list of numbers, got `{raw}`"))
            })
        })
        .collect()
}

pub fn get_u64_list(map: &ConfigMap, key: &str) -> Result<Vec<u64>, CliError> {
    let raw = map[key].trim();
    if raw.is_empty() {
        return Ok(vec![]);
    }
    raw.split(',')
        .map(|part| {
            part.trim().parse().map_err(|_| {
                CliError::Validation(format!("`{key}` must be a comma list of integers, got `{raw}`"))
            })
        })
        .collect()
}

/// Build the trainer configuration from the resolved map.
pub fn train_config(map: &ConfigMap) -> Result<TrainConfig, CliError> {
    let ablation: Ablation = map["train.ablation"]
        .parse()
        .map_err(|e| CliError::Validation(format!("train.ablation: {e}")))?;
    let estimator: Estimator = map["train.estimator"]
        .parse()
        .map_err(|e| CliError::Validation(format!("train.estimator: {e}")))?;
    let ema_raw = map["train.ema_rate"].as_str();
    let ema_rate = if ema_raw == "off" || ema_raw.is_empty() {
        None
    } else {
        Some(ema_raw.parse().map_err(|_| {
            CliError::Validation(format!("train.ema_rate must be a rate or `off`, got `{ema_raw}`"))
        })?)
    };
    let clip_raw = map["train.critic_grad_clip"].as_str();
    let critic_grad_clip = if clip_raw == "off" || clip_raw.is_empty() {
        None
    } else {
        Some(clip_raw.parse().map_err(|_| {
            CliError::Validation(format!(
                "train.critic_grad_clip must be a norm or `off`, got `{clip_raw}`"
            ))
        })?)
    };
    let cfg = TrainConfig {
        alpha: get_f64(map, "train.alpha")?,
        beta: get_f64(map, "train.beta")?,
        gamma: get_f64(map, "train.gamma")?,
        lr: get_f64(map, "train.lr")?,
        momentum: get_f64(map, "train.momentum")?,
        batch_size: get_usize(map, "train.batch_size")?,
        max_epochs: get_usize(map, "train.epochs")?,
        seed: get_u64(map, "train.seed")?,
        ablation,
        estimator,
        hinge_lambda: get_f64(map, "train.hinge_lambda")?,
        ema_rate,
        critic_grad_clip,
        critic_steps: get_usize(map, "train.critic_steps")?,
        arch: ArchConfig {
            encoder_hidden: get_sizes(map, "arch.encoder_hidden")?,
            latent_dim: get_usize(map, "arch.latent_dim")?,
            classifier_hidden: get_sizes(map, "arch.classifier_hidden")?,
            critic_hidden: get_sizes(map, "arch.critic_hidden")?,
            decoder_hidden: get_sizes(map, "arch.decoder_hidden")?,
        },
        entropy_enabled: get_bool(map, "train.entropy")?,
        verify_phase_isolation: get_bool(map, "train.verify_phase_isolation")?,
    };
    cfg.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_over_file_and_defaults() {
        let file = parse_config_file("train.alpha = 3.0\ntrain.lr=0.01\n", "test").unwrap();
        let mut cli = ConfigMap::new();
        cli.insert("train.alpha".into(), "7.5".into());
        let merged = resolve("train", Some(&file), &cli).unwrap();
        assert_eq!(merged["train.alpha"], "7.5");
        assert_eq!(merged["train.lr"], "0.01");
        assert_eq!(merged["train.beta"], "0.01");
    }

    #[test]
    fn unknown_keys_are_rejected_with_name() {
        let mut cli = ConfigMap::new();
        cli.insert("train.bogus".into(), "1".into());
        let err = resolve("train", None, &cli).unwrap_err();
        assert!(format!("{err}").contains("train.bogus"));
    }

    #[test]
    fn config_roundtrips_through_render_and_parse() {
        let merged = resolve("train", None, &ConfigMap::new()).unwrap();
        let text = render(&merged);
        let reparsed = parse_config_file(&text, "roundtrip").unwrap();
        let remerged = resolve("train", Some(&reparsed), &ConfigMap::new()).unwrap();
        assert_eq!(merged, remerged);
    }

    #[test]
    fn aliases_map_to_canonical_keys() {
        let mut cli = ConfigMap::new();
        cli.insert("rho".into(), "0.5".into());
        let merged = resolve("gaussian-mi", None, &cli).unwrap();
        assert_eq!(merged["data.rho"], "0.5");
    }
}
