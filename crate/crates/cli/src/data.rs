//! Build source/target/third datasets from the resolved configuration.

use infomaxda::synthdata::{
    gen_blob_shift, gen_two_moons, load_csv, rotate_labeled, standardize_features, LabeledSet,
    LoadedSet, UnlabeledSet,
};

use crate::config::{get_bool, get_f64, get_f64_list, get_u64, get_usize, ConfigMap};
use crate::CliError;

pub struct BuiltData {
    pub source: LabeledSet,
    pub target: UnlabeledSet,
    /// Hidden target labels, available to the evaluation path only.
    pub target_labels: Option<Vec<usize>>,
    pub third: Option<LabeledSet>,
}

fn standardize_labeled(set: LabeledSet) -> LabeledSet {
    LabeledSet {
        x: standardize_features(&set.x),
        y: set.y,
        class_count: set.class_count,
    }
}

fn load_csv_checked(path: &str) -> Result<LoadedSet, CliError> {
    let io_result = load_csv(std::path::Path::new(path))
        .map_err(|e| CliError::Io(format!("reading {path}: {e}")))?;
    io_result.map_err(CliError::from)
}

/// Construct the datasets named by `data.*` keys. Each domain is standardized
/// by its own feature statistics when `data.normalize` is on.
pub fn build(map: &ConfigMap) -> Result<BuiltData, CliError> {
    let normalize = get_bool(map, "data.normalize")?;
    let kind = map["data.kind"].as_str();
    let built = match kind {
        "two_moons" => {
            let n = get_usize(map, "data.n")?;
            let noise = get_f64(map, "data.noise")?;
            let seed = get_u64(map, "data.seed")?;
            let src_rot = get_f64(map, "data.source_rotation_deg")?;
            let tgt_rot = get_f64(map, "data.rotation_deg")?;
            let source = rotate_labeled(&gen_two_moons(n, noise, seed)?, src_rot)?;
            let target_full =
                rotate_labeled(&gen_two_moons(n, noise, seed.wrapping_add(100))?, tgt_rot)?;
            let (target, labels) = target_full.hide_labels();
            let third = match map["data.third_rotation_deg"].as_str() {
                "off" | "" => None,
                raw => {
                    let rot: f64 = raw.parse().map_err(|_| {
                        CliError::Validation(format!(
                            "data.third_rotation_deg must be a number or `off`, got `{raw}`"
                        ))
                    })?;
                    Some(rotate_labeled(
                        &gen_two_moons(n, noise, seed.wrapping_add(200))?,
                        rot,
                    )?)
                }
            };
            BuiltData {
                source,
                target,
                target_labels: Some(labels),
                third,
            }
        }
        "blob_shift" => {
            let n = get_usize(map, "data.n")?;
            let dims = get_usize(map, "data.dims")?;
            let classes = get_usize(map, "data.classes")?;
            let shift = get_f64_list(map, "data.shift")?;
            let seed = get_u64(map, "data.seed")?;
            let pair = gen_blob_shift(n, dims, classes, &shift, seed)?;
            BuiltData {
                source: pair.source,
                target: pair.target,
                target_labels: Some(pair.target_labels),
                third: None,
            }
        }
        "csv" => {
            let src_path = map["data.source_path"].as_str();
            let tgt_path = map["data.target_path"].as_str();
            if src_path.is_empty() || tgt_path.is_empty() {
                return Err(CliError::Validation(
                    "data.kind = csv requires data.source_path and data.target_path".into(),
                ));
            }
            let source = match load_csv_checked(src_path)? {
                LoadedSet::Labeled(set) => set,
                LoadedSet::Unlabeled(_) => {
                    return Err(CliError::Validation(format!(
                        "source file {src_path} has no label column"
                    )))
                }
            };
            let (target, target_labels) = match load_csv_checked(tgt_path)? {
                LoadedSet::Labeled(set) => {
                    let (unlabeled, labels) = set.hide_labels();
                    (unlabeled, Some(labels))
                }
                LoadedSet::Unlabeled(set) => (set, None),
            };
            let third = match map["data.third_path"].as_str() {
                "" => None,
                path => match load_csv_checked(path)? {
                    LoadedSet::Labeled(set) => Some(set),
                    LoadedSet::Unlabeled(_) => {
                        return Err(CliError::Validation(format!(
                            "third-domain file {path} has no label column"
                        )))
                    }
                },
            };
            BuiltData {
                source,
                target,
                target_labels,
                third,
            }
        }
        other => {
            return Err(CliError::Validation(format!(
                "data.kind must be two_moons, blob_shift, or csv; got `{other}`"
            )))
        }
    };

    Ok(if normalize {
        BuiltData {
            source: standardize_labeled(built.source),
            target: UnlabeledSet {
                x: standardize_features(&built.target.x),
            },
            target_labels: built.target_labels,
            third: built.third.map(standardize_labeled),
        }
    } else {
        built
    })
}
