//! Deterministic synthetic domain generators and flat-file ingestion.
//!
//! Every generator is a pure function of its parameters and seed; the same
//! call always produces byte-identical data. Hidden target labels never
//! travel with the unlabeled set — the trainer only ever sees features.

use crate::error::{dim_mismatch, Error, Result};
use crate::numerics::{Rng, Tensor2D};

/// Labeled sample set (the source domain, or an evaluation-only view).
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub x: Tensor2D,
    pub y: Vec<usize>,
    pub class_count: usize,
}

impl LabeledSet {
    pub fn new(x: Tensor2D, y: Vec<usize>, class_count: usize) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(dim_mismatch("LabeledSet rows", x.rows(), y.len()));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidArg("LabeledSet must be non-empty".into()));
        }
        if let Some(row) = y.iter().position(|&c| c >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: y[row],
                classes: class_count,
                row,
            });
        }
        Ok(LabeledSet { x, y, class_count })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Split into the trainer-visible unlabeled view and the held-back labels.
    pub fn hide_labels(self) -> (UnlabeledSet, Vec<usize>) {
        (UnlabeledSet { x: self.x }, self.y)
    }
}

/// Unlabeled sample set (the target domain as the trainer sees it).
#[derive(Debug, Clone)]
pub struct UnlabeledSet {
    pub x: Tensor2D,
}

impl UnlabeledSet {
    pub fn new(x: Tensor2D) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::InvalidArg("UnlabeledSet must be non-empty".into()));
        }
        Ok(UnlabeledSet { x })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

/// Which synthetic task to generate, with its parameters.
#[derive(Debug, Clone)]
pub enum DomainSpec {
    TwoMoons {
        n: usize,
        noise: f64,
        rotation_deg: f64,
        seed: u64,
    },
    BlobShift {
        n: usize,
        dims: usize,
        classes: usize,
        shift: Vec<f64>,
        seed: u64,
    },
    CorrelatedGaussian {
        n: usize,
        dims: usize,
        rho: f64,
        seed: u64,
    },
}

impl DomainSpec {
    /// Check the parameter ranges for this kind without generating anything.
    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::TwoMoons { n, noise, .. } => {
                if *n < 2 {
                    return Err(Error::InvalidArg(format!("two_moons needs n >= 2, got {n}")));
                }
                if *noise < 0.0 {
                    return Err(Error::InvalidArg(format!("noise must be >= 0, got {noise}")));
                }
            }
            DomainSpec::BlobShift {
                n,
                dims,
                classes,
                shift,
                ..
            } => {
                if *classes < 2 || *dims == 0 || *n < *classes {
                    return Err(Error::InvalidArg(
                        "blob_shift needs classes >= 2, dims >= 1, n >= classes".into(),
                    ));
                }
                if shift.len() != *dims {
                    return Err(dim_mismatch("blob_shift shift", *dims, shift.len()));
                }
            }
            DomainSpec::CorrelatedGaussian { n, dims, rho, .. } => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::InvalidArg(format!("|rho| must be < 1, got {rho}")));
                }
                if *n == 0 || *dims == 0 {
                    return Err(Error::InvalidArg("n and dims must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// `n` points on two interleaved half-circles plus isotropic Gaussian noise.
/// Class 0 sits on the upper arc centered at the origin, class 1 on the
/// lower arc centered at (1, 0.5). Classes are balanced (ceil/floor split),
/// arc positions are evenly spaced, only the noise consumes the seed.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledSet> {
    if n < 2 {
        return Err(Error::InvalidArg(format!("two_moons needs n >= 2, got {n}")));
    }
    if noise < 0.0 {
        return Err(Error::InvalidArg(format!("noise must be >= 0, got {noise}")));
    }
    let n0 = n.div_ceil(2);
    let n1 = n / 2;
    let mut rng = Rng::substream(seed, 1);
    let mut values = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    let arc = |k: usize, count: usize| -> f64 {
        if count == 1 {
            0.0
        } else {
            std::f64::consts::PI * k as f64 / (count - 1) as f64
        }
    };
    for k in 0..n0 {
        let t = arc(k, n0);
        values.push(t.cos() + noise * rng.normal());
        values.push(t.sin() + noise * rng.normal());
        labels.push(0);
    }
    for k in 0..n1 {
        let t = arc(k, n1);
        values.push(1.0 - t.cos() + noise * rng.normal());
        values.push(0.5 - t.sin() + noise * rng.normal());
        labels.push(1);
    }
    LabeledSet::new(Tensor2D::new(n, 2, values)?, labels, 2)
}

fn rotate_tensor(x: &Tensor2D, angle_degrees: f64) -> Result<Tensor2D> {
    if x.cols() != 2 {
        return Err(dim_mismatch("rotate", 2usize, x.cols()));
    }
    let theta = angle_degrees.to_radians();
    let (s, c) = theta.sin_cos();
    let mut out = Tensor2D::zeros(x.rows(), 2);
    for r in 0..x.rows() {
        let (px, py) = (x.get(r, 0), x.get(r, 1));
        out.set(r, 0, c * px - s * py);
        out.set(r, 1, s * px + c * py);
    }
    Ok(out)
}

/// Rotate every 2-D point about the origin; labels are untouched.
pub fn rotate_labeled(set: &LabeledSet, angle_degrees: f64) -> Result<LabeledSet> {
    Ok(LabeledSet {
        x: rotate_tensor(&set.x, angle_degrees)?,
        y: set.y.clone(),
        class_count: set.class_count,
    })
}

pub fn rotate_unlabeled(set: &UnlabeledSet, angle_degrees: f64) -> Result<UnlabeledSet> {
    Ok(UnlabeledSet {
        x: rotate_tensor(&set.x, angle_degrees)?,
    })
}

/// Source/target pair of unit-variance Gaussian blobs. The target re-samples
/// the same seeded class centers translated by `shift`; its labels are
/// returned separately and must stay out of the training path.
pub struct BlobShiftPair {
    pub source: LabeledSet,
    pub target: UnlabeledSet,
    pub target_labels: Vec<usize>,
}

pub fn gen_blob_shift(
    n: usize,
    dims: usize,
    classes: usize,
    shift: &[f64],
    seed: u64,
) -> Result<BlobShiftPair> {
    if classes < 2 {
        return Err(Error::InvalidArg(format!("blob_shift needs >= 2 classes, got {classes}")));
    }
    if dims == 0 {
        return Err(Error::InvalidArg("blob_shift needs dims >= 1".into()));
    }
    if shift.len() != dims {
        return Err(dim_mismatch("blob_shift shift", dims, shift.len()));
    }
    if n < classes {
        return Err(Error::InvalidArg(format!(
            "blob_shift needs n >= classes, got n={n} classes={classes}"
        )));
    }
    let mut center_rng = Rng::substream(seed, 2);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dims).map(|_| 3.0 * center_rng.normal()).collect())
        .collect();

    let draw = |rng: &mut Rng, offset: &[f64]| -> (Vec<f64>, Vec<usize>) {
        let mut values = Vec::with_capacity(n * dims);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            for j in 0..dims {
                values.push(centers[c][j] + offset[j] + rng.normal());
            }
            labels.push(c);
        }
        (values, labels)
    };

    let zero = vec![0.0; dims];
    let mut src_rng = Rng::substream(seed, 3);
    let (src_values, src_labels) = draw(&mut src_rng, &zero);
    let mut tgt_rng = Rng::substream(seed, 4);
    let (tgt_values, tgt_labels) = draw(&mut tgt_rng, shift);

    Ok(BlobShiftPair {
        source: LabeledSet::new(Tensor2D::new(n, dims, src_values)?, src_labels, classes)?,
        target: UnlabeledSet::new(Tensor2D::new(n, dims, tgt_values)?)?,
        target_labels: tgt_labels,
    })
}

/// Paired samples where each coordinate of `(x, z)` is a standard bivariate
/// normal with correlation `rho`, independent across dimensions. The exact
/// mutual information is `oracle::gaussian_mi(rho, dims)`.
pub fn gen_correlated_gaussians(
    n: usize,
    dims: usize,
    rho: f64,
    seed: u64,
) -> Result<(Tensor2D, Tensor2D)> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArg(format!("|rho| must be < 1, got {rho}")));
    }
    if n == 0 || dims == 0 {
        return Err(Error::InvalidArg("n and dims must be >= 1".into()));
    }
    let mut rng = Rng::substream(seed, 5);
    let scale = (1.0 - rho * rho).sqrt();
    let mut xs = Vec::with_capacity(n * dims);
    let mut zs = Vec::with_capacity(n * dims);
    for _ in 0..n {
        for _ in 0..dims {
            let a = rng.normal();
            let b = rng.normal();
            xs.push(a);
            zs.push(rho * a + scale * b);
        }
    }
    Ok((Tensor2D::new(n, dims, xs)?, Tensor2D::new(n, dims, zs)?))
}

/// Either kind of set, as parsed from a CSV file.
#[derive(Debug)]
pub enum LoadedSet {
    Labeled(LabeledSet),
    Unlabeled(UnlabeledSet),
}

/// Parse a CSV with header `f0,...,f{d-1}[,label]`. A trailing integer
/// `label` column yields a labeled set. UTF-8, comma-separated, `.` decimal
/// point, no quoting.
pub fn load_csv(path: &std::path::Path) -> std::io::Result<Result<LoadedSet>> {
    let content = std::fs::read_to_string(path)?;
    Ok(parse_csv(&content))
}

pub fn parse_csv(content: &str) -> Result<LoadedSet> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedData {
        line: 1,
        detail: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let labeled = cols.last() == Some(&"label");
    let d = if labeled { cols.len() - 1 } else { cols.len() };
    if d == 0 {
        return Err(Error::MalformedData {
            line: 1,
            detail: "no feature columns in header".into(),
        });
    }
    for (j, name) in cols.iter().take(d).enumerate() {
        let expected = format!("f{j}");
        if *name != expected {
            return Err(Error::MalformedData {
                line: 1,
                detail: format!("expected header column `{expected}`, found `{name}`"),
            });
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::MalformedData {
                line: line_no,
                detail: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        for field in fields.iter().take(d) {
            let v: f64 = field.parse().map_err(|_| Error::MalformedData {
                line: line_no,
                detail: format!("cannot parse `{field}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedData {
                    line: line_no,
                    detail: format!("non-finite feature value `{field}`"),
                });
            }
            values.push(v);
        }
        if labeled {
            let raw = fields[d];
            let label: usize = raw.parse().map_err(|_| Error::MalformedData {
                line: line_no,
                detail: format!("cannot parse label `{raw}` as a non-negative integer"),
            })?;
            labels.push(label);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::MalformedData {
            line: 2,
            detail: "no data rows".into(),
        });
    }
    let x = Tensor2D::new(rows, d, values)?;
    if labeled {
        let class_count = labels.iter().copied().max().unwrap() + 1;
        Ok(LoadedSet::Labeled(LabeledSet::new(x, labels, class_count)?))
    } else {
        Ok(LoadedSet::Unlabeled(UnlabeledSet::new(x)?))
    }
}

/// Standardize every feature to zero mean and unit variance over the given
/// set (degenerate features are left centered). Applied per domain before
/// training, this is the input-normalization step of the training recipe;
/// evaluation data must be standardized the same way (by its own statistics,
/// matching the transductive protocol).
pub fn standardize_features(x: &Tensor2D) -> Tensor2D {
    let (n, d) = (x.rows(), x.cols());
    let means = x.col_means();
    let mut stds = vec![0.0; d];
    for r in 0..n {
        for (j, v) in x.row(r).iter().enumerate() {
            let c = v - means[j];
            stds[j] += c * c;
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let mut out = x.clone();
    for r in 0..n {
        for j in 0..d {
            out.set(r, j, (x.get(r, j) - means[j]) / stds[j]);
        }
    }
    out
}

/// Epoch of shuffled contiguous batches. The epoch order is a Fisher-Yates
/// shuffle of the row indices; a final batch smaller than 2 rows is dropped
/// (variance estimation needs at least 2).
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::InvalidArg(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    let mut batches = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        if end - start >= 2 {
            batches.push(order[start..end].to_vec());
        }
        start = end;
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_zero_noise_lie_on_canonical_arcs() {
        let set = gen_two_moons(4, 0.0, 123).unwrap();
        for i in 0..set.len() {
            let (px, py) = (set.x.get(i, 0), set.x.get(i, 1));
            let r = if set.y[i] == 0 {
                (px * px + py * py).sqrt()
            } else {
                let (dx, dy) = (px - 1.0, py - 0.5);
                (dx * dx + dy * dy).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12, "point {i} off its arc: r={r}");
        }
    }

    #[test]
    fn moons_same_seed_identical() {
        let a = gen_two_moons(100, 0.1, 7).unwrap();
        let b = gen_two_moons(100, 0.1, 7).unwrap();
        assert_eq!(a.x.values(), b.x.values());
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn moons_balanced_classes_and_odd_n() {
        let set = gen_two_moons(101, 0.0, 0).unwrap();
        let zeros = set.y.iter().filter(|&&c| c == 0).count();
        assert_eq!(zeros, 51);
        assert_eq!(set.len() - zeros, 50);
    }

    #[test]
    fn moons_class_means_near_analytic_centroids() {
        // Continuous-arc centroids: class 0 at (0, 2/pi), class 1 at
        // (1, 0.5 - 2/pi). Monte-Carlo tolerance 3 sigma / sqrt(n_class),
        // plus slack for the evenly-spaced-arc vs integral difference.
        let n = 1000;
        let noise = 0.1;
        let set = gen_two_moons(n, noise, 42).unwrap();
        let two_over_pi = 2.0 / std::f64::consts::PI;
        let tol = 3.0 * noise / (n as f64 / 2.0).sqrt() + 0.01;
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [0usize; 2];
        for i in 0..set.len() {
            sums[set.y[i]][0] += set.x.get(i, 0);
            sums[set.y[i]][1] += set.x.get(i, 1);
            counts[set.y[i]] += 1;
        }
        let m0 = [sums[0][0] / counts[0] as f64, sums[0][1] / counts[0] as f64];
        let m1 = [sums[1][0] / counts[1] as f64, sums[1][1] / counts[1] as f64];
        assert!((m0[0] - 0.0).abs() < tol, "class0 x mean {}", m0[0]);
        assert!((m0[1] - two_over_pi).abs() < tol, "class0 y mean {}", m0[1]);
        assert!((m1[0] - 1.0).abs() < tol, "class1 x mean {}", m1[0]);
        assert!((m1[1] - (0.5 - two_over_pi)).abs() < tol, "class1 y mean {}", m1[1]);
    }

    #[test]
    fn rotate_identity_periodicity_and_quarter_turn() {
        let set = gen_two_moons(10, 0.05, 3).unwrap();
        let same = rotate_labeled(&set, 0.0).unwrap();
        assert_eq!(same.x.values(), set.x.values());

        let full = rotate_labeled(&set, 360.0).unwrap();
        for (a, b) in full.x.values().iter().zip(set.x.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let point = LabeledSet::new(Tensor2D::new(1, 2, vec![1.0, 0.0]).unwrap(), vec![0], 1).unwrap();
        let turned = rotate_labeled(&point, 90.0).unwrap();
        assert!(turned.x.get(0, 0).abs() < 1e-12);
        assert!((turned.x.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotate_rejects_non_planar_data() {
        let set = LabeledSet::new(Tensor2D::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap(), vec![0], 1).unwrap();
        assert!(rotate_labeled(&set, 10.0).is_err());
    }

    #[test]
    fn blob_shift_seed_determinism_and_mean_shift() {
        let shift = vec![2.0, -1.0];
        let a = gen_blob_shift(600, 2, 3, &shift, 11).unwrap();
        let b = gen_blob_shift(600, 2, 3, &shift, 11).unwrap();
        assert_eq!(a.source.x.values(), b.source.x.values());
        assert_eq!(a.target.x.values(), b.target.x.values());
        assert_eq!(a.target_labels, b.target_labels);

        // Per-class target mean ~ source mean + shift within 3 sigma / sqrt(n/C).
        let tol = 3.0 / (600.0f64 / 3.0).sqrt();
        for c in 0..3 {
            for j in 0..2 {
                let src_mean: f64 = (0..600)
                    .filter(|&i| a.source.y[i] == c)
                    .map(|i| a.source.x.get(i, j))
                    .sum::<f64>()
                    / 200.0;
                let tgt_mean: f64 = (0..600)
                    .filter(|&i| a.target_labels[i] == c)
                    .map(|i| a.target.x.get(i, j))
                    .sum::<f64>()
                    / 200.0;
                assert!(
                    (tgt_mean - src_mean - shift[j]).abs() < 2.0 * tol,
                    "class {c} dim {j}: {tgt_mean} vs {src_mean} + {}",
                    shift[j]
                );
            }
        }
    }

    #[test]
    fn blob_shift_zero_shift_means_agree() {
        let pair = gen_blob_shift(900, 2, 3, &[0.0, 0.0], 5).unwrap();
        let tol = 3.0 / (900.0f64 / 3.0).sqrt();
        for j in 0..2 {
            let sm: f64 = pair.source.x.values().iter().skip(j).step_by(2).sum::<f64>() / 900.0;
            let tm: f64 = pair.target.x.values().iter().skip(j).step_by(2).sum::<f64>() / 900.0;
            assert!((sm - tm).abs() < 2.0 * tol);
        }
    }

    #[test]
    fn correlated_gaussians_empirical_correlation() {
        let (x, z) = gen_correlated_gaussians(100_000, 1, 0.9, 17).unwrap();
        let corr = empirical_corr(&x, &z, 0);
        assert!((0.89..=0.91).contains(&corr), "corr {corr}");

        let (x0, z0) = gen_correlated_gaussians(10_000, 2, 0.0, 19).unwrap();
        for j in 0..2 {
            let c = empirical_corr(&x0, &z0, j);
            assert!(c.abs() < 3.0 / (10_000f64).sqrt() + 0.01, "dim {j} corr {c}");
        }

        let (a1, b1) = gen_correlated_gaussians(100, 1, 0.5, 23).unwrap();
        let (a2, b2) = gen_correlated_gaussians(100, 1, 0.5, 23).unwrap();
        assert_eq!(a1.values(), a2.values());
        assert_eq!(b1.values(), b2.values());
        assert!(gen_correlated_gaussians(10, 1, 1.0, 0).is_err());
    }

    fn empirical_corr(x: &Tensor2D, z: &Tensor2D, dim: usize) -> f64 {
        let n = x.rows() as f64;
        let mx: f64 = (0..x.rows()).map(|r| x.get(r, dim)).sum::<f64>() / n;
        let mz: f64 = (0..z.rows()).map(|r| z.get(r, dim)).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vz = 0.0;
        for r in 0..x.rows() {
            let (a, b) = (x.get(r, dim) - mx, z.get(r, dim) - mz);
            cov += a * b;
            vx += a * a;
            vz += b * b;
        }
        cov / (vx.sqrt() * vz.sqrt())
    }

    #[test]
    fn csv_labeled_roundtrip() {
        let parsed = parse_csv("f0,f1,label\n0.5,-0.5,1\n").unwrap();
        match parsed {
            LoadedSet::Labeled(set) => {
                assert_eq!(set.len(), 1);
                assert_eq!(set.dim(), 2);
                assert_eq!(set.y, vec![1]);
                assert_eq!(set.x.row(0), &[0.5, -0.5]);
            }
            _ => panic!("expected labeled set"),
        }
    }

    #[test]
    fn csv_without_label_column_is_unlabeled() {
        let parsed = parse_csv("f0,f1\n1.0,2.0\n3.0,4.0\n").unwrap();
        match parsed {
            LoadedSet::Unlabeled(set) => assert_eq!(set.len(), 2),
            _ => panic!("expected unlabeled set"),
        }
    }

    #[test]
    fn csv_reports_bad_row_with_line_number() {
        let err = parse_csv("f0,f1\n1.0,2.0,3.0\n").unwrap_err();
        match err {
            Error::MalformedData { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
        let err = parse_csv("f0,f1,label\n1.0,2.0,notint\n").unwrap_err();
        match err {
            Error::MalformedData { line, detail } => {
                assert_eq!(line, 2);
                assert!(detail.contains("label"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn domain_spec_validates_per_kind() {
        assert!(DomainSpec::TwoMoons { n: 10, noise: 0.1, rotation_deg: 45.0, seed: 0 }
            .validate()
            .is_ok());
        assert!(DomainSpec::TwoMoons { n: 1, noise: 0.1, rotation_deg: 0.0, seed: 0 }
            .validate()
            .is_err());
        assert!(DomainSpec::BlobShift { n: 10, dims: 2, classes: 3, shift: vec![0.0], seed: 0 }
            .validate()
            .is_err());
        assert!(DomainSpec::CorrelatedGaussian { n: 10, dims: 1, rho: 1.0, seed: 0 }
            .validate()
            .is_err());
    }

    #[test]
    fn standardize_zero_mean_unit_variance() {
        let set = gen_two_moons(200, 0.2, 31).unwrap();
        let z = standardize_features(&set.x);
        for j in 0..2 {
            let mean: f64 = (0..200).map(|r| z.get(r, j)).sum::<f64>() / 200.0;
            let var: f64 = (0..200).map(|r| z.get(r, j).powi(2)).sum::<f64>() / 200.0 - mean * mean;
            assert!(mean.abs() < 1e-12, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "var {var}");
        }
        // Constant feature: centered, not divided by zero.
        let flat = Tensor2D::new(3, 1, vec![5.0, 5.0, 5.0]).unwrap();
        let z = standardize_features(&flat);
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_indices_cover_and_drop_rules() {
        let mut rng = Rng::new(1);
        let batches = batch_indices(64, 32, &mut rng).unwrap();
        assert_eq!(batches.len(), 2);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());

        let batches = batch_indices(65, 32, &mut rng).unwrap();
        assert_eq!(batches.len(), 2); // final singleton dropped
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 64);

        let batches = batch_indices(66, 32, &mut rng).unwrap();
        assert_eq!(batches.len(), 3); // final pair kept
        assert_eq!(batches[2].len(), 2);

        assert!(batch_indices(10, 1, &mut rng).is_err());

        let mut r1 = Rng::new(9);
        let mut r2 = Rng::new(9);
        assert_eq!(batch_indices(50, 8, &mut r1).unwrap(), batch_indices(50, 8, &mut r2).unwrap());
    }
}
