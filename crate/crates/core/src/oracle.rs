//! Independent ground truth: closed-form Gaussian MI/KL, exact computations
//! on finite joint distributions that verify the variational identities and
//! the Donsker-Varadhan bounds numerically, and a finite-difference gradient
//! checker for every loss in the crate.
//!
//! Everything here is either a closed form or an exhaustive enumeration; no
//! code path is shared with the estimators it validates.

use serde::Serialize;

use crate::error::{dim_mismatch, Error, Result};
use crate::numerics::{DifferentiableNet, Rng};

/// `0 * log 0 := 0` convention for entropy-style sums.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Outcome of a seeded batch of identity or inequality checks.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub suite: String,
    pub instances_run: usize,
    pub max_abs_violation: f64,
    pub worst_case_seed: u64,
    pub tolerance: f64,
    pub passed: bool,
    /// "ok", or an explanation when a check was skipped (e.g. relu kinks).
    pub status: String,
}

impl CheckReport {
    fn new(suite: &str, instances: usize, worst: f64, worst_seed: u64, tol: f64) -> Self {
        CheckReport {
            suite: suite.to_string(),
            instances_run: instances,
            max_abs_violation: worst,
            worst_case_seed: worst_seed,
            tolerance: tol,
            passed: worst <= tol,
            status: "ok".into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// Exact MI of `dims` independent bivariate-normal coordinate pairs with
/// correlation `rho`: `-(dims/2) * ln(1 - rho^2)` nats.
pub fn gaussian_mi(rho: f64, dims: usize) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArg(format!("|rho| must be < 1, got {rho}")));
    }
    if dims == 0 {
        return Err(Error::InvalidArg("dims must be >= 1".into()));
    }
    Ok(-(dims as f64) / 2.0 * (1.0 - rho * rho).ln())
}

/// Exact KL between diagonal Gaussians given their per-dimension parameters.
pub fn gaussian_kld(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if var1.len() != d || mu2.len() != d || var2.len() != d {
        return Err(dim_mismatch("gaussian_kld", d, "mismatched parameter vectors"));
    }
    if var1.iter().chain(var2).any(|&v| v <= 0.0) {
        return Err(Error::InvalidArg("variances must be positive".into()));
    }
    let mut kl = 0.0;
    for j in 0..d {
        let dm = mu1[j] - mu2[j];
        kl += 0.5 * (var2[j] / var1[j]).ln() + (var1[j] + dm * dm) / (2.0 * var2[j]) - 0.5;
    }
    Ok(kl)
}

// ---------------------------------------------------------------------------
// Finite joint distributions
// ---------------------------------------------------------------------------

/// Exact finite joint distribution over `|X| x |Z|` outcomes.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    nx: usize,
    nz: usize,
    /// Row-major `p(x, z)`, row = x outcome.
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(nx: usize, nz: usize, probs: Vec<f64>) -> Result<Self> {
        if !(2..=16).contains(&nx) || !(2..=16).contains(&nz) {
            return Err(Error::InvalidArg(format!(
                "support sizes must be in [2, 16], got {nx}x{nz}"
            )));
        }
        if probs.len() != nx * nz {
            return Err(dim_mismatch("DiscreteJoint::new", nx * nz, probs.len()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArg("probabilities must be non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArg(format!(
                "joint probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(DiscreteJoint { nx, nz, probs })
    }

    /// Random strictly-positive joint (entries are normalized uniforms).
    pub fn random(nx: usize, nz: usize, rng: &mut Rng) -> Result<Self> {
        let mut probs: Vec<f64> = (0..nx * nz).map(|_| rng.uniform() + 1e-3).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        // Renormalize once more to absorb rounding in the first division.
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        DiscreteJoint::new(nx, nz, probs)
    }

    /// Product joint `p(x, z) = px(x) * pz(z)` (zero mutual information).
    pub fn product(px: &[f64], pz: &[f64]) -> Result<Self> {
        let mut probs = Vec::with_capacity(px.len() * pz.len());
        for &a in px {
            for &b in pz {
                probs.push(a * b);
            }
        }
        DiscreteJoint::new(px.len(), pz.len(), probs)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn prob(&self, x: usize, z: usize) -> f64 {
        self.probs[x * self.nz + z]
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|x| (0..self.nz).map(|z| self.prob(x, z)).sum())
            .collect()
    }

    pub fn marginal_z(&self) -> Vec<f64> {
        (0..self.nz)
            .map(|z| (0..self.nx).map(|x| self.prob(x, z)).sum())
            .collect()
    }

    fn entropy_x(&self) -> f64 {
        -self.marginal_x().iter().map(|&p| xlogy(p, p)).sum::<f64>()
    }

    /// `H(X|Z) = sum_z p(z) H(X | Z = z)`.
    fn conditional_entropy_x_given_z(&self) -> f64 {
        let pz = self.marginal_z();
        let mut h = 0.0;
        for z in 0..self.nz {
            if pz[z] == 0.0 {
                continue;
            }
            for x in 0..self.nx {
                let pxz = self.prob(x, z);
                h -= xlogy(pxz, pxz / pz[z]);
            }
        }
        h
    }

    /// Exact KL between the joint and the product of its marginals, i.e. the
    /// mutual information as a divergence.
    pub fn kl_joint_vs_product(&self) -> f64 {
        let px = self.marginal_x();
        let pz = self.marginal_z();
        let mut kl = 0.0;
        for x in 0..self.nx {
            for z in 0..self.nz {
                let p = self.prob(x, z);
                kl += xlogy(p, p / (px[x] * pz[z]));
            }
        }
        kl
    }
}

/// Finite distribution over a single variable (the variational `q(z)`).
#[derive(Debug, Clone)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArg("support size must be >= 2".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArg("probabilities must be non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArg(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(DiscreteDist { probs })
    }

    pub fn random(n: usize, rng: &mut Rng) -> Result<Self> {
        let mut probs: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        DiscreteDist::new(probs)
    }

    /// Point mass on outcome `i` over a support of size `n`.
    pub fn point_mass(n: usize, i: usize) -> Result<Self> {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        DiscreteDist::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `I(X;Z) = sum p(x,z) log[p(x,z) / (p(x)p(z))]`, asserted equal to
/// `H(X) - H(X|Z)` within 1e-12 (the two definitions must agree exactly).
pub fn discrete_mi(joint: &DiscreteJoint) -> f64 {
    let via_kl = joint.kl_joint_vs_product();
    let via_entropy = joint.entropy_x() - joint.conditional_entropy_x_given_z();
    assert!(
        (via_kl - via_entropy).abs() <= 1e-12,
        "MI definitions disagree: {via_kl} vs {via_entropy}"
    );
    via_kl
}

// ---------------------------------------------------------------------------
// Identity checks for the variational bound chain
// ---------------------------------------------------------------------------

/// Exact check of the evidence-lower-bound identity, conditioning the joint
/// on outcome `x_index`:
///
/// `KL(q(z) || p(z|x)) = -B + log p(x)` with
/// `B = E_q[log p(x, z)] - E_q[log q(z)]`.
pub fn elbo_identity_check(
    q: &DiscreteDist,
    joint: &DiscreteJoint,
    x_index: usize,
) -> Result<f64> {
    if q.probs().len() != joint.nz() {
        return Err(dim_mismatch("elbo q support", joint.nz(), q.probs().len()));
    }
    let px = joint.marginal_x();
    if px[x_index] <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "conditioning event x={x_index} has probability zero"
        )));
    }
    // Absolute continuity: wherever q(z) > 0, p(z|x) must be > 0.
    for z in 0..joint.nz() {
        if q.probs()[z] > 0.0 && joint.prob(x_index, z) == 0.0 {
            return Err(Error::InvalidArg(format!(
                "q not absolutely continuous w.r.t. p(z|x) at z={z}"
            )));
        }
    }

    let log_px = px[x_index].ln();
    let mut kl = 0.0; // KL(q || p(z|x))
    let mut bound = 0.0; // E_q[log p(x,z)] - E_q[log q]
    for z in 0..joint.nz() {
        let qz = q.probs()[z];
        let p_joint = joint.prob(x_index, z);
        let p_cond = p_joint / px[x_index];
        kl += xlogy(qz, qz) - xlogy(qz, p_cond);
        bound += xlogy(qz, p_joint) - xlogy(qz, qz);
    }
    Ok((kl - (-bound + log_px)).abs())
}

/// Batch of seeded random ELBO identity instances.
pub fn elbo_identity_suite(instances: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    let mut worst = 0.0;
    let mut worst_seed = seed;
    // Decorrelate instance streams across nearby base seeds.
    let base = Rng::substream(seed, 101).next_u64();
    for i in 0..instances {
        let inst_seed = base.wrapping_add(i as u64);
        let mut rng = Rng::substream(inst_seed, 101);
        let nx = 2 + rng.below(7);
        let nz = 2 + rng.below(7);
        let joint = DiscreteJoint::random(nx, nz, &mut rng)?;
        let q = DiscreteDist::random(nz, &mut rng)?;
        let x_index = rng.below(nx);
        let violation = elbo_identity_check(&q, &joint, x_index)?;
        if violation > worst {
            worst = violation;
            worst_seed = inst_seed;
        }
    }
    Ok(CheckReport::new("elbo", instances, worst, worst_seed, tol))
}

/// Exact check of the conditional-likelihood/MI equivalence:
/// `E_{p(x,z)}[log p(x|z)] = -H(X|Z)` and `H(X) - H(X|Z) = I(X;Z)`.
/// Returns the larger of the two absolute violations.
pub fn infomax_identity_check(joint: &DiscreteJoint) -> f64 {
    let pz = joint.marginal_z();
    let mut expected_loglik = 0.0;
    for x in 0..joint.nx() {
        for z in 0..joint.nz() {
            let p = joint.prob(x, z);
            if pz[z] > 0.0 {
                expected_loglik += xlogy(p, p / pz[z]);
            }
        }
    }
    let h_cond = joint.conditional_entropy_x_given_z();
    let v1 = (expected_loglik + h_cond).abs();
    let mi = joint.kl_joint_vs_product();
    let v2 = ((joint.entropy_x() - h_cond) - mi).abs();
    v1.max(v2)
}

pub fn infomax_identity_suite(instances: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    let mut worst = 0.0;
    let mut worst_seed = seed;
    let base = Rng::substream(seed, 202).next_u64();
    for i in 0..instances {
        let inst_seed = base.wrapping_add(i as u64);
        let mut rng = Rng::substream(inst_seed, 202);
        let nx = 2 + rng.below(7);
        let nz = 2 + rng.below(7);
        let joint = DiscreteJoint::random(nx, nz, &mut rng)?;
        let violation = infomax_identity_check(&joint);
        if violation > worst {
            worst = violation;
            worst_seed = inst_seed;
        }
    }
    Ok(CheckReport::new("infomax", instances, worst, worst_seed, tol))
}

// ---------------------------------------------------------------------------
// Donsker-Varadhan bound checks with exact expectations
// ---------------------------------------------------------------------------

/// Exact `E_joint[M]` for a tabulated critic `M[x][z]`.
fn expect_joint(joint: &DiscreteJoint, table: &[f64]) -> f64 {
    let nz = joint.nz();
    table
        .iter()
        .enumerate()
        .map(|(i, &m)| joint.prob(i / nz, i % nz) * m)
        .sum()
}

/// Exact `E_{p(x) p(z)}[e^M]` for a tabulated critic.
fn expect_product_exp(joint: &DiscreteJoint, table: &[f64]) -> f64 {
    let px = joint.marginal_x();
    let pz = joint.marginal_z();
    let nz = joint.nz();
    table
        .iter()
        .enumerate()
        .map(|(i, &m)| px[i / nz] * pz[i % nz] * m.exp())
        .sum()
}

fn random_critic_table(joint: &DiscreteJoint, rng: &mut Rng) -> Vec<f64> {
    // Bounded in [-3, 3] so e^M stays well-conditioned under exact sums.
    (0..joint.nx() * joint.nz())
        .map(|_| rng.uniform_in(-3.0, 3.0))
        .collect()
}

/// Checks the single-critic DV inequality
/// `E_joint[M] - log E_prod[e^M] <= KL` for `n_critics` random tabulated
/// critics, the two-critic variant
/// `(E_joint[M1] - log E_prod[e^{M2}]) / 2 <= KL` for `n_critics` pairs
/// satisfying `E_joint[M2] >= E_joint[M1]`, and that the optimal critic
/// `M* = log p(x,z)/(p(x)p(z))` attains the supremum. Reports the worst
/// slack violation across all instances.
pub fn dv_inequality_check(instances: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_seed = seed;
    let mut track = |violation: f64, inst_seed: u64| {
        if violation > worst {
            worst = violation;
            worst_seed = inst_seed;
        }
    };

    let base = Rng::substream(seed, 303).next_u64();
    for i in 0..instances {
        let inst_seed = base.wrapping_add(i as u64);
        let mut rng = Rng::substream(inst_seed, 303);
        let nx = 2 + rng.below(7);
        let nz = 2 + rng.below(7);
        let joint = DiscreteJoint::random(nx, nz, &mut rng)?;
        let kl = joint.kl_joint_vs_product();

        // Single-critic bound.
        let m = random_critic_table(&joint, &mut rng);
        let bound = expect_joint(&joint, &m) - expect_product_exp(&joint, &m).ln();
        track(bound - kl, inst_seed);

        // Two-critic bound: draw pairs until the hypothesis holds.
        let (m1, m2) = loop {
            let a = random_critic_table(&joint, &mut rng);
            let b = random_critic_table(&joint, &mut rng);
            if expect_joint(&joint, &b) >= expect_joint(&joint, &a) {
                break (a, b);
            }
        };
        let two_bound =
            0.5 * (expect_joint(&joint, &m1) - expect_product_exp(&joint, &m2).ln());
        track(two_bound - kl, inst_seed);

        // Optimal critic attains the supremum; slack beyond the 1e-10
        // equality budget counts as a violation.
        let px = joint.marginal_x();
        let pz = joint.marginal_z();
        let opt: Vec<f64> = (0..nx * nz)
            .map(|idx| {
                let (x, z) = (idx / nz, idx % nz);
                (joint.prob(x, z) / (px[x] * pz[z])).ln()
            })
            .collect();
        let opt_bound = expect_joint(&joint, &opt) - expect_product_exp(&joint, &opt).ln();
        track((opt_bound - kl).abs() - 1e-10, inst_seed);
    }
    Ok(CheckReport::new("dv", instances, worst, worst_seed, tol))
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Relative error metric used throughout:
/// `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central-difference check of the analytic gradients of `eval` with respect
/// to every parameter of every net in `nets`.
///
/// `eval` must, on each call, zero the nets' gradient accumulators, run the
/// full forward/backward pipeline, and return the scalar loss; the analytic
/// gradients are read from the accumulators after one call, then compared
/// against `(f(p+h) - f(p-h)) / 2h` per parameter.
///
/// Nets with relu activations are skipped (central differences are unreliable
/// at kinks) with an explicit status.
pub fn finite_diff_gradcheck<F>(
    nets: &mut [&mut DifferentiableNet],
    mut eval: F,
    h: f64,
    tol: f64,
) -> Result<CheckReport>
where
    F: FnMut(&mut [&mut DifferentiableNet]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArg(format!("step h must be in [1e-7, 1e-3], got {h}")));
    }
    if nets.iter().any(|n| n.uses_relu()) {
        return Ok(CheckReport {
            suite: "gradcheck".into(),
            instances_run: 0,
            max_abs_violation: 0.0,
            worst_case_seed: 0,
            tolerance: tol,
            passed: true,
            status: "skipped: relu activations are kink-unsafe for finite differences".into(),
        });
    }

    let _ = eval(nets)?;
    let analytic: Vec<Vec<f64>> = nets.iter().map(|n| n.grads_flat()).collect();

    let mut worst = 0.0;
    let mut worst_param = 0u64;
    let mut checked = 0usize;
    for ni in 0..nets.len() {
        for pi in 0..nets[ni].param_count() {
            nets[ni].nudge_param(pi, h);
            let f_plus = eval(nets)?;
            nets[ni].nudge_param(pi, -2.0 * h);
            let f_minus = eval(nets)?;
            nets[ni].nudge_param(pi, h);
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradcheck loss at perturbed param {pi} of net {ni}"),
                });
            }
            let numeric = (f_plus - f_minus) / (2.0 * h);
            // Central differences bottom out at ~|f| * eps / h; gradients that
            // are exactly zero by symmetry (e.g. a critic's output bias under
            // the bound, which shifts both terms equally) sit below that
            // resolution and cannot be certified — or falsified — at any h.
            let noise_floor = 10.0 * f_plus.abs().max(f_minus.abs()).max(1.0) * f64::EPSILON / h;
            let err = if analytic[ni][pi].abs() <= noise_floor && numeric.abs() <= noise_floor {
                0.0
            } else {
                grad_rel_error(analytic[ni][pi], numeric)
            };
            if err > worst {
                worst = err;
                worst_param = (ni as u64) << 32 | pi as u64;
            }
            checked += 1;
        }
    }
    // Leave the nets with clean accumulators.
    for net in nets.iter_mut() {
        net.zero_grad();
    }
    Ok(CheckReport::new("gradcheck", checked, worst, worst_param, tol))
}

// ---------------------------------------------------------------------------
// Per-loss gradient-check harnesses
// ---------------------------------------------------------------------------

/// Which loss a gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Cls,
    Kld,
    Ent,
    Mi,
    DvSingle,
    Recon,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Cls,
        LossKind::Kld,
        LossKind::Ent,
        LossKind::Mi,
        LossKind::DvSingle,
        LossKind::Recon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Cls => "cls",
            LossKind::Kld => "kld",
            LossKind::Ent => "ent",
            LossKind::Mi => "mi",
            LossKind::DvSingle => "dv_single",
            LossKind::Recon => "recon",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(LossKind::Cls),
            "kld" => Ok(LossKind::Kld),
            "ent" => Ok(LossKind::Ent),
            "mi" => Ok(LossKind::Mi),
            "dv_single" => Ok(LossKind::DvSingle),
            "recon" => Ok(LossKind::Recon),
            other => Err(Error::InvalidArg(format!("unknown loss `{other}`"))),
        }
    }
}

/// Finite-difference check of one loss on a seeded random net stack (tanh
/// encoder, elu critics), including the gradient paths through the latents
/// back into the encoder.
pub fn gradcheck_loss(kind: LossKind, seed: u64, h: f64, tol: f64) -> Result<CheckReport> {
    use crate::losses::{
        classification_loss, dv_bound_single, entropy_penalty, latent_kld, mi_loss,
        recon_mi_baseline, MiBatch,
    };
    use crate::numerics::{Activation, Tensor2D};

    let d_x = 3;
    let d_z = 4;
    let n: usize = 6;
    let mut data_rng = Rng::substream(seed, 40);
    let x = Tensor2D::new(n, d_x, (0..n * d_x).map(|_| data_rng.normal()).collect())?;
    let labels: Vec<usize> = (0..n).map(|_| data_rng.below(3)).collect();
    let x_src = Tensor2D::new(5, d_x, (0..5 * d_x).map(|_| data_rng.normal()).collect())?;
    // Fixed marginal permutation so every finite-difference evaluation sees
    // the exact same function.
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = data_rng.below(i + 1);
        perm.swap(i, j);
    }

    let mut encoder = DifferentiableNet::new(
        &[d_x, 8, d_z],
        Activation::Tanh,
        &mut Rng::substream(seed, 41),
    )?;
    let mut head = DifferentiableNet::new(
        &[d_z, 3],
        Activation::Tanh,
        &mut Rng::substream(seed, 42),
    )?;
    let mut critic1 = DifferentiableNet::new(
        &[d_x + d_z, 8, 1],
        Activation::Elu,
        &mut Rng::substream(seed, 43),
    )?;
    let mut critic2 = DifferentiableNet::new(
        &[d_x + d_z, 8, 1],
        Activation::Elu,
        &mut Rng::substream(seed, 44),
    )?;
    let mut dec = DifferentiableNet::new(
        &[d_z, 8, d_x],
        Activation::Tanh,
        &mut Rng::substream(seed, 45),
    )?;

    match kind {
        LossKind::Cls => {
            let mut nets = [&mut encoder, &mut head];
            finite_diff_gradcheck(
                &mut nets,
                |nets| {
                    let (enc, rest) = nets.split_first_mut().unwrap();
                    let f = &mut rest[0];
                    enc.zero_grad();
                    f.zero_grad();
                    let z = enc.forward(&x)?;
                    let logits = f.forward(&z)?;
                    let out = classification_loss(&logits, &labels)?;
                    let d_z_all = f.backward(&out.d_logits)?;
                    enc.backward(&d_z_all)?;
                    Ok(out.value)
                },
                h,
                tol,
            )
        }
        LossKind::Ent => {
            let mut nets = [&mut encoder, &mut head];
            finite_diff_gradcheck(
                &mut nets,
                |nets| {
                    let (enc, rest) = nets.split_first_mut().unwrap();
                    let f = &mut rest[0];
                    enc.zero_grad();
                    f.zero_grad();
                    let z = enc.forward(&x)?;
                    let logits = f.forward(&z)?;
                    let out = entropy_penalty(&logits)?;
                    let d_z_all = f.backward(&out.d_logits)?;
                    enc.backward(&d_z_all)?;
                    Ok(out.value)
                },
                h,
                tol,
            )
        }
        LossKind::Kld => {
            let x_all = x_src.vstack(&x)?;
            let mut nets = [&mut encoder];
            finite_diff_gradcheck(
                &mut nets,
                |nets| {
                    let enc = &mut nets[0];
                    enc.zero_grad();
                    let z_all = enc.forward(&x_all)?;
                    let z_s = z_all.slice_rows(0, 5);
                    let z_t = z_all.slice_rows(5, 5 + n);
                    let out = latent_kld(&z_s, &z_t)?;
                    let d_all = out.d_source.vstack(&out.d_target)?;
                    enc.backward(&d_all)?;
                    Ok(out.value)
                },
                h,
                tol,
            )
        }
        LossKind::Mi => {
            let perm = perm.clone();
            let x = x.clone();
            let mut nets = [&mut encoder, &mut critic1, &mut critic2];
            finite_diff_gradcheck(
                &mut nets,
                move |nets| {
                    let (enc, rest) = nets.split_first_mut().unwrap();
                    let (m1, rest) = rest.split_first_mut().unwrap();
                    let m2 = &mut rest[0];
                    enc.zero_grad();
                    m1.zero_grad();
                    m2.zero_grad();
                    let z = enc.forward(&x)?;
                    let batch =
                        MiBatch::from_parts(x.clone(), z.clone(), z.select_rows(&perm), perm.clone())?;
                    let out = mi_loss(m1, m2, &batch)?;
                    let d_z = out.total_z_grad(&batch)?;
                    enc.backward(&d_z)?;
                    Ok(out.value)
                },
                h,
                tol,
            )
        }
        LossKind::DvSingle => {
            let perm = perm.clone();
            let x = x.clone();
            let mut nets = [&mut encoder, &mut critic1];
            finite_diff_gradcheck(
                &mut nets,
                move |nets| {
                    let (enc, rest) = nets.split_first_mut().unwrap();
                    let critic = &mut rest[0];
                    enc.zero_grad();
                    critic.zero_grad();
                    let z = enc.forward(&x)?;
                    let batch =
                        MiBatch::from_parts(x.clone(), z.clone(), z.select_rows(&perm), perm.clone())?;
                    let out = dv_bound_single(critic, &batch)?;
                    let d_z = out.total_z_grad(&batch)?;
                    enc.backward(&d_z)?;
                    Ok(out.value)
                },
                h,
                tol,
            )
        }
        LossKind::Recon => {
            let mut nets = [&mut encoder, &mut dec];
            finite_diff_gradcheck(
                &mut nets,
                |nets| {
                    let (enc, rest) = nets.split_first_mut().unwrap();
                    let decoder = &mut rest[0];
                    enc.zero_grad();
                    decoder.zero_grad();
                    let z = enc.forward(&x)?;
                    let out = recon_mi_baseline(decoder, &x, &z)?;
                    enc.backward(&out.d_z)?;
                    Ok(out.value)
                },
                h,
                tol,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

/// Sample Pearson correlation coefficient of two equal-length series.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_mismatch("pearson_corr", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArg("pearson_corr needs at least 2 points".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::InvalidArg("pearson_corr undefined for zero-variance series".into()));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}
