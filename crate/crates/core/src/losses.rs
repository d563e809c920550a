//! Objective terms: source classification, latent alignment, target entropy,
//! reconstruction, and the Donsker-Varadhan mutual-information bounds in both
//! the single-critic and two-critic forms.
//!
//! Every loss returns its value together with analytic gradients over its
//! direct inputs; gradients with respect to critic parameters are accumulated
//! into the nets passed in. All gradients are validated against central
//! finite differences (see `oracle::finite_diff_gradcheck` and the gradient
//! suite in the acceptance tests).

use crate::error::{dim_mismatch, Error, Result};
use crate::numerics::{log_sum_exp, softmax, DifferentiableNet, Rng, Tensor2D};

/// Variance floor for the moment-matched Gaussian fit; keeps collapsed latent
/// dimensions from dividing by zero.
pub const VAR_FLOOR: f64 = 1e-6;

/// Elementwise cap on the latent gradients of the moment-matched KL. The
/// closed-form gradient grows like 1/variance^1.5 as a batch dimension
/// collapses toward the floor, which can detonate training in one step;
/// healthy batches stay far below this bound.
pub const KLD_GRAD_CLAMP: f64 = 100.0;

// ---------------------------------------------------------------------------
// Batch container for the DV bounds
// ---------------------------------------------------------------------------

/// A joint minibatch `(x, z)` plus marginal-resampled latents `z_bar`.
///
/// `z_marginal` is a row permutation of `z_joint`; the permutation is kept so
/// gradients flowing into `z_marginal` can be routed back to the original
/// rows of `z_joint` (and from there into the encoder).
#[derive(Debug, Clone)]
pub struct MiBatch {
    pub x_joint: Tensor2D,
    pub z_joint: Tensor2D,
    pub z_marginal: Tensor2D,
    perm: Vec<usize>,
}

impl MiBatch {
    /// Build a batch, drawing the marginal permutation from `rng`.
    pub fn new(x_joint: Tensor2D, z_joint: Tensor2D, rng: &mut Rng) -> Result<Self> {
        let (z_marginal, perm) = resample_marginal(&z_joint, rng)?;
        Self::from_parts(x_joint, z_joint, z_marginal, perm)
    }

    /// Build a batch from an explicit permutation (deterministic tests).
    pub fn from_parts(
        x_joint: Tensor2D,
        z_joint: Tensor2D,
        z_marginal: Tensor2D,
        perm: Vec<usize>,
    ) -> Result<Self> {
        let n = x_joint.rows();
        if n < 2 {
            return Err(Error::InvalidArg(format!("MiBatch needs n >= 2 rows, got {n}")));
        }
        if z_joint.rows() != n || z_marginal.rows() != n {
            return Err(dim_mismatch("MiBatch rows", n, z_joint.rows().max(z_marginal.rows())));
        }
        if z_marginal.cols() != z_joint.cols() {
            return Err(dim_mismatch("MiBatch z width", z_joint.cols(), z_marginal.cols()));
        }
        if perm.len() != n {
            return Err(dim_mismatch("MiBatch perm length", n, perm.len()));
        }
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(Error::InvalidArg("MiBatch perm is not a permutation".into()));
            }
            seen[p] = true;
        }
        // The permutation must actually describe the resampling, or marginal
        // gradients would be routed to the wrong joint rows.
        for (i, &src) in perm.iter().enumerate() {
            if z_marginal.row(i) != z_joint.row(src) {
                return Err(Error::InvalidArg(format!(
                    "MiBatch z_marginal row {i} is not z_joint row {src}"
                )));
            }
        }
        Ok(MiBatch {
            x_joint,
            z_joint,
            z_marginal,
            perm,
        })
    }

    pub fn len(&self) -> usize {
        self.x_joint.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Fold a gradient on `z_marginal` back onto the rows of `z_joint` it
    /// came from: `out[perm[i]] += d_z_marginal[i]`.
    pub fn route_marginal_grad(&self, d_z_marginal: &Tensor2D) -> Tensor2D {
        let cols = d_z_marginal.cols();
        let mut out = Tensor2D::zeros(d_z_marginal.rows(), cols);
        for (i, &src) in self.perm.iter().enumerate() {
            let row = d_z_marginal.row(i).to_vec();
            let o = &mut out.values_mut()[src * cols..(src + 1) * cols];
            for (ov, g) in o.iter_mut().zip(&row) {
                *ov += g;
            }
        }
        out
    }
}

/// Fisher-Yates permutation of the rows of `z`, driven by `rng`. Returns the
/// permuted tensor and the permutation (`out[i] = z[perm[i]]`).
pub fn resample_marginal(z: &Tensor2D, rng: &mut Rng) -> Result<(Tensor2D, Vec<usize>)> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::InvalidArg(format!("resample_marginal needs n >= 2, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        perm.swap(i, j);
    }
    Ok((z.select_rows(&perm), perm))
}

// ---------------------------------------------------------------------------
// Classification and entropy
// ---------------------------------------------------------------------------

/// Loss value plus gradient with respect to the logits that produced it.
#[derive(Debug, Clone)]
pub struct LogitLoss {
    pub value: f64,
    pub d_logits: Tensor2D,
}

/// Mean negative log softmax probability of the true class.
/// Gradient: `(softmax - onehot) / N`.
pub fn classification_loss(logits: &Tensor2D, labels: &[usize]) -> Result<LogitLoss> {
    let (n, c) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(dim_mismatch("classification_loss labels", n, labels.len()));
    }
    for (row, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                label,
                classes: c,
                row,
            });
        }
    }
    let probs = softmax(logits)?;
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut d_logits = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        // log p computed stably from the logits rather than from the
        // (possibly underflowed) probability.
        let row = logits.row(i);
        let lse = log_sum_exp(row)?;
        value -= (row[label] - lse) * inv_n;
        let d = &mut d_logits.values_mut()[i * c..(i + 1) * c];
        d[label] -= 1.0;
        for g in d.iter_mut() {
            *g *= inv_n;
        }
    }
    Ok(LogitLoss { value, d_logits })
}

/// Mean Shannon entropy of the softmax predictions, in `[0, ln C]`.
/// Gradient per row: `-p_k (ln p_k + H_row) / N`.
pub fn entropy_penalty(logits: &Tensor2D) -> Result<LogitLoss> {
    let (n, c) = (logits.rows(), logits.cols());
    let probs = softmax(logits)?;
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut d_logits = Tensor2D::zeros(n, c);
    for i in 0..n {
        let row_logits = logits.row(i);
        let lse = log_sum_exp(row_logits)?;
        let p = probs.row(i).to_vec();
        let mut h = 0.0;
        for (pk, &x) in p.iter().zip(row_logits) {
            // ln p_k = logit - LSE, finite even when p_k underflows.
            h -= pk * (x - lse);
        }
        value += h * inv_n;
        let d = &mut d_logits.values_mut()[i * c..(i + 1) * c];
        for ((g, pk), &x) in d.iter_mut().zip(&p).zip(row_logits) {
            *g = -pk * ((x - lse) + h) * inv_n;
        }
    }
    Ok(LogitLoss { value, d_logits })
}

// ---------------------------------------------------------------------------
// Moment-matched latent KL
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KldLoss {
    pub value: f64,
    pub d_source: Tensor2D,
    pub d_target: Tensor2D,
}

/// Fits a diagonal Gaussian to each latent batch (per-dimension mean and
/// population variance, floored at [`VAR_FLOOR`]) and returns the closed-form
/// `KL(N_source || N_target)` summed over dimensions, differentiable with
/// respect to both batches.
pub fn latent_kld(z_source: &Tensor2D, z_target: &Tensor2D) -> Result<KldLoss> {
    let d = z_source.cols();
    if z_target.cols() != d {
        return Err(dim_mismatch("latent_kld width", d, z_target.cols()));
    }
    let (ns, nt) = (z_source.rows(), z_target.rows());
    if ns < 2 || nt < 2 {
        return Err(Error::InvalidArg(format!(
            "latent_kld needs >= 2 rows per batch, got {ns} and {nt}"
        )));
    }

    let moments = |z: &Tensor2D| -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let means = z.col_means();
        let n = z.rows() as f64;
        let mut vars = vec![0.0; d];
        for r in 0..z.rows() {
            for (j, (&v, m)) in z.row(r).iter().zip(&means).enumerate() {
                let c = v - m;
                vars[j] += c * c / n;
            }
        }
        let floored: Vec<bool> = vars.iter().map(|&v| v < VAR_FLOOR).collect();
        for v in &mut vars {
            *v = v.max(VAR_FLOOR);
        }
        (means, vars, floored)
    };

    let (mu_s, var_s, floored_s) = moments(z_source);
    let (mu_t, var_t, floored_t) = moments(z_target);

    let mut value = 0.0;
    // Per-dimension derivatives of KL with respect to the fitted moments.
    let mut d_mu_s = vec![0.0; d];
    let mut d_mu_t = vec![0.0; d];
    let mut d_var_s = vec![0.0; d];
    let mut d_var_t = vec![0.0; d];
    for j in 0..d {
        let dm = mu_s[j] - mu_t[j];
        let (vs, vt) = (var_s[j], var_t[j]);
        value += 0.5 * (vt / vs).ln() + (vs + dm * dm) / (2.0 * vt) - 0.5;
        d_mu_s[j] = dm / vt;
        d_mu_t[j] = -dm / vt;
        if !floored_s[j] {
            d_var_s[j] = -0.5 / vs + 0.5 / vt;
        }
        if !floored_t[j] {
            d_var_t[j] = 0.5 / vt - (vs + dm * dm) / (2.0 * vt * vt);
        }
    }

    let chain = |z: &Tensor2D, mu: &[f64], d_mu: &[f64], d_var: &[f64]| -> Tensor2D {
        let n = z.rows() as f64;
        let mut grad = Tensor2D::zeros(z.rows(), d);
        for r in 0..z.rows() {
            let zr = z.row(r).to_vec();
            let g = &mut grad.values_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                let raw = d_mu[j] / n + d_var[j] * 2.0 * (zr[j] - mu[j]) / n;
                g[j] = raw.clamp(-KLD_GRAD_CLAMP, KLD_GRAD_CLAMP);
            }
        }
        grad
    };

    Ok(KldLoss {
        value,
        d_source: chain(z_source, &mu_s, &d_mu_s, &d_var_s),
        d_target: chain(z_target, &mu_t, &d_mu_t, &d_var_t),
    })
}

// ---------------------------------------------------------------------------
// Donsker-Varadhan bounds
// ---------------------------------------------------------------------------

/// A scalar value plus its gradients with respect to the latent batches.
/// Gradients with respect to the critic parameters are accumulated into the
/// nets themselves.
#[derive(Debug, Clone)]
pub struct MiLoss {
    pub value: f64,
    pub d_z_joint: Tensor2D,
    pub d_z_marginal: Tensor2D,
}

impl MiLoss {
    /// Total gradient on `z_joint` with the marginal path routed back through
    /// the batch permutation.
    pub fn total_z_grad(&self, batch: &MiBatch) -> Result<Tensor2D> {
        let mut total = self.d_z_joint.clone();
        total.add_scaled(&batch.route_marginal_grad(&self.d_z_marginal), 1.0)?;
        Ok(total)
    }
}

fn check_critic(critic: &DifferentiableNet, batch: &MiBatch, name: &str) -> Result<()> {
    let want = batch.x_joint.cols() + batch.z_joint.cols();
    if critic.input_dim() != want {
        return Err(dim_mismatch(name, want, critic.input_dim()));
    }
    if critic.output_dim() != 1 {
        return Err(dim_mismatch(
            &format!("{name} output"),
            1usize,
            critic.output_dim(),
        ));
    }
    Ok(())
}

/// Gradient of `log mean exp(s)` with respect to the scores `s`: the softmax
/// weights, optionally rescaled (moving-average bias correction).
fn log_mean_exp_grad(scores: &Tensor2D, scale: f64) -> Tensor2D {
    let max = scores
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut g = scores.clone();
    let mut sum = 0.0;
    for v in g.values_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in g.values_mut() {
        *v = *v / sum * scale;
    }
    g
}

fn mean(scores: &Tensor2D) -> f64 {
    scores.values().iter().sum::<f64>() / scores.values().len() as f64
}

/// Two-critic MI loss (the quantity the training loop minimizes):
///
/// `L = -[ mean M1(x + z) - log mean e^{M2(x + z_bar)} ]`
///
/// Accumulates dL/dtheta into both critics and returns dL/dz for chaining
/// into the encoder. `log_term_scale` rescales the gradient of the
/// log-mean-exp term only (1.0 = plain gradient).
pub fn mi_loss_scaled(
    m1: &mut DifferentiableNet,
    m2: &mut DifferentiableNet,
    batch: &MiBatch,
    log_term_scale: f64,
) -> Result<MiLoss> {
    check_critic(m1, batch, "mi_loss m1")?;
    check_critic(m2, batch, "mi_loss m2")?;
    let n = batch.len();
    let d_x = batch.x_joint.cols();

    let u = batch.x_joint.concat_cols(&batch.z_joint)?;
    let s1 = m1.forward(&u)?;
    let joint_term = mean(&s1);
    let mut d_s1 = Tensor2D::zeros(n, 1);
    d_s1.values_mut().fill(-1.0 / n as f64);
    let d_u = m1.backward(&d_s1)?;

    let v = batch.x_joint.concat_cols(&batch.z_marginal)?;
    let s2 = m2.forward(&v)?;
    let log_term = log_sum_exp(s2.values())? - (n as f64).ln();
    let d_s2 = log_mean_exp_grad(&s2, log_term_scale);
    let d_v = m2.backward(&d_s2)?;

    let take_z = |t: &Tensor2D| -> Tensor2D {
        let mut z = Tensor2D::zeros(t.rows(), t.cols() - d_x);
        for r in 0..t.rows() {
            let src = &t.row(r)[d_x..];
            z.values_mut()[r * (t.cols() - d_x)..(r + 1) * (t.cols() - d_x)].copy_from_slice(src);
        }
        z
    };

    Ok(MiLoss {
        value: -(joint_term - log_term),
        d_z_joint: take_z(&d_u),
        d_z_marginal: take_z(&d_v),
    })
}

/// Two-critic MI loss with the plain log-term gradient.
pub fn mi_loss(
    m1: &mut DifferentiableNet,
    m2: &mut DifferentiableNet,
    batch: &MiBatch,
) -> Result<MiLoss> {
    mi_loss_scaled(m1, m2, batch, 1.0)
}

/// Single-critic Donsker-Varadhan bound (shared net for both terms):
///
/// `B = mean M(x + z) - log mean e^{M(x + z_bar)}`
///
/// Returns the bound value with its gradients; dB/dtheta is accumulated into
/// the critic. For training (minimization), use [`single_critic_mi_loss`].
pub fn dv_bound_single(critic: &mut DifferentiableNet, batch: &MiBatch) -> Result<MiLoss> {
    single_critic_core(critic, batch, 1.0, 1.0)
}

/// `-B` for the shared-critic estimator, in loss form with matching gradients.
pub fn single_critic_mi_loss(
    critic: &mut DifferentiableNet,
    batch: &MiBatch,
    log_term_scale: f64,
) -> Result<MiLoss> {
    single_critic_core(critic, batch, -1.0, log_term_scale)
}

fn single_critic_core(
    critic: &mut DifferentiableNet,
    batch: &MiBatch,
    sign: f64,
    log_term_scale: f64,
) -> Result<MiLoss> {
    check_critic(critic, batch, "dv_bound_single critic")?;
    let n = batch.len();
    let d_x = batch.x_joint.cols();

    let u = batch.x_joint.concat_cols(&batch.z_joint)?;
    let s1 = critic.forward(&u)?;
    let joint_term = mean(&s1);
    let mut d_s1 = Tensor2D::zeros(n, 1);
    d_s1.values_mut().fill(sign / n as f64);
    let d_u = critic.backward(&d_s1)?;

    let v = batch.x_joint.concat_cols(&batch.z_marginal)?;
    let s2 = critic.forward(&v)?;
    let log_term = log_sum_exp(s2.values())? - (n as f64).ln();
    let mut d_s2 = log_mean_exp_grad(&s2, log_term_scale);
    d_s2.scale(-sign);
    let d_v = critic.backward(&d_s2)?;

    let take_z = |t: &Tensor2D| -> Tensor2D {
        let width = t.cols() - d_x;
        let mut z = Tensor2D::zeros(t.rows(), width);
        for r in 0..t.rows() {
            z.values_mut()[r * width..(r + 1) * width].copy_from_slice(&t.row(r)[d_x..]);
        }
        z
    };

    Ok(MiLoss {
        value: sign * (joint_term - log_term),
        d_z_joint: take_z(&d_u),
        d_z_marginal: take_z(&d_v),
    })
}

/// Read-only two-critic loss value (for metric reporting; no gradients).
pub fn mi_loss_value(
    m1: &DifferentiableNet,
    m2: &DifferentiableNet,
    batch: &MiBatch,
) -> Result<f64> {
    check_critic(m1, batch, "mi_loss m1")?;
    check_critic(m2, batch, "mi_loss m2")?;
    let n = batch.len() as f64;
    let u = batch.x_joint.concat_cols(&batch.z_joint)?;
    let v = batch.x_joint.concat_cols(&batch.z_marginal)?;
    let joint_term = mean(&m1.predict(&u)?);
    let log_term = log_sum_exp(m2.predict(&v)?.values())? - n.ln();
    Ok(-(joint_term - log_term))
}

/// Read-only single-critic bound value.
pub fn dv_bound_value(critic: &DifferentiableNet, batch: &MiBatch) -> Result<f64> {
    check_critic(critic, batch, "dv_bound_single critic")?;
    let n = batch.len() as f64;
    let u = batch.x_joint.concat_cols(&batch.z_joint)?;
    let v = batch.x_joint.concat_cols(&batch.z_marginal)?;
    let joint_term = mean(&critic.predict(&u)?);
    let log_term = log_sum_exp(critic.predict(&v)?.values())? - n.ln();
    Ok(joint_term - log_term)
}

/// `mean M1(joint) - mean M2(joint)`: positive means the two-critic bound
/// hypothesis `E_joint[M2] >= E_joint[M1]` is violated on this batch.
/// Read-only (no gradients, no cache).
pub fn constraint_gap(
    m1: &DifferentiableNet,
    m2: &DifferentiableNet,
    batch: &MiBatch,
) -> Result<f64> {
    let u = batch.x_joint.concat_cols(&batch.z_joint)?;
    let s1 = m1.predict(&u)?;
    let s2 = m2.predict(&u)?;
    Ok(mean(&s1) - mean(&s2))
}

/// One hinge step on `lambda * max(0, gap)`: when the hypothesis is violated,
/// accumulates gradients that pull `mean M1(joint)` down and `mean M2(joint)`
/// up. Returns the gap. No-op on the accumulators when the hinge is inactive.
pub fn constraint_hinge_grads(
    m1: &mut DifferentiableNet,
    m2: &mut DifferentiableNet,
    batch: &MiBatch,
    lambda: f64,
) -> Result<f64> {
    let u = batch.x_joint.concat_cols(&batch.z_joint)?;
    let n = batch.len() as f64;
    let s1 = m1.forward(&u)?;
    let s2 = m2.forward(&u)?;
    let gap = mean(&s1) - mean(&s2);
    if gap > 0.0 && lambda > 0.0 {
        let mut d1 = Tensor2D::zeros(batch.len(), 1);
        d1.values_mut().fill(lambda / n);
        let mut d2 = Tensor2D::zeros(batch.len(), 1);
        d2.values_mut().fill(-lambda / n);
        m1.backward(&d1)?;
        m2.backward(&d2)?;
    } else {
        // Drop the unused caches so later backward calls stay paired.
        m1.zero_cache();
        m2.zero_cache();
    }
    Ok(gap)
}

// ---------------------------------------------------------------------------
// Reconstruction baseline
// ---------------------------------------------------------------------------

/// Mean squared reconstruction error `mean_i ||decoder(z_i) - x_i||^2`, the
/// autoencoder stand-in for the MI term. Accumulates decoder gradients and
/// returns the gradient with respect to `z`.
pub struct ReconLoss {
    pub value: f64,
    pub d_z: Tensor2D,
}

pub fn recon_mi_baseline(
    decoder: &mut DifferentiableNet,
    x: &Tensor2D,
    z: &Tensor2D,
) -> Result<ReconLoss> {
    if decoder.input_dim() != z.cols() {
        return Err(dim_mismatch("recon decoder input", z.cols(), decoder.input_dim()));
    }
    if decoder.output_dim() != x.cols() {
        return Err(dim_mismatch("recon decoder output", x.cols(), decoder.output_dim()));
    }
    if x.rows() != z.rows() {
        return Err(dim_mismatch("recon rows", x.rows(), z.rows()));
    }
    let n = x.rows();
    let y = decoder.forward(z)?;
    let mut value = 0.0;
    let mut d_y = Tensor2D::zeros(n, x.cols());
    let inv_n = 1.0 / n as f64;
    for r in 0..n {
        let (yr, xr) = (y.row(r).to_vec(), x.row(r).to_vec());
        let d = &mut d_y.values_mut()[r * x.cols()..(r + 1) * x.cols()];
        for j in 0..x.cols() {
            let e = yr[j] - xr[j];
            value += e * e * inv_n;
            d[j] = 2.0 * e * inv_n;
        }
    }
    let d_z = decoder.backward(&d_y)?;
    Ok(ReconLoss { value, d_z })
}

// ---------------------------------------------------------------------------
// Breakdown
// ---------------------------------------------------------------------------

/// One batch's objective terms and their weighted total.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_kld: f64,
    pub l_mi: f64,
    pub l_ent: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(
        l_cls: f64,
        l_kld: f64,
        l_mi: f64,
        l_ent: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> Self {
        LossBreakdown {
            l_cls,
            l_kld,
            l_mi,
            l_ent,
            total: l_cls + alpha * l_kld + beta * l_mi + gamma * l_ent,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_cls.is_finite()
            && self.l_kld.is_finite()
            && self.l_mi.is_finite()
            && self.l_ent.is_finite()
            && self.total.is_finite()
    }
}
