//! Overflow-safe softmax and log-sum-exp.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor2D;

/// Row-wise softmax with max-subtraction; every output row sums to 1.
pub fn softmax(logits: &Tensor2D) -> Result<Tensor2D> {
    if !logits.is_finite() {
        return Err(Error::NonFinite {
            context: "softmax input".into(),
        });
    }
    let (n, c) = (logits.rows(), logits.cols());
    let mut out = Tensor2D::zeros(n, c);
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs = &mut out.values_mut()[r * c..(r + 1) * c];
        let mut sum = 0.0;
        for (p, &x) in probs.iter_mut().zip(row) {
            *p = (x - max).exp();
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
    }
    Ok(out)
}

/// `log(sum_i exp(v_i))` via max-shift; exact for constant vectors.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArg("log_sum_exp of an empty vector".into()));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "log_sum_exp input".into(),
        });
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_logits() {
        let x = Tensor2D::new(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        let p = softmax(&x).unwrap();
        for &v in p.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let x = Tensor2D::new(1, 2, vec![1000.0, 0.0]).unwrap();
        let p = softmax(&x).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_reference() {
        // Direct evaluation of e^{x-3}/sum for logits [1,2,3], frozen from an
        // independent computation.
        let x = Tensor2D::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let p = softmax(&x).unwrap();
        let expect = [
            0.09003057317038046,
            0.24472847105479767,
            0.6652409557748219,
        ];
        for (a, e) in p.values().iter().zip(expect) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
    }

    #[test]
    fn lse_basics() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        for c in [-3.5, 0.0, 2.0, 100.0] {
            assert_eq!(log_sum_exp(&[c]).unwrap(), c);
        }
    }

    #[test]
    fn lse_avoids_overflow() {
        // exp(710) overflows f64; the identity LSE(v) = max + LSE(v - max)
        // gives 710 + ln 2.
        let v = log_sum_exp(&[710.0, 710.0]).unwrap();
        assert!((v - 710.6931471805599).abs() < 1e-10);
    }

    #[test]
    fn lse_rejects_empty() {
        assert!(log_sum_exp(&[]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = crate::numerics::Rng::new(seed);
            let values: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-50.0, 50.0)).collect();
            let t = Tensor2D::new(rows, cols, values).unwrap();
            let p = softmax(&t).unwrap();
            for r in 0..rows {
                let s: f64 = p.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn lse_of_constant_vector_is_c_plus_ln_n(c in -200.0f64..200.0, n in 1usize..64) {
            let v = vec![c; n];
            let got = log_sum_exp(&v).unwrap();
            prop_assert!((got - (c + (n as f64).ln())).abs() <= 1e-12);
        }
    }
}
