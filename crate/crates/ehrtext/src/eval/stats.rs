//! Seed aggregation and Welch's unequal-variance t-test.
//!
//! The p-value comes from the regularized incomplete beta function,
//! evaluated with a Lentz-style continued fraction to 1e-6 accuracy.

use crate::error::{Error, Result};
use serde::Serialize;

/// Mean and sample standard deviation (n-1 denominator; 0 for one value).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("aggregate of empty list".to_string()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Renders an aggregate in the report house style.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.3} (\u{b1}{:.3})", mean, std)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Welch {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Welch's two-sample t with Welch-Satterthwaite degrees of freedom and a
/// two-tailed p. Degenerate variances follow the stated conventions: both
/// zero with equal means gives p = 1, both zero with different means gives
/// p = 0.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<Welch> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "welch needs two samples of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, _) = aggregate(a)?;
    let (mb, _) = aggregate(b)?;
    let na = a.len() as f64;
    let nb = b.len() as f64;
    // a constant sample is the degenerate zero-variance case; detect it by
    // exact equality so mean-rounding noise cannot smuggle in a tiny variance
    let const_a = a.windows(2).all(|w| w[0] == w[1]);
    let const_b = b.windows(2).all(|w| w[0] == w[1]);
    if const_a && const_b {
        let df = na + nb - 2.0;
        return Ok(if a[0] == b[0] {
            Welch { t: 0.0, p: 1.0, df }
        } else {
            Welch { t: (a[0] - b[0]).signum() * f64::INFINITY, p: 0.0, df }
        });
    }
    let va = if const_a {
        0.0
    } else {
        a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / (na - 1.0)
    };
    let vb = if const_b {
        0.0
    } else {
        b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / (nb - 1.0)
    };

    let sea = va / na;
    let seb = vb / nb;
    let t = (ma - mb) / (sea + seb).sqrt();
    let df = (sea + seb) * (sea + seb)
        / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
    let p = student_t_two_tailed_p(t, df);
    Ok(Welch { t, p, df })
}

/// Two-tailed p for Student's t: I_x(df/2, 1/2) with x = df / (df + t^2).
fn student_t_two_tailed_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    betainc_regularized(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) via the continued fraction, with
/// the symmetry transform applied so the fraction converges quickly.
pub fn betainc_regularized(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0 && (0.0..=1.0).contains(&x), "betainc domain");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

/// Continued fraction for the incomplete beta (modified Lentz iteration).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-12;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_constant_and_pair() {
        let (m, s) = aggregate(&[0.8, 0.8, 0.8]).unwrap();
        assert!((m - 0.8).abs() < 1e-12);
        assert!(s.abs() < 1e-12);
        let (m, s) = aggregate(&[0.7, 0.9]).unwrap();
        assert!((m - 0.8).abs() < 1e-12);
        assert!((s - 0.1414).abs() < 1e-4);
        assert_eq!(aggregate(&[0.5]).unwrap(), (0.5, 0.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_mean_is_permutation_invariant() {
        let a = [0.3, 0.9, 0.1, 0.7, 0.5];
        let b = [0.5, 0.1, 0.7, 0.9, 0.3];
        let (ma, sa) = aggregate(&a).unwrap();
        let (mb, sb) = aggregate(&b).unwrap();
        assert!((ma - mb).abs() < 1e-15);
        assert!((sa - sb).abs() < 1e-15);
    }

    #[test]
    fn report_format() {
        assert_eq!(format_mean_std(0.809, 0.016), "0.809 (\u{b1}0.016)");
    }

    // Reference t/p/df values below were frozen from scipy.stats.ttest_ind
    // (equal_var=False), scipy 1.15.
    #[test]
    fn welch_matches_references() {
        let cases: [(&[f64], &[f64], f64, f64, f64); 6] = [
            (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0], -1.0, 0.3465935071, 8.0),
            (
                &[0.8, 0.82, 0.79, 0.81, 0.8],
                &[0.75, 0.77, 0.74, 0.76, 0.78],
                5.0471461452,
                0.0013229399,
                7.2745591940,
            ),
            (&[0.7, 0.9], &[0.6, 0.65], 1.6977493753, 0.3178389414, 1.1245136187),
            (
                &[1.0, 1.1, 0.9, 1.05, 0.95, 1.02],
                &[1.4, 1.3, 1.5, 1.45],
                -7.9224469277,
                0.0002789974,
                5.6905213757,
            ),
            (
                &[0.809, 0.816, 0.801, 0.825, 0.794],
                &[0.759, 0.772, 0.741, 0.766, 0.752],
                6.6396344600,
                0.0001625794,
                7.9996323065,
            ),
            (
                &[2.0, 2.0, 2.1, 1.9],
                &[2.05, 1.95, 2.02, 1.98],
                0.0,
                1.0,
                4.6050179873,
            ),
        ];
        for (a, b, t, p, df) in cases {
            let w = welch_ttest(a, b).unwrap();
            assert!((w.t - t).abs() < 1e-4, "t {} vs {}", w.t, t);
            assert!((w.p - p).abs() < 1e-4, "p {} vs {}", w.p, p);
            assert!((w.df - df).abs() < 1e-4, "df {} vs {}", w.df, df);
        }
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.81, 0.79, 0.8, 0.82];
        let w = welch_ttest(&a, &a).unwrap();
        assert_eq!(w.t, 0.0);
        assert!((w.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_conventions() {
        let w = welch_ttest(&[0.809; 5], &[0.777; 5]).unwrap();
        assert_eq!(w.p, 0.0);
        assert!(w.t.is_infinite() && w.t > 0.0);
        let w = welch_ttest(&[0.5; 3], &[0.5; 4]).unwrap();
        assert_eq!(w.p, 1.0);
        assert_eq!(w.t, 0.0);
    }

    #[test]
    fn antisymmetric_in_arguments() {
        let a = [0.7, 0.75, 0.72, 0.8];
        let b = [0.6, 0.66, 0.69];
        let ab = welch_ttest(&a, &b).unwrap();
        let ba = welch_ttest(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-12);
        assert!((ab.p - ba.p).abs() < 1e-12);
        assert!((ab.df - ba.df).abs() < 1e-12);
    }

    #[test]
    fn short_samples_rejected() {
        assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_ttest(&[1.0, 2.0], &[]).is_err());
    }

    #[test]
    fn betainc_endpoints_and_symmetry() {
        assert_eq!(betainc_regularized(2.0, 3.0, 0.0), 0.0);
        assert_eq!(betainc_regularized(2.0, 3.0, 1.0), 1.0);
        // I_x(a,b) = 1 - I_{1-x}(b,a)
        for &(a, b, x) in &[(2.0, 3.0, 0.3), (0.5, 0.5, 0.7), (5.0, 1.5, 0.9)] {
            let lhs = betainc_regularized(a, b, x);
            let rhs = 1.0 - betainc_regularized(b, a, 1.0 - x);
            assert!((lhs - rhs).abs() < 1e-10);
        }
        // I_x(1,1) = x
        assert!((betainc_regularized(1.0, 1.0, 0.42) - 0.42).abs() < 1e-12);
    }
}
