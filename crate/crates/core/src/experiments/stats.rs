//! Correlation statistics for the analysis experiments: Pearson with a
//! t-distributed p-value and Spearman rank correlation.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::ExperimentError;

/// Product-moment correlation and a two-sided p-value from the
/// t-distribution with n-2 degrees of freedom. |r| = 1 reports p = 0.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), ExperimentError> {
    if xs.len() != ys.len() {
        return Err(ExperimentError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(ExperimentError::TooFewPoints { got: xs.len() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ExperimentError::ConstantInput);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p = if 1.0 - r * r <= f64::EPSILON {
        0.0
    } else {
        let dof = n - 2.0;
        let t = r.abs() * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("dof >= 1");
        2.0 * (1.0 - dist.cdf(t))
    };
    Ok((r, p))
}

/// Spearman's rho: Pearson correlation of the ranks, ties averaged.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, ExperimentError> {
    let (r, _) = pearson(&ranks(xs), &ranks(ys))?;
    Ok(r)
}

/// Average ranks (1-based); tied values share the mean of their span.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite rank input"));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = mean_rank;
        }
        i = j + 1;
    }
    out
}

/// Median of a sample; even lengths average the middle pair.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite median input"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_relations_hit_plus_minus_one() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        let (r_up, p_up) = pearson(&xs, &up).unwrap();
        let (r_down, p_down) = pearson(&xs, &down).unwrap();
        assert_eq!(r_up, 1.0);
        assert_eq!(p_up, 0.0);
        assert_eq!(r_down, -1.0);
        assert_eq!(p_down, 0.0);
    }

    #[test]
    fn hand_computed_product_moment() {
        // cov = 8, var_x = var_y = 10, so r = 0.8 exactly; p from the
        // t-distribution with 3 dof at t = 2.3094.
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 5.0];
        let (r, p) = pearson(&xs, &ys).unwrap();
        assert!((r - 0.8).abs() < 1e-12, "r = {r}");
        assert!((p - 0.104088038661828).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn constant_input_is_an_error_not_zero() {
        let xs = [1.0, 1.0, 1.0, 1.0];
        let ys = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            pearson(&xs, &ys),
            Err(ExperimentError::ConstantInput)
        ));
        assert!(matches!(
            pearson(&ys, &xs),
            Err(ExperimentError::ConstantInput)
        ));
        assert!(matches!(
            pearson(&ys[..2], &xs[..2]),
            Err(ExperimentError::TooFewPoints { got: 2 })
        ));
        assert!(matches!(
            pearson(&ys[..3], &xs[..2]),
            Err(ExperimentError::LengthMismatch { xs: 3, ys: 2 })
        ));
    }

    #[test]
    fn spearman_is_rank_based() {
        // Monotone but nonlinear: rho = 1 while pearson r < 1.
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 10.0, 100.0, 1000.0];
        assert_eq!(spearman(&xs, &ys).unwrap(), 1.0);
        let rev: Vec<f64> = ys.iter().rev().cloned().collect();
        assert_eq!(spearman(&xs, &rev).unwrap(), -1.0);
        let (r, _) = pearson(&xs, &ys).unwrap();
        assert!(r < 1.0);
    }

    #[test]
    fn spearman_averages_ties() {
        // Reference values computed with an independent implementation.
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [10.0, 20.0, 25.0, 30.0];
        assert!((spearman(&a, &b).unwrap() - 0.9486832980505139).abs() < 1e-12);
        let a2 = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let b2 = [2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0];
        assert!((spearman(&a2, &b2).unwrap() - 0.19885368120992467).abs() < 1e-12);
    }

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }
}
