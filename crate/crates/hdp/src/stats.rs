//! Statistical checks used by the validation and acceptance suites:
//! goodness-of-fit, total variation, and simple regression diagnostics.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// Sample mean and unbiased variance.
pub fn sample_mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Pearson chi-square statistic of `observed` counts against `probs`, with
/// `n_draws` total draws. Bins are pooled left to right until each pooled bin
/// has expected count >= 5; returns (statistic, degrees of freedom).
pub fn chi_square_stat(observed: &[u64], probs: &[f64], n_draws: f64) -> (f64, usize) {
    assert_eq!(observed.len(), probs.len());
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut obs_acc, mut exp_acc) = (0.0f64, 0.0f64);
    for (&o, &p) in observed.iter().zip(probs) {
        obs_acc += o as f64;
        exp_acc += p * n_draws;
        if exp_acc >= 5.0 {
            pooled.push((obs_acc, exp_acc));
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
    }
    if exp_acc > 0.0 || obs_acc > 0.0 {
        if let Some(last) = pooled.last_mut() {
            last.0 += obs_acc;
            last.1 += exp_acc;
        } else {
            pooled.push((obs_acc, exp_acc));
        }
    }
    let stat = pooled.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    (stat, pooled.len().saturating_sub(1))
}

/// Chi-square goodness-of-fit test at the given significance level.
/// Distributions that pool to a single bin pass trivially.
pub fn chi_square_fits(observed: &[u64], probs: &[f64], n_draws: f64, significance: f64) -> bool {
    let (stat, df) = chi_square_stat(observed, probs, n_draws);
    if df == 0 {
        return true;
    }
    let critical = ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - significance);
    stat <= critical
}

/// Total variation distance between empirical counts and a reference pmf.
pub fn total_variation(observed: &[u64], probs: &[f64], n_draws: f64) -> f64 {
    assert_eq!(observed.len(), probs.len());
    0.5 * observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| (o as f64 / n_draws - p).abs())
        .sum::<f64>()
}

/// Ordinary least squares of y on x; returns (slope, t statistic of slope).
pub fn ols_slope_t(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    assert!(n > 2.0);
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    let slope = sxy / sxx;
    let rss: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let fit = y_mean + slope * (i as f64 - x_mean);
            (y - fit) * (y - fit)
        })
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (slope, slope / se)
}

/// Two-sided critical value of Student's t with `df` degrees of freedom.
pub fn t_critical(df: usize, alpha: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).unwrap().inverse_cdf(1.0 - alpha / 2.0)
}
