use crate::bootstrap::BootstrapResult;
use crate::error::{shape_err, Result};

/// Coverage probability, the two mean squared errors and the mean interval
/// length over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cp: f64,
    pub mse_org: f64,
    pub mse_b: f64,
    pub interval_length: f64,
    pub n_test: usize,
}

impl MetricsReport {
    pub fn covered_count(&self) -> usize {
        (self.cp * self.n_test as f64).round() as usize
    }
}

pub fn compute_metrics(result: &BootstrapResult, f0: &[f64]) -> Result<MetricsReport> {
    let n = result.n_points();
    if f0.len() != n || result.ci_lo.len() != n || result.ci_hi.len() != n {
        return Err(shape_err(format!("{} truth values for {n} evaluation points", f0.len())));
    }
    if n == 0 {
        return Err(shape_err("no evaluation points"));
    }
    let covered = (0..n)
        .filter(|&p| result.ci_lo[p] <= f0[p] && f0[p] <= result.ci_hi[p])
        .count();
    let mse_org = (0..n).map(|p| (result.f_hat[p] - f0[p]).powi(2)).sum::<f64>() / n as f64;
    let b = result.n_replicates().max(1) as f64;
    let mse_b = (0..n)
        .map(|p| result.centered_stats.iter().map(|row| row[p] * row[p]).sum::<f64>() / b)
        .sum::<f64>()
        / n as f64;
    let interval_length = (0..n).map(|p| result.ci_hi[p] - result.ci_lo[p]).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        cp: covered as f64 / n as f64,
        mse_org,
        mse_b,
        interval_length,
        n_test: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(f_hat: Vec<f64>, reps: Vec<Vec<f64>>, alpha: f64) -> BootstrapResult {
        let n = f_hat.len();
        let ids = (0..reps.len()).collect();
        BootstrapResult::from_estimates(1, vec![0.0; n], f_hat, ids, reps, alpha, vec![]).unwrap()
    }

    #[test]
    fn perfect_estimator() {
        let r = result(vec![1.0, 2.0], vec![vec![1.0, 2.0]; 3], 0.05);
        let m = compute_metrics(&r, &[1.0, 2.0]).unwrap();
        assert_eq!(m, MetricsReport { cp: 1.0, mse_org: 0.0, mse_b: 0.0, interval_length: 0.0, n_test: 2 });
    }

    #[test]
    fn half_covered() {
        let mut r = result(vec![0.0, 0.5], vec![vec![0.0, 0.5]; 2], 0.05);
        r.ci_lo = vec![-1.0, 0.0];
        r.ci_hi = vec![1.0, 1.0];
        let m = compute_metrics(&r, &[0.0, 10.0]).unwrap();
        assert_eq!(m.cp, 0.5);
        assert_eq!(m.covered_count(), 1);
        assert_eq!(m.interval_length, 1.5);
    }

    #[test]
    fn mismatched_lengths() {
        let r = result(vec![0.0, 0.5], vec![vec![0.0, 0.5]; 2], 0.05);
        assert!(compute_metrics(&r, &[0.0]).is_err());
    }
}
