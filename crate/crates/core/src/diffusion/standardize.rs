use crate::data::RegressionDataset;
use crate::error::{shape_err, Result};

/// Per-coordinate affine maps bringing covariates and responses to zero mean
/// and unit variance. The VP prior is `N(0, I)`, so responses are modelled
/// on this scale and mapped back after sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationState {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

fn column_moments(data: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = data.len() / width;
    let mut mean = vec![0.0; width];
    for row in data.chunks_exact(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; width];
    for row in data.chunks_exact(width) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / rows as f64).sqrt();
            // constant columns keep unit scale
            if sd.is_finite() && sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl StandardizationState {
    pub fn identity(covariate_dim: usize, response_dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; covariate_dim],
            x_std: vec![1.0; covariate_dim],
            y_mean: vec![0.0; response_dim],
            y_std: vec![1.0; response_dim],
        }
    }

    pub fn fit(data: &RegressionDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(shape_err("cannot standardize an empty dataset"));
        }
        let (x_mean, x_std) = column_moments(data.covariates(), data.covariate_dim());
        let (y_mean, y_std) = column_moments(data.responses(), data.response_dim());
        Ok(Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        })
    }

    pub fn covariate_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn response_dim(&self) -> usize {
        self.y_mean.len()
    }

    pub fn is_valid(&self) -> bool {
        self.x_mean.len() == self.x_std.len()
            && self.y_mean.len() == self.y_std.len()
            && self.x_std.iter().chain(&self.y_std).all(|&s| s > 0.0 && s.is_finite())
            && self.x_mean.iter().chain(&self.y_mean).all(|m| m.is_finite())
    }

    pub fn standardize_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_std).cycle())
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn standardize_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.y_mean.iter().zip(&self.y_std).cycle())
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// In-place inverse of [`standardize_y`](Self::standardize_y) on a
    /// row-major buffer of responses.
    pub fn restore_y(&self, y: &mut [f64]) {
        for (v, (m, s)) in y.iter_mut().zip(self.y_mean.iter().zip(&self.y_std).cycle()) {
            *v = *v * s + m;
        }
    }

    pub fn restore_x(&self, x: &mut [f64]) {
        for (v, (m, s)) in x.iter_mut().zip(self.x_mean.iter().zip(&self.x_std).cycle()) {
            *v = *v * s + m;
        }
    }

    pub fn apply(&self, data: &RegressionDataset) -> Result<RegressionDataset> {
        RegressionDataset::new(
            data.covariate_dim(),
            data.response_dim(),
            self.standardize_x(data.covariates()),
            self.standardize_y(data.responses()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_column_keeps_unit_scale() {
        let d = RegressionDataset::new(1, 1, vec![2.0, 2.0, 2.0], vec![1.0, 2.0, 3.0]).unwrap();
        let s = StandardizationState::fit(&d).unwrap();
        assert_eq!(s.x_std, vec![1.0]);
        assert!(s.is_valid());
        let z = s.apply(&d).unwrap();
        let mean: f64 = z.responses().iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            rows in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -50.0f64..50.0), 2..40),
        ) {
            let x: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let d = RegressionDataset::new(2, 1, x.clone(), y.clone()).unwrap();
            let s = StandardizationState::fit(&d).unwrap();
            prop_assert!(s.is_valid());
            let mut xs = s.standardize_x(&x);
            s.restore_x(&mut xs);
            let mut ys = s.standardize_y(&y);
            s.restore_y(&mut ys);
            for (a, b) in xs.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            for (a, b) in ys.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
