use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::RegressionDataset;
use crate::error::{config_err, shape_err, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetId {
    D5I,
    D5II,
    D10I,
    D10II,
    D10III,
}

impl TargetId {
    pub const ALL: [TargetId; 5] = [
        TargetId::D5I,
        TargetId::D5II,
        TargetId::D10I,
        TargetId::D10II,
        TargetId::D10III,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetId::D5I => "d5-i",
            TargetId::D5II => "d5-ii",
            TargetId::D10I => "d10-i",
            TargetId::D10II => "d10-ii",
            TargetId::D10III => "d10-iii",
        }
    }

    pub fn covariate_dim(self) -> usize {
        match self {
            TargetId::D5I | TargetId::D5II => 5,
            _ => 10,
        }
    }

    pub fn covariate_law(self) -> CovariateLaw {
        match self {
            TargetId::D5I | TargetId::D10II => CovariateLaw::UnitCube,
            _ => CovariateLaw::StandardNormal,
        }
    }
}

impl std::str::FromStr for TargetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        TargetId::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| config_err(format!("unknown target {s:?} (expected d5-i, d5-ii, d10-i, d10-ii or d10-iii)")))
    }
}

impl std::fmt::Display for TargetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateLaw {
    /// `U([0, 1]^d)`
    UnitCube,
    /// `N(0, I_d)`
    StandardNormal,
}

/// A regression function with its covariate law; responses carry standard
/// normal noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTarget {
    id: TargetId,
    /// `(W, b)` of the linear target, drawn once from `U[-1, 1]`.
    linear: Option<(Vec<f64>, f64)>,
    param_seed: u64,
}

impl SyntheticTarget {
    /// `param_seed` only matters for the linear target, whose coefficients
    /// are drawn from it.
    pub fn new(id: TargetId, param_seed: u64) -> Self {
        let linear = (id == TargetId::D10I).then(|| {
            let mut r = rng::substream(param_seed, "d10-i-coefficients", 0);
            let w: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..=1.0)).collect();
            let b = r.random_range(-1.0..=1.0);
            (w, b)
        });
        Self { id, linear, param_seed }
    }

    pub fn id(&self) -> TargetId {
        self.id
    }

    pub fn param_seed(&self) -> u64 {
        self.param_seed
    }

    pub fn linear_coefficients(&self) -> Option<(&[f64], f64)> {
        self.linear.as_ref().map(|(w, b)| (w.as_slice(), *b))
    }

    pub fn covariate_dim(&self) -> usize {
        self.id.covariate_dim()
    }

    pub fn covariate_law(&self) -> CovariateLaw {
        self.id.covariate_law()
    }

    pub fn eval_f0(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.covariate_dim() {
            return Err(shape_err(format!(
                "{} expects {} covariates, got {}",
                self.id,
                self.covariate_dim(),
                x.len()
            )));
        }
        Ok(self.f0(x))
    }

    /// Unchecked evaluation; `x` must have `covariate_dim()` entries.
    pub fn f0(&self, x: &[f64]) -> f64 {
        match self.id {
            TargetId::D5I => (2.0 * x[0] - x[1] + 1.0).powi(2) + (x[2] - 5.0).abs() + (x[3] + x[4] / 2.0).exp(),
            TargetId::D5II => (2.0 * x[0] - 1.0).powi(2) - x[1].powi(3) + ((x[2] + x[3] + x[4]) / 10.0).exp(),
            TargetId::D10I => {
                let (w, b) = self.linear.as_ref().expect("linear target carries coefficients");
                w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b
            }
            TargetId::D10II => {
                3.0 * x[0] + 4.0 * (x[1] - 0.5).powi(2) - x[2] * x[2] + 2.0 * (PI * (x[3] + 2.0 * x[4])).sin()
                    - 5.0 * (x[5] - 0.5).abs()
                    + ((x[6] + x[7] + x[8] + x[9]) / 10.0).exp()
            }
            TargetId::D10III => {
                0.5 * (0..2)
                    .map(|i| {
                        let o = 5 * i;
                        (2.0 * x[o] + x[o + 1]).sin() + 0.5 * (x[o + 2].cos() + x[o + 3] * x[o + 3]) * x[o + 4]
                    })
                    .sum::<f64>()
            }
        }
    }
}

/// `n × d_X` covariates from the target's law.
pub fn generate_covariates(target: &SyntheticTarget, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed);
    let len = n * target.covariate_dim();
    match target.covariate_law() {
        CovariateLaw::UnitCube => (0..len).map(|_| r.random::<f64>()).collect(),
        CovariateLaw::StandardNormal => (0..len).map(|_| r.sample(StandardNormal)).collect(),
    }
}

/// `Y = f0(X) + ε`, `ε ~ N(0, 1)`.
pub fn generate_dataset(target: &SyntheticTarget, n: usize, seed: u64) -> Result<RegressionDataset> {
    if n == 0 {
        return Err(config_err("dataset size must be positive"));
    }
    let x = generate_covariates(target, n, rng::derive_seed(seed, "covariates", 0));
    let mut noise = rng::substream(seed, "noise", 0);
    let y = x
        .chunks_exact(target.covariate_dim())
        .map(|row| target.f0(row) + noise.sample::<f64, _>(StandardNormal))
        .collect();
    RegressionDataset::new(target.covariate_dim(), 1, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas_at_origin() {
        let f = |id, d| SyntheticTarget::new(id, 0).eval_f0(&vec![0.0; d]).unwrap();
        assert!((f(TargetId::D5I, 5) - 7.0).abs() < 1e-15);
        assert!((f(TargetId::D5II, 5) - 2.0).abs() < 1e-15);
        assert!((f(TargetId::D10II, 10) - (-0.5)).abs() < 1e-15);
        assert!((f(TargetId::D10III, 10)).abs() < 1e-15);
    }

    #[test]
    fn formulas_at_hand_points() {
        let t = SyntheticTarget::new(TargetId::D5I, 0);
        let x = [0.5, 0.25, 0.75, 0.1, 0.6];
        let expected = (1.0f64 - 0.25 + 1.0).powi(2) + 4.25 + (0.1f64 + 0.3).exp();
        assert!((t.f0(&x) - expected).abs() < 1e-14);
        let t = SyntheticTarget::new(TargetId::D10III, 0);
        let x = [1.0, 0.5, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let expected = 0.5 * ((2.5f64).sin() + 0.5 * (1.0 + 4.0) * 1.0);
        assert!((t.f0(&x) - expected).abs() < 1e-14);
    }

    #[test]
    fn linear_coefficients_in_range_and_seeded() {
        let a = SyntheticTarget::new(TargetId::D10I, 4);
        let (w, b) = a.linear_coefficients().unwrap();
        assert_eq!(w.len(), 10);
        assert!(w.iter().chain(std::iter::once(&b)).all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, SyntheticTarget::new(TargetId::D10I, 4));
        assert_ne!(a, SyntheticTarget::new(TargetId::D10I, 5));
        let x = [1.0; 10];
        assert!((a.f0(&x) - (w.iter().sum::<f64>() + b)).abs() < 1e-14);
        assert!(SyntheticTarget::new(TargetId::D5I, 0).linear_coefficients().is_none());
    }

    #[test]
    fn shape_and_id_errors() {
        assert!(SyntheticTarget::new(TargetId::D5I, 0).eval_f0(&[0.0; 4]).is_err());
        assert!("d7-i".parse::<TargetId>().is_err());
        assert_eq!("D10-III".parse::<TargetId>().unwrap(), TargetId::D10III);
    }

    #[test]
    fn unit_cube_support_and_determinism() {
        let t = SyntheticTarget::new(TargetId::D5I, 0);
        let d = generate_dataset(&t, 500, 7).unwrap();
        assert!(d.covariates().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d, generate_dataset(&t, 500, 7).unwrap());
        assert_ne!(d, generate_dataset(&t, 500, 8).unwrap());
    }
}
