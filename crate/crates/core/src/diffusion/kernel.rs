use crate::error::{domain_err, shape_err, Result};

/// `m_t = 1 − t`.
#[inline]
pub fn mean_coef(t: f64) -> f64 {
    1.0 - t
}

/// `σ_t = sqrt(t (2 − t))`.
#[inline]
pub fn std_coef(t: f64) -> f64 {
    (t * (2.0 - t)).sqrt()
}

/// Draws from the forward kernel given the noise: `m_t y0 + σ_t z`.
pub fn forward_perturb(y0: &[f64], t: f64, z: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(domain_err(format!("time {t} outside [0, 1]")));
    }
    if y0.len() != z.len() {
        return Err(shape_err("y0 and z lengths differ"));
    }
    let (m, s) = (mean_coef(t), std_coef(t));
    Ok(y0.iter().zip(z).map(|(y, z)| m * y + s * z).collect())
}
