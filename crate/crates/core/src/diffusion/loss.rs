//! Denoising score-matching objective.
//!
//! For a response `y0` with covariates `x`, a time `t` and noise `z`, one
//! term of the objective is
//!
//! ```text
//! (1 / (1 − t)) · ‖ b(t, m_t y0 + σ_t z, x) + z / σ_t ‖²
//! ```
//!
//! The strict empirical risk averages this over all `n × m` pairs of data
//! rows and fixed `(t_j, z_j)` draws; the stochastic variant draws a fresh
//! `(t, z)` per row on every call.

use rand::Rng;
use rand_distr::StandardNormal;

use super::kernel::{mean_coef, std_coef};
use crate::data::RegressionDataset;
use crate::error::{domain_err, shape_err, Result};
use crate::mlp::{ForwardCache, Gradients, MlpScoreNet};

/// Scratch buffers for [`dsm_loss_and_grad`].
#[derive(Debug, Default, Clone)]
pub struct DsmScratch {
    inputs: Vec<f64>,
    residual: Vec<f64>,
    cache: ForwardCache,
}

/// Mean weighted DSM loss over `rows` terms given as parallel buffers
/// `x (rows×d_X)`, `y0 (rows×d_Y)`, `t (rows)`, `z (rows×d_Y)`.
///
/// When `grads` is given it is overwritten with the gradient of the mean.
#[allow(clippy::too_many_arguments)]
pub fn dsm_loss_and_grad(
    net: &MlpScoreNet,
    x: &[f64],
    y0: &[f64],
    t: &[f64],
    z: &[f64],
    scratch: &mut DsmScratch,
    grads: Option<&mut Gradients>,
) -> f64 {
    let rows = t.len();
    let dy = net.output_dim();
    let dx = net.input_dim() - 1 - dy;
    assert_eq!(x.len(), rows * dx);
    assert_eq!(y0.len(), rows * dy);
    assert_eq!(z.len(), rows * dy);

    let width = net.input_dim();
    scratch.inputs.clear();
    scratch.inputs.reserve(rows * width);
    for r in 0..rows {
        let (m, s) = (mean_coef(t[r]), std_coef(t[r]));
        scratch.inputs.push(t[r]);
        for k in 0..dy {
            scratch.inputs.push(m * y0[r * dy + k] + s * z[r * dy + k]);
        }
        scratch.inputs.extend_from_slice(&x[r * dx..(r + 1) * dx]);
    }
    let out = net.forward_batch(&scratch.inputs, rows, &mut scratch.cache);

    scratch.residual.clear();
    scratch.residual.resize(rows * dy, 0.0);
    let mut total = 0.0;
    for r in 0..rows {
        let s = std_coef(t[r]);
        let w = 1.0 / (1.0 - t[r]);
        let mut sq = 0.0;
        for k in 0..dy {
            let res = out[r * dy + k] + z[r * dy + k] / s;
            sq += res * res;
            scratch.residual[r * dy + k] = 2.0 * w * res / rows as f64;
        }
        total += w * sq;
    }
    if let Some(g) = grads {
        g.fill_zero();
        net.backward_batch(&scratch.inputs, &scratch.residual, &mut scratch.cache, g);
    }
    total / rows as f64
}

fn check_times(times: &[f64], truncation: f64) -> Result<()> {
    match times
        .iter()
        .find(|&&t| !(t >= truncation && t <= 1.0 - truncation))
    {
        Some(t) => Err(domain_err(format!(
            "time {t} outside [{truncation}, {}]",
            1.0 - truncation
        ))),
        None => Ok(()),
    }
}

fn check_net(net: &MlpScoreNet, data: &RegressionDataset) -> Result<()> {
    if net.output_dim() != data.response_dim()
        || net.input_dim() != 1 + data.response_dim() + data.covariate_dim()
    {
        return Err(shape_err(format!(
            "network {:?} does not fit d_X = {}, d_Y = {}",
            net.layer_sizes(),
            data.covariate_dim(),
            data.response_dim()
        )));
    }
    Ok(())
}

/// Strict empirical risk: `(1/mn) Σ_j Σ_i` over every data row and every
/// fixed draw `(t_j, z_j)`. `noises` is `m × d_Y`, row-major.
pub fn dsm_loss_strict(
    net: &MlpScoreNet,
    data: &RegressionDataset,
    times: &[f64],
    noises: &[f64],
    truncation: f64,
) -> Result<f64> {
    check_net(net, data)?;
    check_times(times, truncation)?;
    let dy = data.response_dim();
    if noises.len() != times.len() * dy {
        return Err(shape_err("noise draws do not match time draws"));
    }
    if data.is_empty() || times.is_empty() {
        return Err(shape_err("empty dataset or draw set"));
    }
    let n = data.len();
    let mut scratch = DsmScratch::default();
    let mut t_col = vec![0.0; n];
    let mut z_col = vec![0.0; n * dy];
    let mut sum = 0.0;
    for (j, &tj) in times.iter().enumerate() {
        t_col.fill(tj);
        for row in z_col.chunks_exact_mut(dy) {
            row.copy_from_slice(&noises[j * dy..(j + 1) * dy]);
        }
        sum += dsm_loss_and_grad(
            net,
            data.covariates(),
            data.responses(),
            &t_col,
            &z_col,
            &mut scratch,
            None,
        );
    }
    Ok(sum / times.len() as f64)
}

/// Minibatch loss with a fresh `t ~ U[T, 1 − T]` and `z ~ N(0, I)` per row,
/// returned with the gradient of the batch mean.
pub fn dsm_loss_stochastic_batch<R: Rng + ?Sized>(
    net: &MlpScoreNet,
    data: &RegressionDataset,
    indices: &[usize],
    truncation: f64,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    check_net(net, data)?;
    if indices.is_empty() {
        return Err(shape_err("empty minibatch"));
    }
    if !(truncation > 0.0 && truncation < 0.5) {
        return Err(domain_err(format!("truncation time {truncation} outside (0, 0.5)")));
    }
    let (dx, dy) = (data.covariate_dim(), data.response_dim());
    let mut x = Vec::with_capacity(indices.len() * dx);
    let mut y = Vec::with_capacity(indices.len() * dy);
    let mut t = Vec::with_capacity(indices.len());
    let mut z = Vec::with_capacity(indices.len() * dy);
    for &i in indices {
        x.extend_from_slice(data.x_row(i));
        y.extend_from_slice(data.y_row(i));
        t.push(rng.random_range(truncation..=1.0 - truncation));
        z.extend((0..dy).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    let mut grads = Gradients::zeros_like(net);
    let mut scratch = DsmScratch::default();
    let loss = dsm_loss_and_grad(net, &x, &y, &t, &z, &mut scratch, Some(&mut grads));
    Ok((loss, grads))
}
