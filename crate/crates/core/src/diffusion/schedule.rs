use crate::error::{domain_err, Result};

/// Grid construction on `[T, 1 − T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// `t_i = T + i (1 − 2T) / K`.
    Uniform,
    /// Doubling steps from `T` until the uniform grid takes over, so that
    /// `t_{i+1} / t_i ≤ 2` holds everywhere.
    Geometric,
}

impl GridKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GridKind::Uniform => "uniform",
            GridKind::Geometric => "geometric",
        }
    }
}

impl std::str::FromStr for GridKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(GridKind::Uniform),
            "geometric" => Ok(GridKind::Geometric),
            other => Err(crate::Error::Config(format!("unknown grid kind {other:?}"))),
        }
    }
}

/// Truncation time, step count and time grid `T = t_0 < … < t_K = 1 − T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    truncation: f64,
    requested_steps: usize,
    kind: GridKind,
    grid: Vec<f64>,
}

pub fn build_schedule(truncation: f64, steps: usize, kind: GridKind) -> Result<DiffusionSchedule> {
    if !(truncation > 0.0 && truncation < 0.5) {
        return Err(domain_err(format!("truncation time {truncation} outside (0, 0.5)")));
    }
    if steps == 0 {
        return Err(domain_err("step count must be at least 1"));
    }
    let h = (1.0 - 2.0 * truncation) / steps as f64;
    let anchor = |i: usize| {
        if i == steps {
            1.0 - truncation
        } else {
            truncation + i as f64 * h
        }
    };
    let grid = match kind {
        GridKind::Uniform => (0..=steps).map(anchor).collect(),
        GridKind::Geometric => {
            let mut grid = vec![truncation];
            let mut next = 1;
            while next <= steps {
                let t = *grid.last().unwrap();
                let a = anchor(next);
                if 2.0 * t < a {
                    grid.push(2.0 * t);
                } else {
                    grid.push(a);
                    next += 1;
                }
            }
            grid
        }
    };
    Ok(DiffusionSchedule {
        truncation,
        requested_steps: steps,
        kind,
        grid,
    })
}

impl DiffusionSchedule {
    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    /// `K` as requested; the uniform spacing `(1 − 2T)/K` derives from it.
    pub fn requested_steps(&self) -> usize {
        self.requested_steps
    }

    /// Actual number of steps in the grid (larger than `K` for geometric
    /// grids that needed doubling steps).
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Drift step for interval `i`: `(1 − 2T)/K` on a uniform grid, the
    /// interval width otherwise.
    pub fn drift_step(&self, i: usize) -> f64 {
        match self.kind {
            GridKind::Uniform => (1.0 - 2.0 * self.truncation) / self.requested_steps as f64,
            GridKind::Geometric => self.grid[i + 1] - self.grid[i],
        }
    }

    pub fn max_ratio(&self) -> f64 {
        self.grid
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Warnings for grids violating `t_{i+1}/t_i ≤ 2`.
    pub fn lint(&self) -> Vec<String> {
        self.grid
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] / w[0] > 2.0)
            .map(|(i, w)| {
                format!(
                    "t_{}/t_{} = {:.4} exceeds 2 (consider grid = geometric)",
                    i + 1,
                    i,
                    w[1] / w[0]
                )
            })
            .collect()
    }
}
