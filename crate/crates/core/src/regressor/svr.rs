use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;
/// Maximal KKT violation accepted at convergence.
const KKT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub tube_epsilon: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tube_epsilon: 0.1,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParam(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tube_epsilon >= 0.0 && self.tube_epsilon.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "tube epsilon must be non-negative, got {}",
                self.tube_epsilon
            )));
        }
        Ok(())
    }
}

/// Linear model `w·h + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub params: SvrParams,
}

impl SvrModel {
    pub fn predict(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.weights.len() {
            return Err(Error::DimMismatch(format!(
                "histogram of length {} against {} weights",
                h.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }
}

/// Fits an ε-insensitive linear SVR with sequential minimal optimisation on the
/// dual, using second-order working-set selection. `x` holds one row per sample.
pub fn train_svr(x: &[Vec<f64>], targets: &[f64], params: SvrParams) -> Result<SvrModel> {
    params.validate()?;
    let n = x.len();
    if n != targets.len() {
        return Err(Error::LengthMismatch(n, targets.len()));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::DimMismatch("ragged histogram rows".into()));
    }
    if x.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("non-finite training value".into()));
    }

    let mut kern = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
            kern[i * n + j] = v;
            kern[j * n + i] = v;
        }
    }
    // Variables 0..n are α (sign +1), n..2n are α* (sign −1).
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |s: usize, t: usize| sign(s) * sign(t) * kern[(s % n) * n + t % n];
    let c = params.c;
    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                params.tube_epsilon - targets[t]
            } else {
                params.tube_epsilon + targets[t - n]
            }
        })
        .collect();
    let at_upper = |a: f64| a >= c;
    let at_lower = |a: f64| a <= 0.0;

    let max_iter = 10_000_000usize.max(100 * l);
    let mut iter = 0;
    loop {
        // i maximises −y∇f over the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut pick_i = None;
        for t in 0..l {
            let cand = if sign(t) > 0.0 {
                (!at_upper(alpha[t])).then(|| -grad[t])
            } else {
                (!at_lower(alpha[t])).then(|| grad[t])
            };
            if let Some(v) = cand {
                if v > gmax {
                    gmax = v;
                    pick_i = Some(t);
                }
            }
        }
        let Some(i) = pick_i else { break };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut pick_j = None;
        let mut best = f64::INFINITY;
        for t in 0..l {
            let (eligible, g, quad_sign) = if sign(t) > 0.0 {
                (!at_lower(alpha[t]), grad[t], -1.0)
            } else {
                (!at_upper(alpha[t]), -grad[t], 1.0)
            };
            if !eligible {
                continue;
            }
            gmax2 = gmax2.max(g);
            let diff = gmax + g;
            if diff > 0.0 {
                let quad = kern[(i % n) * n + i % n] + kern[(t % n) * n + t % n]
                    + quad_sign * 2.0 * sign(i) * q(i, t);
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj < best {
                    best = obj;
                    pick_j = Some(t);
                }
            }
        }
        if gmax + gmax2 < KKT_TOL {
            break;
        }
        let Some(j) = pick_j else { break };
        iter += 1;
        if iter > max_iter {
            return Err(Error::SolverFailure(format!(
                "no convergence after {max_iter} iterations (violation {})",
                gmax + gmax2
            )));
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        let (qii, qjj) = (kern[(i % n) * n + i % n], kern[(j % n) * n + j % n]);
        if sign(i) != sign(j) {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Offset from free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if at_upper(alpha[t]) {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower(alpha[t]) {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let mut weights = vec![0.0; dim];
    for (s, row) in x.iter().enumerate() {
        let coef = alpha[s] - alpha[s + n];
        if coef != 0.0 {
            weights.iter_mut().zip(row).for_each(|(w, v)| *w += coef * v);
        }
    }
    let model = SvrModel {
        weights,
        bias: -rho,
        params,
    };
    if !model.bias.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::SolverFailure("non-finite solution".into()));
    }
    Ok(model)
}

/// Default hyper-parameter grid: C ∈ {10⁻², …, 10³}, tube ∈ {0.01, 0.1, 0.5}.
pub fn default_grid() -> Vec<SvrParams> {
    let mut grid = Vec::new();
    for e in -2..=3 {
        for tube in [0.01, 0.1, 0.5] {
            grid.push(SvrParams {
                c: 10f64.powi(e),
                tube_epsilon: tube,
            });
        }
    }
    grid
}

/// Outcome of one grid candidate on the held-out rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: SvrParams,
    pub rmse: f64,
}

/// Fits every candidate on the training rows and keeps the one with the lowest
/// held-out RMSE; the earliest candidate wins ties.
pub fn select_params(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    held_x: &[Vec<f64>],
    held_y: &[f64],
    grid: &[SvrParams],
) -> Result<(SvrParams, Vec<GridPoint>)> {
    if grid.is_empty() {
        return Err(Error::InvalidParam("empty hyper-parameter grid".into()));
    }
    if held_x.is_empty() || held_x.len() != held_y.len() {
        return Err(Error::LengthMismatch(held_x.len(), held_y.len()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &params in grid {
        let m = train_svr(train_x, train_y, params)?;
        let mut se = 0.0;
        for (h, y) in held_x.iter().zip(held_y) {
            se += (m.predict(h)? - y).powi(2);
        }
        points.push(GridPoint {
            params,
            rmse: (se / held_y.len() as f64).sqrt(),
        });
    }
    let best = points
        .iter()
        .fold(None::<&GridPoint>, |acc, p| match acc {
            Some(a) if a.rmse <= p.rmse => Some(a),
            _ => Some(p),
        })
        .expect("non-empty grid");
    Ok((best.params, points))
}
