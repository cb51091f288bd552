//! L1-regularized logistic regression solved by accelerated proximal gradient
//! with backtracking. Features are standardized internally; the returned
//! weights are folded back onto the raw feature scale.

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticOptions {
    pub l1: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub epochs: usize,
    pub converged: bool,
}

const MIN_STD: f64 = 1e-12;

struct Design {
    n: usize,
    dim: usize,
    /// Non-zero `(column, value)` entries per row on the raw scale.
    rows: Vec<Vec<(u32, f64)>>,
    mean: Vec<f64>,
    std: Vec<f64>,
    y: Vec<f64>,
}

impl Design {
    fn new(xs: &[&[f64]], ys: &[bool]) -> Self {
        let n = xs.len();
        let dim = xs.first().map_or(0, |x| x.len());
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let rows = xs
            .iter()
            .map(|x| {
                x.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| {
                        mean[j] += v;
                        sq[j] += v * v;
                        (j as u32, v)
                    })
                    .collect()
            })
            .collect();
        let nf = n as f64;
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, &s)| {
                *m /= nf;
                (s / nf - *m * *m).max(0.0).sqrt()
            })
            .collect();
        Self {
            n,
            dim,
            rows,
            mean,
            std,
            y: ys.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn active(&self, j: usize) -> bool {
        self.std[j] > MIN_STD
    }

    /// Linear predictors for standardized weights `w` and intercept `b`.
    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        let u: Vec<f64> = (0..self.dim)
            .map(|j| if self.active(j) { w[j] / self.std[j] } else { 0.0 })
            .collect();
        let shift: f64 = u.iter().zip(&self.mean).map(|(a, m)| a * m).sum();
        self.rows
            .iter()
            .map(|row| b - shift + row.iter().map(|&(j, v)| u[j as usize] * v).sum::<f64>())
            .collect()
    }

    fn loss(&self, w: &[f64], b: f64) -> f64 {
        self.margins(w, b)
            .iter()
            .zip(&self.y)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / self.n as f64
    }

    fn loss_and_grad(&self, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
        let nf = self.n as f64;
        let mut loss = 0.0;
        let mut raw = vec![0.0; self.dim];
        let mut rsum = 0.0;
        for ((z, y), row) in self.margins(w, b).iter().zip(&self.y).zip(&self.rows) {
            loss += softplus(*z) - y * z;
            let r = sigmoid(*z) - y;
            rsum += r;
            for &(j, v) in row {
                raw[j as usize] += r * v;
            }
        }
        let gw = (0..self.dim)
            .map(|j| {
                if self.active(j) {
                    (raw[j] - self.mean[j] * rsum) / (nf * self.std[j])
                } else {
                    0.0
                }
            })
            .collect();
        (loss / nf, gw, rsum / nf)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimizes `mean log-loss + l1 * |w|_1` over standardized features; the
/// intercept is unpenalized. Converges when the gradient mapping's max-norm
/// drops below `tolerance`.
pub fn fit_logistic(xs: &[&[f64]], ys: &[bool], opts: &LogisticOptions) -> Result<LogisticFit> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::NoTrainingData("no stacker examples".into()));
    }
    let dim = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.len(),
        });
    }
    if !(opts.l1 >= 0.0 && opts.l1.is_finite()) {
        return Err(Error::InvalidArgument(format!("l1 = {} must be non-negative", opts.l1)));
    }
    let positives = ys.iter().filter(|&&y| y).count();
    if positives == 0 || positives == ys.len() {
        return Err(Error::InvalidArgument(
            "stacker training data must contain both classes".into(),
        ));
    }
    let design = Design::new(xs, ys);
    let prior = positives as f64 / ys.len() as f64;

    let objective = |w: &[f64], b: f64| design.loss(w, b) + opts.l1 * w.iter().map(|v| v.abs()).sum::<f64>();

    let mut w = vec![0.0; dim];
    let mut b = (prior / (1.0 - prior)).ln();
    let mut yw = w.clone();
    let mut yb = b;
    let mut t: f64 = 1.0;
    let mut lip = 1.0;
    let mut f_prev = objective(&w, b);
    let mut epochs = 0;
    let mut converged = false;

    while epochs < opts.max_epochs {
        epochs += 1;
        let (fy, gw, gb) = design.loss_and_grad(&yw, yb);
        let (nw, nb, step_norm) = loop {
            let nw: Vec<f64> = yw
                .iter()
                .zip(&gw)
                .map(|(v, g)| soft_threshold(v - g / lip, opts.l1 / lip))
                .collect();
            let nb = yb - gb / lip;
            let mut lin = (nb - yb) * gb;
            let mut sq = (nb - yb).powi(2);
            let mut inf = (nb - yb).abs();
            for j in 0..dim {
                let d = nw[j] - yw[j];
                lin += d * gw[j];
                sq += d * d;
                inf = inf.max(d.abs());
            }
            if design.loss(&nw, nb) <= fy + lin + 0.5 * lip * sq + 1e-15 || lip > 1e12 {
                break (nw, nb, inf);
            }
            lip *= 2.0;
        };
        let f_new = objective(&nw, nb);
        if lip * step_norm < opts.tolerance {
            w = nw;
            b = nb;
            converged = true;
            break;
        }
        if f_new > f_prev {
            // Momentum overshoot: restart acceleration from the current iterate.
            t = 1.0;
            yw.clone_from(&w);
            yb = b;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        yw = nw.iter().zip(&w).map(|(a, o)| a + beta * (a - o)).collect();
        yb = nb + beta * (nb - b);
        w = nw;
        b = nb;
        t = t_next;
        f_prev = f_new;
    }

    let mut weights = vec![0.0; dim];
    let mut intercept = b;
    for j in 0..dim {
        if design.active(j) && w[j] != 0.0 {
            weights[j] = w[j] / design.std[j];
            intercept -= weights[j] * design.mean[j];
        }
    }
    Ok(LogisticFit {
        weights,
        intercept,
        epochs,
        converged,
    })
}
