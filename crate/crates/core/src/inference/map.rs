//! Per-run maximum a posteriori fits (multi-start Nelder–Mead on the
//! transformed scale, clamped to a box).

use rand::Rng as _;

use super::likelihood::{loglik_data, ChoiceData};
use super::transform::{TransformedParams, MAX_PARAMS};
use crate::agents::{AgentParams, UpdateRule};
use crate::error::{Error, Result};
use crate::seed;

/// Box on the transformed scale: logits in [-10, 10], β in [0.01, 100].
pub const Z_LOWER: [f64; MAX_PARAMS] = [-10.0, -10.0, -4.605_170_185_988_091, -10.0];
pub const Z_UPPER: [f64; MAX_PARAMS] = [10.0, 10.0, 4.605_170_185_988_091, 10.0];

/// Runs shorter than this are fitted but flagged low-information.
pub const MIN_INFORMATIVE_TRIALS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub enum MapPrior {
    Flat,
    /// Independent normals on the transformed scale.
    Normal {
        mean: [f64; MAX_PARAMS],
        sd: [f64; MAX_PARAMS],
    },
}

impl MapPrior {
    fn log_density(&self, z: &[f64]) -> f64 {
        match self {
            MapPrior::Flat => 0.0,
            MapPrior::Normal { mean, sd } => z
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let u = (v - mean[k]) / sd[k];
                    -0.5 * u * u
                })
                .sum(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MapConfig {
    pub starts: usize,
    pub max_iter: usize,
    /// Absolute spread of objective values across the simplex at convergence.
    pub tol: f64,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            starts: 5,
            max_iter: 4000,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapFit {
    pub params: AgentParams,
    pub z: TransformedParams,
    /// Log-likelihood plus log-prior at the optimum.
    pub objective: f64,
    pub loglik: f64,
    pub converged: bool,
    /// Some coordinate ended at the edge of the box.
    pub degenerate: bool,
    pub low_information: bool,
}

pub(crate) struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub converged: bool,
}

/// Minimizes `f` with the standard Nelder–Mead simplex (reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2).
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_iter: usize,
) -> NmResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut converged = false;

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        if (fv[n] - fv[0]).abs() <= tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };

        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            let (xc, fc) = if fr < fv[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < fv[n].min(fr) {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    for (x, b) in simplex[i].iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    fv[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap();
    NmResult {
        x: simplex[best].clone(),
        fx: fv[best],
        converged,
    }
}

fn clamp_box(z: &[f64]) -> TransformedParams {
    let mut out = [0.0; MAX_PARAMS];
    for (k, &v) in z.iter().enumerate() {
        out[k] = v.clamp(Z_LOWER[k], Z_UPPER[k]);
    }
    TransformedParams(out)
}

/// Maximizes `loglik + log prior` from `cfg.starts` starting points: the prior
/// mean (or a neutral point for the flat prior) and random draws inside a
/// central sub-box.
pub fn map_fit(rule: UpdateRule, data: &ChoiceData, prior: &MapPrior, cfg: &MapConfig) -> Result<MapFit> {
    let dim = rule.n_params();
    let mut rng = seed::rng(seed::derive(cfg.seed, 0, seed::stream::MAP));
    let objective = |z: &[f64]| -> f64 {
        let zc = clamp_box(z);
        let p = zc.to_natural(rule);
        let v = loglik_data(rule, &p, data) + prior.log_density(zc.as_slice(rule));
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    let first: Vec<f64> = match prior {
        MapPrior::Normal { mean, .. } => mean[..dim].to_vec(),
        MapPrior::Flat => [0.0, 0.0, 1.0, 0.0][..dim].to_vec(),
    };
    let mut best: Option<(NmResult, bool)> = None;
    for s in 0..cfg.starts.max(1) {
        let x0: Vec<f64> = if s == 0 {
            first.clone()
        } else {
            (0..dim)
                .map(|k| if k == 2 { rng.random_range(-1.0..2.5) } else { rng.random_range(-2.5..2.5) })
                .collect()
        };
        let mut res = nelder_mead(objective, &x0, 0.5, cfg.tol, cfg.max_iter);
        // one restart from the optimum guards against a collapsed simplex
        let again = nelder_mead(objective, &res.x, 0.1, cfg.tol, cfg.max_iter);
        if again.fx <= res.fx {
            res = NmResult {
                converged: again.converged,
                ..again
            };
        }
        if !res.fx.is_finite() {
            continue;
        }
        let improves = best.as_ref().is_none_or(|(b, _)| res.fx < b.fx);
        if improves {
            let conv = res.converged;
            best = Some((res, conv));
        }
    }
    let (res, converged) = best.ok_or_else(|| {
        Error::Inference(format!(
            "MAP objective non-finite at all {} starts ({} trials)",
            cfg.starts,
            data.len()
        ))
    })?;
    let z = clamp_box(&res.x);
    let params = z.to_natural(rule);
    let degenerate = (0..dim).any(|k| z.0[k] - Z_LOWER[k] < 1e-3 || Z_UPPER[k] - z.0[k] < 1e-3);
    Ok(MapFit {
        params,
        z,
        objective: -res.fx,
        loglik: loglik_data(rule, &params, data),
        converged,
        degenerate,
        low_information: data.len() < MIN_INFORMATIVE_TRIALS,
    })
}
