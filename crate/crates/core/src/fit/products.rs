//! Quantities derived from posterior draws: correlation curves, simulated
//! intensity ratios and fitted cross-K envelopes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covar::DesignMatrix;
use crate::error::{Error, Result};
use crate::geom::{GridSpec, PointPattern};
use crate::grf::{cross_corr_e, exp_correlation, marginal_corr_e, FieldSimulator, LmcSimulator};
use crate::kernel::quantile_sorted;
use crate::ripley::{cross_k_inhom, envelope_from_curves, KKind, KResult};
use crate::sim::{field_from_log, replicate_rng, simulate_poisson_with};
use crate::svg::Flag;

use super::intensity_at_points;
use super::posterior::{summarize, ModelKind, PosteriorSamples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    /// `"e"` for a univariate fit; `"e1"`, `"e2"` or `"cross"` otherwise.
    pub name: String,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurves {
    pub distances: Vec<f64>,
    pub curves: Vec<CorrelationCurve>,
}

impl CorrelationCurves {
    pub fn get(&self, name: &str) -> Option<&CorrelationCurve> {
        self.curves.iter().find(|c| c.name == name)
    }

    /// Columns `h`, then `<name>_median,<name>_lo,<name>_hi` per curve.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h");
        for c in &self.curves {
            s.push_str(&format!(",{0}_median,{0}_lo,{0}_hi", c.name));
        }
        s.push('\n');
        for (i, h) in self.distances.iter().enumerate() {
            s.push_str(&h.to_string());
            for c in &self.curves {
                s.push_str(&format!(",{},{},{}", c.median[i], c.lower[i], c.upper[i]));
            }
            s.push('\n');
        }
        s
    }
}

/// Pointwise posterior median and 95% band of the log-intensity correlation
/// at each distance.
pub fn posterior_correlation_curves(s: &PosteriorSamples, distances: &[f64]) -> Result<CorrelationCurves> {
    let nd = s.n_draws();
    if nd == 0 {
        return Err(Error::InvalidParameter("no posterior draws".into()));
    }
    let mut per_name: Vec<(String, Vec<Vec<f64>>)> = match s.model {
        ModelKind::Univariate => vec![("e".into(), Vec::new())],
        ModelKind::Bivariate { .. } => vec![("e1".into(), Vec::new()), ("e2".into(), Vec::new()), ("cross".into(), Vec::new())],
    };
    for d in 0..nd {
        match s.model {
            ModelKind::Univariate => {
                let phi = s.phi[d][0];
                per_name[0].1.push(distances.iter().map(|&h| exp_correlation(h, phi)).collect());
            }
            ModelKind::Bivariate { .. } => {
                let p = s.lmc_params(d)?;
                for j in 0..2 {
                    let c = distances.iter().map(|&h| marginal_corr_e(h, &p, j + 1)).collect::<Result<Vec<_>>>()?;
                    per_name[j].1.push(c);
                }
                let c = distances.iter().map(|&h| cross_corr_e(h, &p)).collect::<Result<Vec<_>>>()?;
                per_name[2].1.push(c);
            }
        }
    }
    let curves = per_name
        .into_iter()
        .map(|(name, draws)| {
            let mut median = Vec::with_capacity(distances.len());
            let mut lower = Vec::with_capacity(distances.len());
            let mut upper = Vec::with_capacity(distances.len());
            for i in 0..distances.len() {
                let col: Vec<f64> = draws.iter().map(|c| c[i]).collect();
                let (m, lo, hi) = summarize(&col, 0.95);
                median.push(m);
                lower.push(lo);
                upper.push(hi);
            }
            CorrelationCurve {
                name,
                median,
                lower,
                upper,
            }
        })
        .collect();
    Ok(CorrelationCurves {
        distances: distances.to_vec(),
        curves,
    })
}

fn draw_index(k: usize, n_sim: usize, n_draws: usize) -> usize {
    k * n_draws / n_sim
}

fn check_design(s: &PosteriorSamples, design: &DesignMatrix) -> Result<()> {
    if !s.grid.same_as(&design.grid) {
        return Err(Error::GridMismatch("design grid differs from the posterior grid".into()));
    }
    if design.ncol() != s.covariates.len() {
        return Err(Error::InvalidParameter(format!(
            "design has {} columns, posterior has {} coefficients",
            design.ncol(),
            s.covariates.len()
        )));
    }
    Ok(())
}

/// Unconditional log-intensity of `process` (0-based) for posterior draw `d`,
/// with `e` drawn from `rng`. Unmasked cells are NaN.
fn log_intensity_draw<R: rand::Rng + ?Sized>(
    s: &PosteriorSamples,
    design: &DesignMatrix,
    process: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let e = match s.model {
        ModelKind::Univariate => FieldSimulator::clipped(s.exp_params(d)?, &s.grid, 1)?.sample(rng),
        ModelKind::Bivariate { .. } => {
            let (e1, e2, _) = LmcSimulator::clipped(s.lmc_params(d)?, &s.grid, 1)?.sample(rng);
            if process == 0 { e1 } else { e2 }
        }
    };
    let zb = design.linear_predictor(&s.beta[d][process]);
    let mut out = vec![f64::NAN; s.grid.n_cells()];
    for (r, &c) in design.cells.iter().enumerate() {
        out[c] = zb[r] + e[c];
    }
    Ok(out)
}

/// `n_sim` draws of the log-intensity of `process` (0-based), each from a
/// posterior draw spread evenly over the chain and a fresh latent field.
/// Simulation `k` uses stream `k` of `seed`. Unmasked cells are NaN.
pub fn simulate_posterior_log_intensity(
    s: &PosteriorSamples,
    design: &DesignMatrix,
    process: usize,
    n_sim: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_design(s, design)?;
    if process >= s.n_processes() || n_sim == 0 || s.n_draws() == 0 {
        return Err(Error::InvalidParameter("need a valid process index, n_sim >= 1 and draws".into()));
    }
    (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            log_intensity_draw(s, design, process, draw_index(k, n_sim, s.n_draws()), &mut rng)
        })
        .collect()
}

/// Per-cell summary of simulated intensity ratios `Lambda_a / Lambda_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMap {
    pub grid: GridSpec,
    /// NaN outside the mask.
    pub median: Vec<f64>,
    /// 0.5% and 99.5% quantiles.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub flags: Vec<Flag>,
    pub n_sim: usize,
}

impl RatioMap {
    pub fn n_plus(&self) -> usize {
        self.flags.iter().filter(|f| **f == Flag::Plus).count()
    }

    pub fn n_cross(&self) -> usize {
        self.flags.iter().filter(|f| **f == Flag::Cross).count()
    }

    /// Flags as `1` (+), `-1` (x) or `0` per cell, for an ASCII grid overlay.
    pub fn flag_codes(&self) -> Vec<f64> {
        self.flags
            .iter()
            .map(|f| match f {
                Flag::Plus => 1.0,
                Flag::Cross => -1.0,
                Flag::None => 0.0,
            })
            .collect()
    }
}

/// Ratio of the intensity of `process` under fit `a` to that under fit `b`.
///
/// Both fits are simulated with the same random stream per replicate, so the
/// latent-field noise is shared between numerator and denominator. A cell is
/// flagged `+` when the 99% interval of the ratio lies above 1 and `x` when
/// it lies below.
pub fn intensity_ratio_map(
    a: &PosteriorSamples,
    design_a: &DesignMatrix,
    b: &PosteriorSamples,
    design_b: &DesignMatrix,
    process: usize,
    n_sim: usize,
    seed: u64,
) -> Result<RatioMap> {
    if !a.grid.same_as(&b.grid) {
        return Err(Error::GridMismatch("posteriors were fitted on different grids".into()));
    }
    check_design(a, design_a)?;
    check_design(b, design_b)?;
    if design_a.cells != design_b.cells {
        return Err(Error::GridMismatch("designs cover different cells".into()));
    }
    if process >= a.n_processes() || process >= b.n_processes() || n_sim == 0 || a.n_draws() == 0 || b.n_draws() == 0 {
        return Err(Error::InvalidParameter("need a valid process index, n_sim >= 1 and draws".into()));
    }
    let cells = &design_a.cells;
    let draws: Vec<Vec<f32>> = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let la = log_intensity_draw(a, design_a, process, draw_index(k, n_sim, a.n_draws()), &mut replicate_rng(seed, k as u64))?;
            let lb = log_intensity_draw(b, design_b, process, draw_index(k, n_sim, b.n_draws()), &mut replicate_rng(seed, k as u64))?;
            Ok(cells.iter().map(|&c| (la[c] - lb[c]).exp() as f32).collect())
        })
        .collect::<Result<_>>()?;
    let nc = a.grid.n_cells();
    let mut median = vec![f64::NAN; nc];
    let mut lower = vec![f64::NAN; nc];
    let mut upper = vec![f64::NAN; nc];
    let mut flags = vec![Flag::None; nc];
    let mut col = vec![0.0; n_sim];
    for (r, &c) in cells.iter().enumerate() {
        for (v, d) in col.iter_mut().zip(&draws) {
            *v = d[r] as f64;
        }
        col.sort_by(f64::total_cmp);
        median[c] = quantile_sorted(&col, 0.5);
        lower[c] = quantile_sorted(&col, 0.005);
        upper[c] = quantile_sorted(&col, 0.995);
        flags[c] = if lower[c] > 1.0 {
            Flag::Plus
        } else if upper[c] < 1.0 {
            Flag::Cross
        } else {
            Flag::None
        };
    }
    Ok(RatioMap {
        grid: a.grid.clone(),
        median,
        lower,
        upper,
        flags,
        n_sim,
    })
}

/// Cross-K of `(pp1, pp2)` against curves from `n_sim` bivariate patterns
/// simulated from posterior draws. Both the empirical and the simulated
/// curves use the first-order intensities `exp(Z beta_j)` at the posterior
/// median of `beta`, looked up at the points.
#[allow(clippy::too_many_arguments)]
pub fn fitted_cross_k(
    s: &PosteriorSamples,
    design: &DesignMatrix,
    pp1: &PointPattern,
    pp2: &PointPattern,
    n_sim: usize,
    radii: &[f64],
    level: f64,
    seed: u64,
) -> Result<KResult> {
    if !matches!(s.model, ModelKind::Bivariate { .. }) {
        return Err(Error::InvalidParameter("fitted cross-K needs a bivariate posterior".into()));
    }
    check_design(s, design)?;
    if n_sim < 2 || s.n_draws() == 0 {
        return Err(Error::InvalidParameter(format!("n_sim must be >= 2, got {n_sim}")));
    }
    let first_order: Vec<_> = (0..2)
        .map(|j| {
            let p = design.ncol();
            let beta: Vec<f64> = (0..p)
                .map(|i| {
                    let mut col: Vec<f64> = s.beta.iter().map(|d| d[j][i]).collect();
                    col.sort_by(f64::total_cmp);
                    quantile_sorted(&col, 0.5)
                })
                .collect();
            field_from_log(design, &design.linear_predictor(&beta), None)
        })
        .collect::<Result<_>>()?;
    let l1 = intensity_at_points(&first_order[0], pp1)?;
    let l2 = intensity_at_points(&first_order[1], pp2)?;
    let khat = cross_k_inhom(pp1, pp2, &l1, &l2, radii)?;
    let window = pp1.window_arc();
    let curves = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            let d = draw_index(k, n_sim, s.n_draws());
            let (e1, e2, _) = LmcSimulator::clipped(s.lmc_params(d)?, &s.grid, 1)?.sample(&mut rng);
            let f1 = field_from_log(design, &design.linear_predictor(&s.beta[d][0]), Some(&e1))?;
            let f2 = field_from_log(design, &design.linear_predictor(&s.beta[d][1]), Some(&e2))?;
            let q1 = simulate_poisson_with(&f1, &window, &mut rng)?;
            let q2 = simulate_poisson_with(&f2, &window, &mut rng)?;
            if q1.is_empty() || q2.is_empty() || !q1.is_simple() || !q2.is_simple() {
                return Ok(vec![0.0; radii.len()]);
            }
            let m1 = intensity_at_points(&first_order[0], &q1)?;
            let m2 = intensity_at_points(&first_order[1], &q2)?;
            cross_k_inhom(&q1, &q2, &m1, &m2, radii)
        })
        .collect::<Result<Vec<_>>>()?;
    let env = envelope_from_curves(radii, curves, level)?;
    KResult::new(KKind::Cross, khat, &env)
}
