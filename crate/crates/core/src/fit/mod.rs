//! Estimation for log-Gaussian Cox processes: grid likelihood, minimum
//! contrast, MCMC and posterior products.

mod linalg;
mod mcm;
mod mcmc;
mod posterior;
mod products;

pub use mcm::{lgcp_k, lgcp_k_curve, min_contrast, McmOptions, MomentFit};
pub use mcmc::{fit_bivariate, fit_lgcp, fit_univariate, McmcConfig, PriorSpec};
pub use posterior::{AcceptanceLog, ModelKind, ParamSummary, PosteriorSamples, PosteriorSummary};
pub use products::{
    fitted_cross_k, intensity_ratio_map, posterior_correlation_curves, simulate_posterior_log_intensity, CorrelationCurve,
    CorrelationCurves, RatioMap,
};

use crate::covar::DesignMatrix;
use crate::error::{Error, Result};
use crate::geom::{GridSpec, Point, PointPattern};
use crate::kernel::IntensityField;

fn check_aligned(counts: &[f64], log_intensity: &[f64], areas: &[f64]) -> Result<()> {
    if counts.len() != log_intensity.len() || counts.len() != areas.len() {
        return Err(Error::InvalidParameter(format!(
            "misaligned arrays: {} counts, {} log-intensities, {} areas",
            counts.len(),
            log_intensity.len(),
            areas.len()
        )));
    }
    if let Some(i) = log_intensity.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("log-intensity {} at cell {i}", log_intensity[i])));
    }
    Ok(())
}

/// Grid log-likelihood `sum_c n_c log Lambda_c - Lambda_c A_c`.
pub fn riemann_loglik(counts: &[f64], log_intensity: &[f64], areas: &[f64]) -> Result<f64> {
    check_aligned(counts, log_intensity, areas)?;
    let mut acc = 0.0;
    for ((n, l), a) in counts.iter().zip(log_intensity).zip(areas) {
        acc += n * l - l.exp() * a;
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite("log-likelihood overflow".into()));
    }
    Ok(acc)
}

/// Gradient of [`riemann_loglik`] with respect to each `log Lambda_c`:
/// `n_c - Lambda_c A_c`.
pub fn riemann_loglik_grad(counts: &[f64], log_intensity: &[f64], areas: &[f64]) -> Result<Vec<f64>> {
    check_aligned(counts, log_intensity, areas)?;
    Ok(counts
        .iter()
        .zip(log_intensity)
        .zip(areas)
        .map(|((n, l), a)| n - l.exp() * a)
        .collect())
}

/// Index of the masked cell whose centre is nearest to `p`.
pub(crate) fn nearest_masked(grid: &GridSpec, p: &Point) -> Option<usize> {
    if let Some(i) = grid.locate_index(p) {
        if grid.is_masked(i) {
            return Some(i);
        }
    }
    grid.masked_indices()
        .into_iter()
        .min_by(|&a, &b| p.dist(&grid.cell_center(a)).total_cmp(&p.dist(&grid.cell_center(b))))
}

/// Event counts per design row. Points falling in unmasked cells are moved to
/// the nearest masked cell; the number moved is returned alongside.
pub(crate) fn design_counts(pp: &PointPattern, design: &DesignMatrix) -> Result<(Vec<f64>, usize)> {
    let grid = &design.grid;
    let mut row_of = vec![usize::MAX; grid.n_cells()];
    for (r, &c) in design.cells.iter().enumerate() {
        row_of[c] = r;
    }
    let mut counts = vec![0.0; design.nrow()];
    let mut moved = 0;
    for p in pp.points() {
        let direct = grid.locate_index(p).filter(|&i| row_of[i] != usize::MAX);
        let cell = match direct {
            Some(i) => i,
            None => {
                moved += 1;
                nearest_masked(grid, p).ok_or_else(|| Error::InvalidGrid("grid has no masked cells".into()))?
            }
        };
        counts[row_of[cell]] += 1.0;
    }
    Ok((counts, moved))
}

/// Field value at each point, falling back to the nearest masked cell.
pub(crate) fn intensity_at_points(field: &IntensityField, pp: &PointPattern) -> Result<Vec<f64>> {
    pp.points()
        .iter()
        .map(|p| {
            let i = nearest_masked(&field.grid, p).ok_or_else(|| Error::InvalidGrid("grid has no masked cells".into()))?;
            Ok(field.values[i])
        })
        .collect()
}
