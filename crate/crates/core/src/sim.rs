//! Poisson and log-Gaussian Cox process simulation on a grid.
//!
//! Counts are drawn per masked cell and points placed uniformly within the
//! part of the cell that lies in the window.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::covar::DesignMatrix;
use crate::error::{Error, Result};
use crate::geom::{has_duplicates, GridSpec, Point, PointPattern, Window};
use crate::grf::{ExpCovParams, FieldSample, FieldSimulator, LmcParams, LmcSimulator};
use crate::kernel::IntensityField;

/// Attempts at placing a point inside `cell ∩ window` before falling back to
/// the cell centre.
const MAX_PLACEMENT_TRIES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Univariate(ExpCovParams),
    Bivariate(LmcParams),
}

/// `log Lambda_j(s) = Z(s) beta_j + e_j(s)` on the masked cells of a grid.
#[derive(Debug, Clone)]
pub struct LgcpModel {
    pub design: DesignMatrix,
    /// One coefficient vector per process.
    pub beta: Vec<Vec<f64>>,
    pub covariance: Covariance,
    pub window: Arc<Window>,
}

impl LgcpModel {
    pub fn univariate(design: DesignMatrix, beta: Vec<f64>, params: ExpCovParams, window: Arc<Window>) -> Result<Self> {
        let m = LgcpModel {
            design,
            beta: vec![beta],
            covariance: Covariance::Univariate(params),
            window,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn bivariate(
        design: DesignMatrix,
        beta1: Vec<f64>,
        beta2: Vec<f64>,
        params: LmcParams,
        window: Arc<Window>,
    ) -> Result<Self> {
        let m = LgcpModel {
            design,
            beta: vec![beta1, beta2],
            covariance: Covariance::Bivariate(params),
            window,
        };
        m.validate()?;
        Ok(m)
    }

    /// Intercept-only univariate model on `grid`.
    pub fn homogeneous(grid: &GridSpec, window: Arc<Window>, beta0: f64, params: ExpCovParams) -> Result<Self> {
        Self::univariate(DesignMatrix::intercept_only(grid), vec![beta0], params, window)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.covariance {
            Covariance::Univariate(p) => {
                p.validate()?;
                1
            }
            Covariance::Bivariate(p) => {
                p.validate()?;
                2
            }
        };
        if self.beta.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "expected {expected} coefficient vectors, got {}",
                self.beta.len()
            )));
        }
        for b in &self.beta {
            if b.len() != self.design.ncol() {
                return Err(Error::InvalidParameter(format!(
                    "{} coefficients for {} design columns",
                    b.len(),
                    self.design.ncol()
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.design.grid
    }

    pub fn n_processes(&self) -> usize {
        self.beta.len()
    }

    /// `Z beta_j` on the masked cells.
    pub fn linear_predictor(&self, j: usize) -> Vec<f64> {
        self.design.linear_predictor(&self.beta[j])
    }
}

/// Turns a per-row log-intensity into a full-grid intensity field.
pub(crate) fn field_from_log(design: &DesignMatrix, log_rows: &[f64], extra: Option<&[f64]>) -> Result<IntensityField> {
    let grid = &design.grid;
    let mut values = vec![0.0; grid.n_cells()];
    for (r, &cell) in design.cells.iter().enumerate() {
        let eta = log_rows[r] + extra.map_or(0.0, |e| e[cell]);
        let v = eta.exp();
        if !v.is_finite() {
            return Err(Error::Overflow(format!("exp({eta}) at cell {cell}")));
        }
        values[cell] = v;
    }
    IntensityField::new(grid.clone(), values)
}

/// First-order intensity `exp(Z beta_j)` for each process.
pub fn mean_intensity(m: &LgcpModel) -> Result<Vec<IntensityField>> {
    (0..m.n_processes())
        .map(|j| field_from_log(&m.design, &m.linear_predictor(j), None))
        .collect()
}

pub(crate) fn poisson_points<R: Rng + ?Sized>(field: &IntensityField, window: &Window, rng: &mut R) -> Vec<Point> {
    let grid = &field.grid;
    let area = grid.cell_area();
    let mut pts = Vec::new();
    for idx in 0..grid.n_cells() {
        let mu = field.values[idx] * area;
        if !(mu > 0.0) || !grid.is_masked(idx) {
            continue;
        }
        let count = Poisson::new(mu).map(|d| d.sample(rng)).unwrap_or(0.0) as usize;
        let (ix, iy) = (idx % grid.nx, idx / grid.nx);
        let x0 = grid.origin.x + ix as f64 * grid.dx;
        let y0 = grid.origin.y + iy as f64 * grid.dy;
        for _ in 0..count {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_TRIES {
                let p = Point::new(x0 + rng.random::<f64>() * grid.dx, y0 + rng.random::<f64>() * grid.dy);
                if window.contains(&p) {
                    placed = Some(p);
                    break;
                }
            }
            pts.push(placed.unwrap_or_else(|| grid.cell_center(idx)));
        }
    }
    pts
}

/// Independent generator for replicate `k` of a seeded batch.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn pattern(points: Vec<Point>, window: &Arc<Window>) -> PointPattern {
    let simple = !has_duplicates(&points);
    PointPattern::from_parts(points, None, None, Arc::clone(window), simple)
}

/// Inhomogeneous Poisson pattern with `Poisson(value * cell_area)` points per
/// masked cell.
pub fn simulate_poisson(field: &IntensityField, window: Arc<Window>, seed: u64) -> Result<PointPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_poisson_with(field, &window, &mut rng)
}

pub fn simulate_poisson_with<R: Rng + ?Sized>(field: &IntensityField, window: &Arc<Window>, rng: &mut R) -> Result<PointPattern> {
    Ok(pattern(poisson_points(field, window, rng), window))
}

enum Latent {
    Uni(FieldSimulator),
    Bi(LmcSimulator),
}

/// Reusable LGCP simulator: spectral set-up is done once per model.
pub struct LgcpSimulator {
    model: LgcpModel,
    eta: Vec<Vec<f64>>,
    latent: Latent,
}

/// One LGCP realisation.
#[derive(Debug, Clone)]
pub struct LgcpDraw {
    pub patterns: Vec<PointPattern>,
    /// `e` (univariate) or `(e1, e2, W)` (bivariate), full grid.
    pub fields: Vec<FieldSample>,
    pub intensities: Vec<IntensityField>,
}

impl LgcpSimulator {
    pub fn new(model: &LgcpModel) -> Result<Self> {
        model.validate()?;
        let latent = match model.covariance {
            Covariance::Univariate(p) => Latent::Uni(FieldSimulator::new(p, model.grid())?),
            Covariance::Bivariate(p) => Latent::Bi(LmcSimulator::new(p, model.grid())?),
        };
        let eta = (0..model.n_processes()).map(|j| model.linear_predictor(j)).collect();
        Ok(LgcpSimulator {
            model: model.clone(),
            eta,
            latent,
        })
    }

    pub fn model(&self) -> &LgcpModel {
        &self.model
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, seed: u64) -> Result<LgcpDraw> {
        let grid = self.model.grid();
        let sample = |values: Vec<f64>, mean: f64, variance: f64| FieldSample {
            grid: grid.clone(),
            values,
            mean,
            variance,
            seed,
        };
        let fields = match (&self.latent, &self.model.covariance) {
            (Latent::Uni(sim), Covariance::Univariate(p)) => vec![sample(sim.sample(rng), p.mean(), p.variance())],
            (Latent::Bi(sim), Covariance::Bivariate(p)) => {
                let (e1, e2, w) = sim.sample(rng);
                let (v1, v2) = (p.marginal_variance(1)?, p.marginal_variance(2)?);
                vec![
                    sample(e1, -0.5 * v1, v1),
                    sample(e2, -0.5 * v2, v2),
                    sample(w, 0.0, p.w.variance()),
                ]
            }
            _ => unreachable!("simulator built from the model's covariance"),
        };
        let mut intensities = Vec::with_capacity(self.eta.len());
        let mut patterns = Vec::with_capacity(self.eta.len());
        for (j, eta) in self.eta.iter().enumerate() {
            let f = field_from_log(&self.model.design, eta, Some(&fields[j].values))?;
            patterns.push(simulate_poisson_with(&f, &self.model.window, rng)?);
            intensities.push(f);
        }
        Ok(LgcpDraw {
            patterns,
            fields,
            intensities,
        })
    }

    pub fn sample(&self, seed: u64) -> Result<LgcpDraw> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, seed)
    }
}

/// Univariate LGCP draw: pattern and latent field.
pub fn simulate_lgcp(m: &LgcpModel, seed: u64) -> Result<(PointPattern, FieldSample)> {
    if !matches!(m.covariance, Covariance::Univariate(_)) {
        return Err(Error::InvalidParameter("simulate_lgcp needs a univariate model".into()));
    }
    let mut d = LgcpSimulator::new(m)?.sample(seed)?;
    Ok((d.patterns.remove(0), d.fields.remove(0)))
}

/// Bivariate LGCP draw: both patterns and the fields `(e1, e2, W)`.
pub fn simulate_bivariate_lgcp(m: &LgcpModel, seed: u64) -> Result<((PointPattern, PointPattern), [FieldSample; 3])> {
    if !matches!(m.covariance, Covariance::Bivariate(_)) {
        return Err(Error::InvalidParameter("simulate_bivariate_lgcp needs a bivariate model".into()));
    }
    let d = LgcpSimulator::new(m)?.sample(seed)?;
    let mut pats = d.patterns.into_iter();
    let mut fields = d.fields.into_iter();
    let pair = (pats.next().unwrap(), pats.next().unwrap());
    let triple = [fields.next().unwrap(), fields.next().unwrap(), fields.next().unwrap()];
    Ok((pair, triple))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covar::{design_matrix, CovariateStack, Layer};

    fn unit() -> (Arc<Window>, GridSpec) {
        let w = Arc::new(Window::unit_square());
        let g = GridSpec::covering(&w, 10, 10).unwrap();
        (w, g)
    }

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn mean_intensity_constant_cases() {
        let (w, g) = unit();
        let zero = ExpCovParams::new(0.0, 1.0).unwrap();
        let m = LgcpModel::homogeneous(&g, w.clone(), 0.0, zero).unwrap();
        assert!(mean_intensity(&m).unwrap()[0].values.iter().all(|&v| v == 1.0));
        let m = LgcpModel::homogeneous(&g, w, 2f64.ln(), zero).unwrap();
        assert!(mean_intensity(&m).unwrap()[0].values.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn mean_intensity_matches_row_oracle() {
        let (w, g) = unit();
        let mut stack = CovariateStack::new(g.clone());
        for k in 0..6 {
            let vals = (0..g.n_cells()).map(|i| ((i * (k + 3)) % 17) as f64 / 17.0 - 0.4).collect();
            stack = stack.with_layer(Layer::new(format!("v{k}"), vals)).unwrap();
        }
        let beta = vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.25, 0.05];
        let d = design_matrix(&stack);
        let m = LgcpModel::univariate(d, beta.clone(), ExpCovParams::new(0.0, 1.0).unwrap(), w).unwrap();
        let f = &mean_intensity(&m).unwrap()[0];
        for idx in 0..g.n_cells() {
            let mut eta = beta[0];
            for k in 0..6 {
                eta += beta[k + 1] * stack.layers()[k].values[idx];
            }
            assert!((f.values[idx] - eta.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let (w, g) = unit();
        let m = LgcpModel::homogeneous(&g, w, 1000.0, ExpCovParams::new(0.0, 1.0).unwrap()).unwrap();
        assert!(matches!(mean_intensity(&m), Err(Error::Overflow(_))));
    }

    #[test]
    fn poisson_rate_identity() {
        let (w, g) = unit();
        let f = IntensityField::constant(g, 5.0).unwrap();
        let counts: Vec<f64> = (0..10_000)
            .map(|s| simulate_poisson(&f, w.clone(), s).unwrap().len() as f64)
            .collect();
        let (m, sd) = mean_sd(&counts);
        let se = sd / 100.0;
        assert!((m - 5.0).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn zero_field_gives_empty_pattern() {
        let (w, g) = unit();
        let f = IntensityField::constant(g, 0.0).unwrap();
        for s in 0..20 {
            assert!(simulate_poisson(&f, w.clone(), s).unwrap().is_empty());
        }
    }

    #[test]
    fn step_field_region_moments() {
        let (w, g) = unit();
        let vals: Vec<f64> = (0..g.n_cells()).map(|i| if i % g.nx < 5 { 20.0 } else { 60.0 }).collect();
        let f = IntensityField::new(g, vals).unwrap();
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for s in 0..2000 {
            let pp = simulate_poisson(&f, w.clone(), s).unwrap();
            let l = pp.points().iter().filter(|p| p.x < 0.5).count() as f64;
            left.push(l);
            right.push(pp.len() as f64 - l);
        }
        for (xs, mu) in [(&left, 10.0), (&right, 30.0)] {
            let (m, sd) = mean_sd(xs);
            let se = sd / (xs.len() as f64).sqrt();
            assert!((m - mu).abs() < 3.0 * se);
            // Poisson: variance equals mean
            assert!((sd * sd / mu - 1.0).abs() < 0.15);
        }
        let (ml, _) = mean_sd(&left);
        let (mr, _) = mean_sd(&right);
        let cov = left.iter().zip(&right).map(|(a, b)| (a - ml) * (b - mr)).sum::<f64>() / (left.len() as f64 - 1.0);
        let corr = cov / (left.iter().map(|a| (a - ml).powi(2)).sum::<f64>().sqrt() * right.iter().map(|b| (b - mr).powi(2)).sum::<f64>().sqrt() / (left.len() as f64 - 1.0));
        assert!(corr.abs() < 0.08, "corr {corr}");
    }

    #[test]
    fn points_stay_in_irregular_window() {
        let ring = vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(4.0, 1.0),
            Point::new(1.0, 1.3),
            Point::new(1.2, 3.7),
            Point::new(0.0, 3.0),
            Point::new(0.0, 0.0),
        ];
        let w = Arc::new(Window::from_rings(vec![ring]).unwrap());
        let g = GridSpec::covering(&w, 7, 7).unwrap();
        let f = IntensityField::constant(g, 30.0).unwrap();
        for s in 0..20 {
            let pp = simulate_poisson(&f, w.clone(), s).unwrap();
            assert!(pp.points().iter().all(|p| w.contains(p)));
            assert!(pp.is_simple());
        }
    }

    #[test]
    fn lgcp_is_seed_deterministic_and_consistent() {
        let w = Arc::new(Window::rectangle(0.0, 0.0, 10.0, 10.0).unwrap());
        let g = GridSpec::covering(&w, 32, 32).unwrap();
        let m = LgcpModel::homogeneous(&g, w, 0.0, ExpCovParams::new(1.0, 4.0).unwrap()).unwrap();
        let (a, fa) = simulate_lgcp(&m, 11).unwrap();
        let (b, fb) = simulate_lgcp(&m, 11).unwrap();
        assert_eq!(a.points(), b.points());
        assert_eq!(fa.values, fb.values);
        assert_eq!(fa.mean, -0.5);
    }

    #[test]
    fn bivariate_draw_shapes() {
        let w = Arc::new(Window::rectangle(0.0, 0.0, 10.0, 10.0).unwrap());
        let g = GridSpec::covering(&w, 16, 16).unwrap();
        let lmc = LmcParams::new(
            ExpCovParams::new(0.5, 1.0).unwrap(),
            ExpCovParams::new(0.5, 1.0).unwrap(),
            ExpCovParams::new(1.0, 3.0).unwrap(),
            crate::grf::Sign::Minus,
        )
        .unwrap();
        let m = LgcpModel::bivariate(DesignMatrix::intercept_only(&g), vec![0.0], vec![0.5], lmc, w).unwrap();
        let ((p1, p2), [e1, e2, wf]) = simulate_bivariate_lgcp(&m, 3).unwrap();
        assert!(p1.len() + p2.len() > 0);
        for i in 0..g.n_cells() {
            assert!((e1.values[i] + e2.values[i] - (e1.mean + e2.mean)).is_finite());
            let _ = wf.values[i];
        }
        assert!(simulate_lgcp(&m, 1).is_err());
    }
}
