//! Latent Gaussian fields with exponential covariance.
//!
//! Analytic covariance/correlation identities for the log-intensity and the
//! intensity of univariate and bivariate log-Gaussian Cox processes, the
//! signed linear model of coregionalisation (`e1 = W1 + W`,
//! `e2 = W2 + sign * W`), and circulant-embedding simulation on regular grids.
//!
//! Every field carries mean `-sigma^2 / 2` so that `E[exp(e)] = 1`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::GridSpec;

/// Negative eigenvalues above `-CLIP_TOLERANCE * max_eigenvalue` are set to
/// zero; anything more negative triggers torus expansion.
pub const CLIP_TOLERANCE: f64 = 1e-9;

/// Maximum torus expansion factor per axis relative to the minimal embedding.
pub const MAX_EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpCovParams {
    pub sigma: f64,
    pub phi: f64,
}

impl ExpCovParams {
    pub fn new(sigma: f64, phi: f64) -> Result<Self> {
        let p = ExpCovParams { sigma, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidParameter(format!("phi must be > 0, got {}", self.phi)));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Mean of the field, `-sigma^2 / 2`.
    pub fn mean(&self) -> f64 {
        -0.5 * self.variance()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+1", alias = "plus", alias = "positive")]
    Plus,
    #[serde(rename = "-1", alias = "minus", alias = "negative")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == 1.0 {
            Ok(Sign::Plus)
        } else if v == -1.0 {
            Ok(Sign::Minus)
        } else {
            Err(Error::InvalidParameter(format!("sign must be +1 or -1, got {v}")))
        }
    }
}

/// Signed linear model of coregionalisation for two processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmcParams {
    pub w1: ExpCovParams,
    pub w2: ExpCovParams,
    pub w: ExpCovParams,
    pub sign: Sign,
}

impl LmcParams {
    pub fn new(w1: ExpCovParams, w2: ExpCovParams, w: ExpCovParams, sign: Sign) -> Result<Self> {
        let p = LmcParams { w1, w2, w, sign };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.w1.validate()?;
        self.w2.validate()?;
        self.w.validate()
    }

    fn own(&self, j: usize) -> Result<&ExpCovParams> {
        match j {
            1 => Ok(&self.w1),
            2 => Ok(&self.w2),
            _ => Err(Error::InvalidParameter(format!("process index must be 1 or 2, got {j}"))),
        }
    }

    /// `Var e_j = sigma_Wj^2 + sigma_W^2`.
    pub fn marginal_variance(&self, j: usize) -> Result<f64> {
        Ok(self.own(j)?.variance() + self.w.variance())
    }
}

pub fn exp_correlation(h: f64, phi: f64) -> f64 {
    (-h / phi).exp()
}

/// `C(h) = sigma^2 exp(-h / phi)`.
pub fn cov_e(h: f64, p: &ExpCovParams) -> f64 {
    p.variance() * exp_correlation(h, p.phi)
}

/// `Corr{Lambda(s), Lambda(u)} = (exp C(h) - 1) / (exp sigma^2 - 1)`.
pub fn lambda_corr(h: f64, p: &ExpCovParams) -> Result<f64> {
    if !(p.sigma > 0.0) {
        return Err(Error::InvalidParameter("intensity correlation undefined for sigma = 0".into()));
    }
    Ok(cov_e(h, p).exp_m1() / p.variance().exp_m1())
}

/// `Cov{Lambda(s), Lambda(u)} = m(s) m(u) (exp C(h) - 1)`, where `m` is the
/// first-order intensity. This is also the covariance density.
pub fn lambda_cov(mean_s: f64, mean_u: f64, h: f64, p: &ExpCovParams) -> f64 {
    mean_s * mean_u * cov_e(h, p).exp_m1()
}

/// `Cov{e_1(s), e_2(u)} = sign * sigma_W^2 exp(-h / phi_W)`.
pub fn cross_cov_e(h: f64, p: &LmcParams) -> f64 {
    p.sign.value() * cov_e(h, &p.w)
}

/// Cross-correlation of the two log-intensities.
pub fn cross_corr_e(h: f64, p: &LmcParams) -> Result<f64> {
    let v1 = p.marginal_variance(1)?;
    let v2 = p.marginal_variance(2)?;
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::InvalidParameter("degenerate marginal variance".into()));
    }
    Ok(cross_cov_e(h, p) / (v1.sqrt() * v2.sqrt()))
}

/// Cross-correlation of the two intensities.
pub fn cross_corr_lambda(h: f64, p: &LmcParams) -> Result<f64> {
    let v1 = p.marginal_variance(1)?;
    let v2 = p.marginal_variance(2)?;
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::InvalidParameter("degenerate marginal variance".into()));
    }
    Ok(cross_cov_e(h, p).exp_m1() / (v1.exp_m1().sqrt() * v2.exp_m1().sqrt()))
}

/// `Cov{e_j(s), e_j(u)} = C_Wj(h) + C_W(h)`; independent of the sign.
pub fn marginal_cov_e(h: f64, p: &LmcParams, j: usize) -> Result<f64> {
    Ok(cov_e(h, p.own(j)?) + cov_e(h, &p.w))
}

/// Marginal correlation of `e_j` at lag `h`.
pub fn marginal_corr_e(h: f64, p: &LmcParams, j: usize) -> Result<f64> {
    let v = p.marginal_variance(j)?;
    if !(v > 0.0) {
        return Err(Error::InvalidParameter("degenerate marginal variance".into()));
    }
    Ok(marginal_cov_e(h, p, j)? / v)
}

/// 2-D FFT over a row-major `m x n` torus (`m` along x, contiguous).
struct Fft2 {
    m: usize,
    n: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.m, self.n)
    }
}

impl Fft2 {
    fn new(m: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            m,
            n,
            row_fwd: planner.plan_fft_forward(m),
            row_inv: planner.plan_fft_inverse(m),
            col_fwd: planner.plan_fft_forward(n),
            col_inv: planner.plan_fft_inverse(n),
        }
    }

    fn run(&self, data: &mut [Complex<f64>], forward: bool) {
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(data);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n];
        for i in 0..self.m {
            for j in 0..self.n {
                buf[j] = data[j * self.m + i];
            }
            col.process(&mut buf);
            for j in 0..self.n {
                data[j * self.m + i] = buf[j];
            }
        }
    }
}

/// Symmetric square root of the exponential correlation matrix on a torus
/// that embeds the grid. `apply_sqrt` maps white noise on the torus to a
/// unit-variance field; the map is self-adjoint, so it also serves as its own
/// transpose for gradient computations.
#[derive(Debug)]
pub struct CirculantEmbedding {
    nx: usize,
    ny: usize,
    m: usize,
    n: usize,
    phi: f64,
    sqrt_eig: Vec<f64>,
    clipped: f64,
    fft: Fft2,
}

fn minimal_size(k: usize) -> usize {
    (2 * k.saturating_sub(1)).max(1).next_power_of_two()
}

impl CirculantEmbedding {
    /// Minimal power-of-two torus, expanded up to [`MAX_EXPANSION`] times per
    /// axis until the spectrum is non-negative within [`CLIP_TOLERANCE`].
    pub fn new(phi: f64, grid: &GridSpec) -> Result<Self> {
        let (m0, n0) = (minimal_size(grid.nx), minimal_size(grid.ny));
        let mut factor = 1;
        loop {
            let (m, n) = (m0 * factor, n0 * factor);
            let (emb, min_rel, min_eig) = Self::with_torus(phi, grid, m, n)?;
            if min_rel >= -CLIP_TOLERANCE {
                return Ok(emb);
            }
            if factor >= MAX_EXPANSION {
                return Err(Error::Embedding {
                    min_eig,
                    relative: min_rel,
                    m,
                    n,
                });
            }
            factor *= 2;
        }
    }

    /// Torus `expansion` times the minimal size per axis, clipping any
    /// negative eigenvalues without a tolerance check.
    pub fn clipped(phi: f64, grid: &GridSpec, expansion: usize) -> Result<Self> {
        let e = expansion.max(1);
        let (m, n) = (minimal_size(grid.nx) * e, minimal_size(grid.ny) * e);
        Ok(Self::with_torus(phi, grid, m, n)?.0)
    }

    /// Embedding on a fixed torus; negative eigenvalues are always clipped.
    /// Returns the embedding, the relative and the absolute minimum eigenvalue.
    pub fn with_torus(phi: f64, grid: &GridSpec, m: usize, n: usize) -> Result<(Self, f64, f64)> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::InvalidParameter(format!("phi must be > 0, got {phi}")));
        }
        if m < grid.nx || n < grid.ny {
            return Err(Error::InvalidGrid("torus smaller than grid".into()));
        }
        let fft = Fft2::new(m, n);
        let mut base = vec![Complex::new(0.0, 0.0); m * n];
        for j in 0..n {
            let lag_y = j.min(n - j) as f64 * grid.dy;
            for i in 0..m {
                let lag_x = i.min(m - i) as f64 * grid.dx;
                base[j * m + i] = Complex::new(exp_correlation(lag_x.hypot(lag_y), phi), 0.0);
            }
        }
        fft.run(&mut base, true);
        let max = base.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let min = base.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        let mut clipped = 0.0;
        let sqrt_eig = base
            .iter()
            .map(|c| {
                if c.re < 0.0 {
                    clipped += -c.re;
                    0.0
                } else {
                    c.re.sqrt()
                }
            })
            .collect();
        let emb = CirculantEmbedding {
            nx: grid.nx,
            ny: grid.ny,
            m,
            n,
            phi,
            sqrt_eig,
            clipped: clipped / (m * n) as f64,
            fft,
        };
        Ok((emb, min / max, min))
    }

    pub fn torus(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Number of white-noise variates, `m * n`.
    pub fn dim(&self) -> usize {
        self.m * self.n
    }

    /// Variance lost to eigenvalue clipping (per unit variance).
    pub fn clipped_variance(&self) -> f64 {
        self.clipped
    }

    /// Eigenvalue of the zero frequency, whose eigenvector is constant.
    pub fn zero_frequency_sqrt(&self) -> f64 {
        self.sqrt_eig[0]
    }

    /// `R^{1/2} x` on the torus.
    pub fn apply_sqrt(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.run(&mut buf, true);
        for (b, s) in buf.iter_mut().zip(&self.sqrt_eig) {
            *b *= *s;
        }
        self.fft.run(&mut buf, false);
        let scale = 1.0 / (self.m * self.n) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Restricts a torus vector to the grid cells (cell order `iy * nx + ix`).
    pub fn restrict(&self, torus: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            out.extend_from_slice(&torus[iy * self.m..iy * self.m + self.nx]);
        }
        out
    }

    /// Zero-pads grid values onto the torus (adjoint of [`Self::restrict`]).
    pub fn extend(&self, grid_vals: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for iy in 0..self.ny {
            out[iy * self.m..iy * self.m + self.nx]
                .copy_from_slice(&grid_vals[iy * self.nx..(iy + 1) * self.nx]);
        }
        out
    }

    /// Unit-variance zero-mean field on the grid from white noise.
    pub fn field(&self, white: &[f64]) -> Vec<f64> {
        self.restrict(&self.apply_sqrt(white))
    }

    pub fn white_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// One realisation of a latent field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    /// `e(s)` for every grid cell.
    pub values: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub seed: u64,
}

/// Reusable simulator for one covariance specification on one grid.
#[derive(Debug)]
pub struct FieldSimulator {
    params: ExpCovParams,
    grid: GridSpec,
    embedding: Option<CirculantEmbedding>,
}

impl FieldSimulator {
    pub fn new(params: ExpCovParams, grid: &GridSpec) -> Result<Self> {
        params.validate()?;
        let embedding = if params.sigma > 0.0 {
            Some(CirculantEmbedding::new(params.phi, grid)?)
        } else {
            None
        };
        Ok(FieldSimulator {
            params,
            grid: grid.clone(),
            embedding,
        })
    }

    /// Like [`Self::new`] but on a clipped torus (see [`CirculantEmbedding::clipped`]).
    pub fn clipped(params: ExpCovParams, grid: &GridSpec, expansion: usize) -> Result<Self> {
        params.validate()?;
        let embedding = if params.sigma > 0.0 {
            Some(CirculantEmbedding::clipped(params.phi, grid, expansion)?)
        } else {
            None
        };
        Ok(FieldSimulator {
            params,
            grid: grid.clone(),
            embedding,
        })
    }

    pub fn embedding(&self) -> Option<&CirculantEmbedding> {
        self.embedding.as_ref()
    }

    /// Zero-mean unit-variance draw (`None` when sigma = 0). Always consumes
    /// the same number of variates for a given torus.
    fn standard_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        self.embedding.as_ref().map(|emb| emb.field(&emb.white_noise(rng)))
    }

    /// Draw of `e` with mean `-sigma^2/2`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mean = self.params.mean();
        match self.standard_draw(rng) {
            Some(z) => z.into_iter().map(|v| mean + self.params.sigma * v).collect(),
            None => vec![mean; self.grid.n_cells()],
        }
    }
}

/// Draws a stationary Gaussian field with mean `-sigma^2 / 2` and
/// exponential covariance on `grid`. Deterministic in `seed`.
pub fn simulate_field(p: &ExpCovParams, grid: &GridSpec, seed: u64) -> Result<FieldSample> {
    let sim = FieldSimulator::new(*p, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(FieldSample {
        grid: grid.clone(),
        values: sim.sample(&mut rng),
        mean: p.mean(),
        variance: p.variance(),
        seed,
    })
}

/// Reusable simulator for the signed coregionalisation model.
#[derive(Debug)]
pub struct LmcSimulator {
    params: LmcParams,
    grid: GridSpec,
    w1: FieldSimulator,
    w2: FieldSimulator,
    w: FieldSimulator,
}

impl LmcSimulator {
    pub fn new(params: LmcParams, grid: &GridSpec) -> Result<Self> {
        params.validate()?;
        Ok(LmcSimulator {
            params,
            grid: grid.clone(),
            w1: FieldSimulator::new(params.w1, grid)?,
            w2: FieldSimulator::new(params.w2, grid)?,
            w: FieldSimulator::new(params.w, grid)?,
        })
    }

    pub fn clipped(params: LmcParams, grid: &GridSpec, expansion: usize) -> Result<Self> {
        params.validate()?;
        Ok(LmcSimulator {
            params,
            grid: grid.clone(),
            w1: FieldSimulator::clipped(params.w1, grid, expansion)?,
            w2: FieldSimulator::clipped(params.w2, grid, expansion)?,
            w: FieldSimulator::clipped(params.w, grid, expansion)?,
        })
    }

    /// `(e1, e2, W)` where `W` is the zero-mean common component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nc = self.grid.n_cells();
        let zero = || vec![0.0; nc];
        let z1 = self.w1.standard_draw(rng).unwrap_or_else(zero);
        let z2 = self.w2.standard_draw(rng).unwrap_or_else(zero);
        let z = self.w.standard_draw(rng).unwrap_or_else(zero);
        let p = &self.params;
        let m1 = -0.5 * (p.w1.variance() + p.w.variance());
        let m2 = -0.5 * (p.w2.variance() + p.w.variance());
        let s = p.sign.value();
        let common: Vec<f64> = z.iter().map(|v| p.w.sigma * v).collect();
        let e1 = (0..nc).map(|i| m1 + p.w1.sigma * z1[i] + common[i]).collect();
        let e2 = (0..nc).map(|i| m2 + p.w2.sigma * z2[i] + s * common[i]).collect();
        (e1, e2, common)
    }
}

/// Draws `(e1, e2)` with `e1 = W1 + W`, `e2 = W2 + sign * W`, each shifted to
/// mean `-(sigma_Wj^2 + sigma_W^2) / 2`.
pub fn simulate_lmc(p: &LmcParams, grid: &GridSpec, seed: u64) -> Result<(FieldSample, FieldSample)> {
    let sim = LmcSimulator::new(*p, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e1, e2, _) = sim.sample(&mut rng);
    let v1 = p.marginal_variance(1)?;
    let v2 = p.marginal_variance(2)?;
    Ok((
        FieldSample {
            grid: grid.clone(),
            values: e1,
            mean: -0.5 * v1,
            variance: v1,
            seed,
        },
        FieldSample {
            grid: grid.clone(),
            values: e2,
            mean: -0.5 * v2,
            variance: v2,
            seed,
        },
    ))
}
