//! Metropolis-within-Gibbs sampler for univariate and bivariate LGCPs on a
//! grid.
//!
//! Each latent component `k` is `sigma_k R_k^{1/2} Gamma_k` with white noise
//! `Gamma_k` on a fixed circulant torus. Process `j` has log-intensity
//! `Z beta_j + sum_k a_jk (sigma_k Y_k - sigma_k^2 / 2)` with loadings
//! `a_jk` in `{0, 1, sign}`. Per iteration:
//!
//! * joint MALA on all `Gamma_k`;
//! * preconditioned MALA on each `beta_j`;
//! * a ridge move trading the intercept of process `j` against the constant
//!   mode of its own component (likelihood unchanged);
//! * joint random-walk Metropolis on each `(log sigma_k, log phi_k)`.
//!
//! Step sizes adapt by Robbins-Monro during burn-in and are frozen after.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covar::{design_matrix, CovariateStack, DesignMatrix};
use crate::error::{Error, Result};
use crate::geom::PointPattern;
use crate::grf::{CirculantEmbedding, Sign};
use crate::sim::field_from_log;

use super::linalg::{chol_solve, cholesky, quad_form, solve_upper_t};
use super::posterior::{AcceptanceLog, ModelKind, PosteriorSamples};
use super::{design_counts, min_contrast, McmOptions};

/// Acceptance target for the ridge move and the covariance-parameter walk.
const RWM_TARGET: f64 = 0.3;
/// Smallest admissible adapted step.
const MIN_STEP: f64 = 1e-12;
/// Bounds on the initial `sigma` taken from minimum contrast.
const INIT_SIGMA: (f64, f64) = (0.2, 3.0);

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta_var: f64,
    pub log_sigma_mean: f64,
    pub log_sigma_var: f64,
    /// Prior centre of `log phi`; taken from minimum contrast when absent.
    pub log_phi_mean: Option<f64>,
    pub log_phi_var: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            beta_var: 1e6,
            log_sigma_mean: 0.0,
            log_sigma_var: 0.15,
            log_phi_mean: None,
            log_phi_var: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub n_samples: usize,
    /// Initial Langevin step for the latent fields.
    pub latent_step: f64,
    /// Initial random-walk scale for `(log sigma, log phi)`.
    pub param_step: f64,
    pub prior: PriorSpec,
    pub seed: u64,
    /// Acceptance rate targeted by the Langevin updates.
    pub target_accept: f64,
    /// Torus size as a multiple of the minimal embedding per axis.
    pub torus_expansion: usize,
    pub mcm: McmOptions,
    /// Switching this off samples the prior; used to check the sampler.
    #[serde(default = "yes")]
    pub likelihood: bool,
}

impl McmcConfig {
    fn base(seed: u64, burn_in: usize, thin: usize, n_samples: usize) -> Self {
        McmcConfig {
            burn_in,
            thin,
            n_samples,
            latent_step: 0.05,
            param_step: 0.1,
            prior: PriorSpec::default(),
            seed,
            target_accept: 0.574,
            torus_expansion: 1,
            mcm: McmOptions::default(),
            likelihood: true,
        }
    }

    /// Burn-in 10^6, 1000 draws thinned every 3000.
    pub fn long_univariate(seed: u64) -> Self {
        Self::base(seed, 1_000_000, 3000, 1000)
    }

    /// Burn-in 10^6, 1000 draws thinned every 5000.
    pub fn long_bivariate(seed: u64) -> Self {
        Self::base(seed, 1_000_000, 5000, 1000)
    }

    /// Burn-in 2 * 10^4, 500 draws thinned every 20.
    pub fn desk(seed: u64) -> Self {
        Self::base(seed, 20_000, 20, 500)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.prior;
        if self.thin == 0 || self.n_samples == 0 {
            return Err(Error::Config("thin and n_samples must be >= 1".into()));
        }
        if !(p.beta_var > 0.0 && p.log_sigma_var > 0.0 && p.log_phi_var > 0.0) {
            return Err(Error::Config("prior variances must be > 0".into()));
        }
        if !(self.latent_step > 0.0 && self.param_step > 0.0) {
            return Err(Error::Config("initial steps must be > 0".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must be in (0, 1)".into()));
        }
        if self.torus_expansion == 0 {
            return Err(Error::Config("torus_expansion must be >= 1".into()));
        }
        Ok(())
    }
}

struct Comp {
    emb: CirculantEmbedding,
    ls: f64,
    lp: f64,
    gamma: Vec<f64>,
    /// Unit-variance field on the grid, `restrict(R^{1/2} Gamma)`.
    y: Vec<f64>,
    prior_lp: f64,
    step: f64,
}

impl Comp {
    fn sigma(&self) -> f64 {
        self.ls.exp()
    }
}

#[derive(Clone)]
struct Eval {
    loglik: f64,
    resid: Vec<f64>,
}

struct Proc {
    beta: Vec<f64>,
    counts: Vec<f64>,
    zb: Vec<f64>,
    load: Vec<(usize, f64)>,
    eval: Eval,
    fisher: Vec<f64>,
    chol: Vec<f64>,
    step: f64,
    ridge: Option<usize>,
    ridge_step: f64,
}

#[derive(Default, Clone)]
struct Rate {
    acc: f64,
    n: f64,
}

impl Rate {
    fn push(&mut self, a: f64) {
        self.acc += a;
        self.n += 1.0;
    }
    fn value(&self) -> f64 {
        if self.n > 0.0 { self.acc / self.n } else { 0.0 }
    }
}

struct Chain<'a> {
    design: &'a DesignMatrix,
    area: f64,
    comps: Vec<Comp>,
    procs: Vec<Proc>,
    prior: PriorSpec,
    likelihood: bool,
    latent_step: f64,
    /// `sigma_k R_k^{1/2} extend(sum_j a_jk resid_j)` per component.
    lik_grad: Option<Vec<Vec<f64>>>,
    rng: ChaCha8Rng,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn adapt(step: &mut f64, t: usize, a: f64, target: f64) -> Result<()> {
    let gamma = (t as f64 + 1.0).powf(-0.6);
    *step *= (gamma * (a - target)).exp();
    if !(*step >= MIN_STEP) || !step.is_finite() {
        return Err(Error::Mcmc(format!("step size collapsed to {step:e} during adaptation")));
    }
    Ok(())
}

fn accept_prob(log_alpha: f64) -> f64 {
    if log_alpha.is_nan() { 0.0 } else { log_alpha.min(0.0).exp() }
}

impl<'a> Chain<'a> {
    fn eval(&self, j: usize, zb: &[f64], ys: &[&[f64]], sigmas: &[f64]) -> Option<Eval> {
        let p = &self.procs[j];
        let n = self.design.nrow();
        if !self.likelihood {
            return Some(Eval {
                loglik: 0.0,
                resid: vec![0.0; n],
            });
        }
        let shift: f64 = p.load.iter().map(|&(k, a)| 0.5 * a * a * sigmas[k] * sigmas[k]).sum();
        let mut loglik = 0.0;
        let mut resid = Vec::with_capacity(n);
        for r in 0..n {
            let c = self.design.cells[r];
            let mut eta = zb[r] - shift;
            for &(k, a) in &p.load {
                eta += a * sigmas[k] * ys[k][c];
            }
            let lam = eta.exp() * self.area;
            if !lam.is_finite() {
                return None;
            }
            loglik += p.counts[r] * eta - lam;
            resid.push(p.counts[r] - lam);
        }
        Some(Eval { loglik, resid })
    }

    fn current_ys(&self) -> Vec<&[f64]> {
        self.comps.iter().map(|c| c.y.as_slice()).collect()
    }

    fn current_sigmas(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c.sigma()).collect()
    }

    fn latent_lik_grad(&self, evals: &[&Eval], sigmas: &[f64]) -> Vec<Vec<f64>> {
        let ncell = self.design.grid.n_cells();
        self.comps
            .iter()
            .enumerate()
            .map(|(k, comp)| {
                let mut v = vec![0.0; ncell];
                for (j, p) in self.procs.iter().enumerate() {
                    for &(kk, a) in &p.load {
                        if kk == k {
                            for (r, &c) in self.design.cells.iter().enumerate() {
                                v[c] += a * evals[j].resid[r];
                            }
                        }
                    }
                }
                let mut g = comp.emb.apply_sqrt(&comp.emb.extend(&v));
                for x in g.iter_mut() {
                    *x *= sigmas[k];
                }
                g
            })
            .collect()
    }

    fn ensure_grad(&mut self) {
        if self.lik_grad.is_none() {
            let evals: Vec<&Eval> = self.procs.iter().map(|p| &p.eval).collect();
            let g = self.latent_lik_grad(&evals, &self.current_sigmas());
            self.lik_grad = Some(g);
        }
    }

    fn latent_step_update(&mut self) -> f64 {
        self.ensure_grad();
        let h = self.latent_step;
        let sh = h.sqrt();
        let sigmas = self.current_sigmas();
        let lik_grad = self.lik_grad.as_ref().unwrap();
        let mut props = Vec::with_capacity(self.comps.len());
        let mut fwd = 0.0;
        for (k, comp) in self.comps.iter().enumerate() {
            let xi = normal_vec(&mut self.rng, comp.gamma.len());
            let prop: Vec<f64> = comp
                .gamma
                .iter()
                .zip(&lik_grad[k])
                .zip(&xi)
                .map(|((g, lg), x)| g + 0.5 * h * (lg - g) + sh * x)
                .collect();
            fwd += sq_norm(&xi) * 0.5;
            props.push(prop);
        }
        let ys: Vec<Vec<f64>> = self.comps.iter().zip(&props).map(|(c, p)| c.emb.field(p)).collect();
        let yref: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
        let mut evals = Vec::with_capacity(self.procs.len());
        for j in 0..self.procs.len() {
            match self.eval(j, &self.procs[j].zb, &yref, &sigmas) {
                Some(e) => evals.push(e),
                None => return 0.0,
            }
        }
        let eref: Vec<&Eval> = evals.iter().collect();
        let new_grad = self.latent_lik_grad(&eref, &sigmas);
        let mut log_alpha = 0.0;
        for j in 0..self.procs.len() {
            log_alpha += evals[j].loglik - self.procs[j].eval.loglik;
        }
        let mut bwd = 0.0;
        for (k, comp) in self.comps.iter().enumerate() {
            log_alpha += -0.5 * sq_norm(&props[k]) + 0.5 * sq_norm(&comp.gamma);
            for i in 0..comp.gamma.len() {
                let mean = props[k][i] + 0.5 * h * (new_grad[k][i] - props[k][i]);
                let d = comp.gamma[i] - mean;
                bwd += d * d;
            }
        }
        log_alpha += -bwd / (2.0 * h) + fwd;
        let a = accept_prob(log_alpha);
        if self.rng.random::<f64>() < a {
            for ((comp, g), y) in self.comps.iter_mut().zip(props).zip(ys) {
                comp.gamma = g;
                comp.y = y;
            }
            for (p, e) in self.procs.iter_mut().zip(evals) {
                p.eval = e;
            }
            self.lik_grad = Some(new_grad);
        }
        a
    }

    fn beta_grad(&self, beta: &[f64], eval: &Eval) -> Vec<f64> {
        let mut g = self.design.transpose_mul(&eval.resid);
        for (gi, b) in g.iter_mut().zip(beta) {
            *gi -= b / self.prior.beta_var;
        }
        g
    }

    fn beta_update(&mut self, j: usize) -> f64 {
        let h = self.procs[j].step;
        let p = &self.procs[j];
        let ncol = p.beta.len();
        let g = self.beta_grad(&p.beta, &p.eval);
        let drift = chol_solve(&p.chol, &g);
        let xi = normal_vec(&mut self.rng, ncol);
        let noise = solve_upper_t(&p.chol, &xi);
        let mu: Vec<f64> = (0..ncol).map(|i| p.beta[i] + 0.5 * h * drift[i]).collect();
        let prop: Vec<f64> = (0..ncol).map(|i| mu[i] + h.sqrt() * noise[i]).collect();
        let zb = self.design.linear_predictor(&prop);
        let ys = self.current_ys();
        let sigmas = self.current_sigmas();
        let Some(eval) = self.eval(j, &zb, &ys, &sigmas) else {
            return 0.0;
        };
        let p = &self.procs[j];
        let g2 = self.beta_grad(&prop, &eval);
        let drift2 = chol_solve(&p.chol, &g2);
        let mu2: Vec<f64> = (0..ncol).map(|i| prop[i] + 0.5 * h * drift2[i]).collect();
        let d_fwd: Vec<f64> = (0..ncol).map(|i| prop[i] - mu[i]).collect();
        let d_bwd: Vec<f64> = (0..ncol).map(|i| p.beta[i] - mu2[i]).collect();
        let log_alpha = eval.loglik - p.eval.loglik - (sq_norm(&prop) - sq_norm(&p.beta)) / (2.0 * self.prior.beta_var)
            - quad_form(&p.fisher, &d_bwd) / (2.0 * h)
            + quad_form(&p.fisher, &d_fwd) / (2.0 * h);
        let a = accept_prob(log_alpha);
        if self.rng.random::<f64>() < a {
            let p = &mut self.procs[j];
            p.beta = prop;
            p.zb = zb;
            p.eval = eval;
            self.lik_grad = None;
        }
        a
    }

    fn ridge_update(&mut self, j: usize) -> Option<f64> {
        let k = self.procs[j].ridge?;
        let tau = self.procs[j].ridge_step;
        let delta = tau * self.rng.sample::<f64, _>(StandardNormal);
        let comp = &self.comps[k];
        let sigma = comp.sigma();
        let c = delta / (sigma * comp.emb.zero_frequency_sqrt());
        let m = comp.gamma.len() as f64;
        let sum: f64 = comp.gamma.iter().sum();
        // |Gamma - c 1|^2 - |Gamma|^2
        let d_norm = -2.0 * c * sum + c * c * m;
        let b0 = self.procs[j].beta[0];
        let log_alpha = -0.5 * d_norm - ((b0 + delta).powi(2) - b0 * b0) / (2.0 * self.prior.beta_var);
        let a = accept_prob(log_alpha);
        if self.rng.random::<f64>() < a {
            let shift_y = delta / sigma;
            let comp = &mut self.comps[k];
            comp.gamma.iter_mut().for_each(|g| *g -= c);
            comp.y.iter_mut().for_each(|y| *y -= shift_y);
            let p = &mut self.procs[j];
            p.beta[0] += delta;
            // eta is unchanged, so the cached likelihood gradient stays valid
            p.zb.iter_mut().for_each(|z| *z += delta);
        }
        Some(a)
    }

    fn log_prior_params(&self, ls: f64, lp: f64, prior_lp: f64) -> f64 {
        let p = &self.prior;
        -(ls - p.log_sigma_mean).powi(2) / (2.0 * p.log_sigma_var) - (lp - prior_lp).powi(2) / (2.0 * p.log_phi_var)
    }

    fn param_update(&mut self, k: usize) -> f64 {
        let s = self.comps[k].step;
        let ls2 = self.comps[k].ls + s * self.rng.sample::<f64, _>(StandardNormal);
        let lp2 = self.comps[k].lp + s * self.rng.sample::<f64, _>(StandardNormal);
        let (m, n) = self.comps[k].emb.torus();
        let emb = match CirculantEmbedding::with_torus(lp2.exp(), &self.design.grid, m, n) {
            Ok((e, _, _)) => e,
            Err(_) => return 0.0,
        };
        let y2 = emb.field(&self.comps[k].gamma);
        let mut sigmas = self.current_sigmas();
        sigmas[k] = ls2.exp();
        let mut ys = self.current_ys();
        ys[k] = &y2;
        let mut evals = Vec::new();
        let mut log_alpha = 0.0;
        for j in 0..self.procs.len() {
            if self.procs[j].load.iter().any(|&(kk, _)| kk == k) {
                match self.eval(j, &self.procs[j].zb, &ys, &sigmas) {
                    Some(e) => {
                        log_alpha += e.loglik - self.procs[j].eval.loglik;
                        evals.push((j, e));
                    }
                    None => return 0.0,
                }
            }
        }
        let c = &self.comps[k];
        log_alpha += self.log_prior_params(ls2, lp2, c.prior_lp) - self.log_prior_params(c.ls, c.lp, c.prior_lp);
        let a = accept_prob(log_alpha);
        if self.rng.random::<f64>() < a {
            let c = &mut self.comps[k];
            c.ls = ls2;
            c.lp = lp2;
            c.emb = emb;
            c.y = y2;
            for (j, e) in evals {
                self.procs[j].eval = e;
            }
            self.lik_grad = None;
        }
        a
    }
}

/// Poisson regression of counts on the design by Newton's method.
fn poisson_glm(design: &DesignMatrix, counts: &[f64], area: f64, beta_var: f64) -> Result<Vec<f64>> {
    let p = design.ncol();
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("no events fall on the grid".into()));
    }
    let mut beta = vec![0.0; p];
    beta[0] = (total / (design.nrow() as f64 * area)).ln();
    let objective = |b: &[f64]| -> f64 {
        let eta = design.linear_predictor(b);
        let ll: f64 = eta.iter().zip(counts).map(|(e, n)| n * e - e.exp() * area).sum();
        ll - sq_norm(b) / (2.0 * beta_var)
    };
    let mut cur = objective(&beta);
    for _ in 0..100 {
        let eta = design.linear_predictor(&beta);
        let lam: Vec<f64> = eta.iter().map(|e| e.exp() * area).collect();
        let resid: Vec<f64> = counts.iter().zip(&lam).map(|(n, l)| n - l).collect();
        let mut g = design.transpose_mul(&resid);
        for (gi, b) in g.iter_mut().zip(&beta) {
            *gi -= b / beta_var;
        }
        let f = fisher(design, &lam, beta_var);
        let l = cholesky(&f, p)?;
        let dir = chol_solve(&l, &g);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
            let val = objective(&cand);
            if val.is_finite() && val >= cur - 1e-12 * cur.abs() {
                let gain = val - cur;
                beta = cand;
                cur = val;
                improved = gain > 1e-10 * cur.abs().max(1.0);
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(beta)
}

/// `Z^T diag(w) Z + I / beta_var`.
fn fisher(design: &DesignMatrix, w: &[f64], beta_var: f64) -> Vec<f64> {
    let p = design.ncol();
    let mut f = vec![0.0; p * p];
    for (r, wr) in w.iter().enumerate() {
        let z = design.row(r);
        for i in 0..p {
            for j in 0..p {
                f[i * p + j] += wr * z[i] * z[j];
            }
        }
    }
    for i in 0..p {
        f[i * p + i] += 1.0 / beta_var;
    }
    f
}

/// Fits a univariate LGCP with covariates from `covariates` (standardised).
pub fn fit_univariate(pp: &PointPattern, covariates: &CovariateStack, config: &McmcConfig) -> Result<PosteriorSamples> {
    check_stack(covariates)?;
    fit_lgcp(&[pp], &design_matrix(covariates), ModelKind::Univariate, config)
}

/// Fits a bivariate LGCP with the signed coregionalisation model.
pub fn fit_bivariate(
    pp1: &PointPattern,
    pp2: &PointPattern,
    covariates: &CovariateStack,
    sign: Sign,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    check_stack(covariates)?;
    fit_lgcp(&[pp1, pp2], &design_matrix(covariates), ModelKind::Bivariate { sign }, config)
}

fn check_stack(stack: &CovariateStack) -> Result<()> {
    if !stack.is_empty() && !stack.is_standardized() {
        return Err(Error::Config("covariates must be standardized before fitting".into()));
    }
    Ok(())
}

/// Sampler entry point on an explicit design matrix.
pub fn fit_lgcp(patterns: &[&PointPattern], design: &DesignMatrix, model: ModelKind, cfg: &McmcConfig) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let expected = match model {
        ModelKind::Univariate => 1,
        ModelKind::Bivariate { .. } => 2,
    };
    if patterns.len() != expected {
        return Err(Error::InvalidParameter(format!("expected {expected} patterns, got {}", patterns.len())));
    }
    for pp in patterns {
        pp.require_simple()?;
    }
    let grid = &design.grid;
    let area = grid.cell_area();
    let mut warnings = Vec::new();

    // counts, GLM start and minimum contrast per process
    let mut counts = Vec::new();
    let mut betas = Vec::new();
    let mut mcm = Vec::new();
    for (j, pp) in patterns.iter().enumerate() {
        let (c, moved) = design_counts(pp, design)?;
        if moved > 0 {
            warnings.push(format!("process {}: {moved} events outside the grid mask assigned to the nearest masked cell", j + 1));
        }
        let beta = poisson_glm(design, &c, area, cfg.prior.beta_var)?;
        let first_order = field_from_log(design, &design.linear_predictor(&beta), None)?;
        let fit = min_contrast(pp, &first_order, &cfg.mcm)?;
        if fit.on_boundary {
            warnings.push(format!("process {}: minimum contrast optimum on the search boundary", j + 1));
        }
        if grid.dx.max(grid.dy) > fit.phi {
            warnings.push(format!(
                "process {}: grid cell width {} exceeds the minimum-contrast range {:.4}",
                j + 1,
                grid.dx.max(grid.dy),
                fit.phi
            ));
        }
        counts.push(c);
        betas.push(beta);
        mcm.push(fit);
    }

    // component layout, initial values and prior centres
    let clamp_sigma = |s: f64| s.clamp(INIT_SIGMA.0, INIT_SIGMA.1);
    let (names, init, loads): (Vec<&str>, Vec<(f64, f64)>, Vec<Vec<(usize, f64)>>) = match model {
        ModelKind::Univariate => (vec!["W"], vec![(clamp_sigma(mcm[0].sigma), mcm[0].phi)], vec![vec![(0, 1.0)]]),
        ModelKind::Bivariate { sign } => {
            let (s1, s2) = (clamp_sigma(mcm[0].sigma), clamp_sigma(mcm[1].sigma));
            let sw = (s1.min(s2).powi(2) / 2.0).sqrt();
            let own = |s: f64| (s * s - sw * sw).max(INIT_SIGMA.0 * INIT_SIGMA.0).sqrt();
            let phi_w = (mcm[0].phi * mcm[1].phi).sqrt();
            (
                vec!["W1", "W2", "W"],
                vec![(own(s1), mcm[0].phi), (own(s2), mcm[1].phi), (sw.max(INIT_SIGMA.0), phi_w)],
                vec![vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0), (2, sign.value())]],
            )
        }
    };
    let mut comps = Vec::new();
    for &(s, phi) in &init {
        let prior_lp = cfg.prior.log_phi_mean.unwrap_or(phi.ln());
        let emb = CirculantEmbedding::clipped(phi, grid, cfg.torus_expansion)?;
        let gamma = vec![0.0; emb.dim()];
        let y = vec![0.0; grid.n_cells()];
        comps.push(Comp {
            emb,
            ls: s.ln(),
            lp: phi.ln(),
            gamma,
            y,
            prior_lp,
            step: cfg.param_step,
        });
    }
    let mut procs = Vec::new();
    for (j, mut beta) in betas.into_iter().enumerate() {
        let lam: Vec<f64> = design.linear_predictor(&beta).iter().map(|e| e.exp() * area).collect();
        let f = if cfg.likelihood {
            fisher(design, &lam, cfg.prior.beta_var)
        } else {
            fisher(design, &vec![0.0; lam.len()], cfg.prior.beta_var)
        };
        let chol = cholesky(&f, design.ncol())?;
        if !cfg.likelihood {
            beta.iter_mut().for_each(|b| *b = 0.0);
        }
        // start with Gamma = 0, so offset the -sigma^2/2 mean
        beta[0] += loads[j].iter().map(|&(k, a)| 0.5 * a * a * comps[k].sigma().powi(2)).sum::<f64>();
        let ridge = Some(j);
        procs.push(Proc {
            zb: design.linear_predictor(&beta),
            beta,
            counts: counts[j].clone(),
            load: loads[j].clone(),
            eval: Eval {
                loglik: 0.0,
                resid: vec![],
            },
            fisher: f,
            chol,
            step: 1.0,
            ridge,
            ridge_step: 0.5,
        });
    }
    let mut chain = Chain {
        design,
        area,
        comps,
        procs,
        prior: cfg.prior.clone(),
        likelihood: cfg.likelihood,
        latent_step: cfg.latent_step,
        lik_grad: None,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    for j in 0..chain.procs.len() {
        let ys = chain.current_ys();
        let sig = chain.current_sigmas();
        let e = chain
            .eval(j, &chain.procs[j].zb, &ys, &sig)
            .filter(|e| e.loglik.is_finite())
            .ok_or_else(|| Error::Mcmc("non-finite posterior at initialization".into()))?;
        chain.procs[j].eval = e;
    }

    let ncomp = chain.comps.len();
    let nproc = chain.procs.len();
    let ncell = grid.n_cells();
    let mut rate_latent = Rate::default();
    let mut rate_beta = vec![Rate::default(); nproc];
    let mut rate_ridge = vec![Rate::default(); nproc];
    let mut rate_param = vec![Rate::default(); ncomp];
    let mut out_beta = Vec::with_capacity(cfg.n_samples);
    let mut out_sigma = Vec::with_capacity(cfg.n_samples);
    let mut out_phi = Vec::with_capacity(cfg.n_samples);
    let mut f_sum = vec![vec![0.0; ncell]; ncomp];
    let mut f_sq = vec![vec![0.0; ncell]; ncomp];
    let total = cfg.burn_in + cfg.thin * cfg.n_samples;
    for t in 0..total {
        let burning = t < cfg.burn_in;
        let a = chain.latent_step_update();
        if burning {
            adapt(&mut chain.latent_step, t, a, cfg.target_accept)?;
        } else {
            rate_latent.push(a);
        }
        for j in 0..nproc {
            let a = chain.beta_update(j);
            if burning {
                adapt(&mut chain.procs[j].step, t, a, cfg.target_accept)?;
            } else {
                rate_beta[j].push(a);
            }
            if let Some(a) = chain.ridge_update(j) {
                if burning {
                    adapt(&mut chain.procs[j].ridge_step, t, a, RWM_TARGET)?;
                } else {
                    rate_ridge[j].push(a);
                }
            }
        }
        for k in 0..ncomp {
            let a = chain.param_update(k);
            if burning {
                adapt(&mut chain.comps[k].step, t, a, RWM_TARGET)?;
            } else {
                rate_param[k].push(a);
            }
        }
        if !burning && (t - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
            out_beta.push(chain.procs.iter().map(|p| p.beta.clone()).collect::<Vec<_>>());
            out_sigma.push(chain.comps.iter().map(|c| c.sigma()).collect::<Vec<_>>());
            out_phi.push(chain.comps.iter().map(|c| c.lp.exp()).collect::<Vec<_>>());
            for (k, c) in chain.comps.iter().enumerate() {
                let s = c.sigma();
                for i in 0..ncell {
                    let v = s * c.y[i];
                    f_sum[k][i] += v;
                    f_sq[k][i] += v * v;
                }
            }
        }
    }
    let nd = out_sigma.len() as f64;
    let field_mean: Vec<Vec<f64>> = f_sum.iter().map(|s| s.iter().map(|v| v / nd).collect()).collect();
    let field_sd: Vec<Vec<f64>> = f_sq
        .iter()
        .zip(&field_mean)
        .map(|(sq, m)| sq.iter().zip(m).map(|(q, mu)| (q / nd - mu * mu).max(0.0).sqrt()).collect())
        .collect();
    Ok(PosteriorSamples {
        model,
        covariates: design.names.clone(),
        components: names.into_iter().map(String::from).collect(),
        grid: grid.clone(),
        beta: out_beta,
        sigma: out_sigma,
        phi: out_phi,
        field_mean,
        field_sd,
        acceptance: AcceptanceLog {
            latent: rate_latent.value(),
            beta: rate_beta.iter().map(Rate::value).collect(),
            ridge: rate_ridge.iter().map(Rate::value).collect(),
            params: rate_param.iter().map(Rate::value).collect(),
            latent_step: chain.latent_step,
            beta_step: chain.procs.iter().map(|p| p.step).collect(),
            ridge_step: chain.procs.iter().map(|p| p.ridge_step).collect(),
            params_step: chain.comps.iter().map(|c| c.step).collect(),
        },
        mcm,
        prior_log_phi: chain.comps.iter().map(|c| c.prior_lp).collect(),
        warnings,
        seed: cfg.seed,
    })
}
