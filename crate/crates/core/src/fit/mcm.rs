//! Minimum contrast estimation of `(sigma, phi)` from the inhomogeneous K function.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointPattern;
use crate::kernel::IntensityField;
use crate::ripley::k_inhom;

use super::intensity_at_points;

/// Minimum Simpson sub-intervals per radius step when integrating the model K.
const SIMPSON_STEPS: usize = 16;
/// Simpson sub-interval width as a fraction of `phi`.
const SIMPSON_WIDTH: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmOptions {
    /// Exponent applied to both curves before comparison.
    pub q: f64,
    /// Upper end of the radius range; defaults to a quarter of the window's
    /// shorter side.
    pub r_max: Option<f64>,
    pub n_radii: usize,
    /// Lattice points per axis.
    pub lattice: usize,
    pub sigma_bounds: (f64, f64),
    /// Defaults to `(r_max / 100, 4 r_max)`.
    pub phi_bounds: Option<(f64, f64)>,
}

impl Default for McmOptions {
    fn default() -> Self {
        McmOptions {
            q: 0.25,
            r_max: None,
            n_radii: 64,
            lattice: 32,
            sigma_bounds: (0.01, 5.0),
            phi_bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub sigma: f64,
    pub phi: f64,
    pub contrast: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub q: f64,
    /// The lattice minimiser sat on the edge of the search box.
    pub on_boundary: bool,
}

/// Model K function of an LGCP with exponential covariance,
/// `2 pi int_0^r s exp(sigma^2 exp(-s / phi)) ds`.
pub fn lgcp_k(r: f64, sigma: f64, phi: f64) -> f64 {
    *lgcp_k_curve(&[0.0, r.max(0.0)], sigma, phi).last().unwrap()
}

/// [`lgcp_k`] at each of the non-decreasing `radii`.
pub fn lgcp_k_curve(radii: &[f64], sigma: f64, phi: f64) -> Vec<f64> {
    let s2 = sigma * sigma;
    // integrand of the excess over pi r^2
    let f = |s: f64| s * (s2 * (-s / phi).exp()).exp_m1();
    let mut out = Vec::with_capacity(radii.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &r in radii {
        if r > prev {
            let want = ((r - prev) / (phi * SIMPSON_WIDTH)).ceil() as usize;
            let steps = SIMPSON_STEPS.max(want + want % 2).min(1 << 14);
            let h = (r - prev) / steps as f64;
            let mut s = f(prev) + f(r);
            for k in 1..steps {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(prev + k as f64 * h);
            }
            acc += s * h / 3.0;
            prev = r;
        }
        out.push(PI * r * r + 2.0 * PI * acc);
    }
    out
}

fn contrast(radii: &[f64], target: &[f64], q: f64, sigma: f64, phi: f64) -> f64 {
    let model = lgcp_k_curve(radii, sigma, phi);
    let d: Vec<f64> = target.iter().zip(&model).map(|(t, m)| (t - m.max(0.0).powf(q)).powi(2)).collect();
    let mut acc = 0.0;
    for i in 1..radii.len() {
        acc += 0.5 * (d[i] + d[i - 1]) * (radii[i] - radii[i - 1]);
    }
    acc
}

fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn log_lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Fits `(sigma, phi)` by minimising `int (K_hat(r)^q - K_theta(r)^q)^2 dr`
/// over a log-spaced lattice followed by coordinate descent.
///
/// The empirical curve uses `mean_intensity`'s point values when present,
/// otherwise the field looked up at each point.
pub fn min_contrast(pp: &PointPattern, mean_intensity: &IntensityField, opts: &McmOptions) -> Result<MomentFit> {
    pp.require_simple()?;
    if pp.len() < 2 {
        return Err(Error::Degenerate("minimum contrast needs at least two points".into()));
    }
    if !(opts.q > 0.0) || opts.n_radii < 2 || opts.lattice < 3 {
        return Err(Error::InvalidParameter("need q > 0, n_radii >= 2 and lattice >= 3".into()));
    }
    let r_max = opts.r_max.unwrap_or(pp.window().shorter_side() / 4.0);
    if !(r_max > 0.0) {
        return Err(Error::InvalidParameter(format!("r_max must be > 0, got {r_max}")));
    }
    let radii: Vec<f64> = (0..opts.n_radii).map(|k| r_max * k as f64 / (opts.n_radii - 1) as f64).collect();
    let lambda = match &mean_intensity.point_values {
        Some(v) if v.len() == pp.len() => v.clone(),
        _ => intensity_at_points(mean_intensity, pp)?,
    };
    let khat = k_inhom(pp, &lambda, &radii)?;
    let target: Vec<f64> = khat.iter().map(|k| k.max(0.0).powf(opts.q)).collect();
    let (phi_lo, phi_hi) = opts.phi_bounds.unwrap_or((r_max / 100.0, 4.0 * r_max));
    let (sig_lo, sig_hi) = opts.sigma_bounds;
    if !(0.0 < sig_lo && sig_lo < sig_hi && 0.0 < phi_lo && phi_lo < phi_hi) {
        return Err(Error::InvalidParameter("invalid search bounds".into()));
    }
    let ls = log_lattice(sig_lo, sig_hi, opts.lattice);
    let lp = log_lattice(phi_lo, phi_hi, opts.lattice);
    let eval = |a: f64, b: f64| contrast(&radii, &target, opts.q, a.exp(), b.exp());
    let mut best = (f64::INFINITY, 0, 0);
    for (i, &a) in ls.iter().enumerate() {
        for (j, &b) in lp.iter().enumerate() {
            let c = eval(a, b);
            if c < best.0 {
                best = (c, i, j);
            }
        }
    }
    let (_, bi, bj) = best;
    let last = opts.lattice - 1;
    let on_boundary = bi == 0 || bj == 0 || bi == last || bj == last;
    let (mut a, mut b) = (ls[bi], lp[bj]);
    let (a_lo, a_hi) = (ls[bi.saturating_sub(1)], ls[(bi + 1).min(last)]);
    let (b_lo, b_hi) = (lp[bj.saturating_sub(1)], lp[(bj + 1).min(last)]);
    let mut cur = eval(a, b);
    for _ in 0..20 {
        let na = golden(|x| eval(x, b), a_lo, a_hi, 40);
        let nb = golden(|y| eval(na, y), b_lo, b_hi, 40);
        let next = eval(na, nb);
        if next <= cur {
            let moved = (na - a).abs() + (nb - b).abs();
            a = na;
            b = nb;
            cur = next;
            if moved < 1e-9 {
                break;
            }
        } else {
            break;
        }
    }
    Ok(MomentFit {
        sigma: a.exp(),
        phi: b.exp(),
        contrast: cur,
        r_min: 0.0,
        r_max,
        q: opts.q,
        on_boundary,
    })
}
