//! Inhomogeneous K and cross-K functions with isotropic edge correction,
//! pointwise Monte-Carlo envelopes and a maximum-deviation CSR test.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, PointPattern, Window};
use crate::kernel::{default_bandwidth, kernel_intensity, IntensityField};
use crate::sim::{replicate_rng, simulate_poisson_with};
use crate::svg::LinePlot;

/// Number of radii in the default ladder.
pub const DEFAULT_RADII: usize = 64;

/// `n` equally spaced radii from 0 to a quarter of the window's shorter side.
pub fn default_radii(window: &Window, n: usize) -> Vec<f64> {
    let rmax = window.shorter_side() / 4.0;
    let n = n.max(2);
    (0..n).map(|k| rmax * k as f64 / (n - 1) as f64).collect()
}

/// Fraction of the circle of radius `r` about `c` lying inside `w`.
///
/// Exact up to floating point: the circle is cut at its crossings with every
/// window edge and each arc is classified by its midpoint.
pub fn circle_fraction_inside(c: &Point, r: f64, w: &Window) -> f64 {
    if r <= 0.0 {
        return if w.contains(c) { 1.0 } else { 0.0 };
    }
    let mut angles = Vec::new();
    for (p, q) in w.edges() {
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        let (fx, fy) = (p.x - c.x, p.y - c.y);
        let a = dx * dx + dy * dy;
        if a == 0.0 {
            continue;
        }
        let b = 2.0 * (fx * dx + fy * dy);
        let cc = fx * fx + fy * fy - r * r;
        let disc = b * b - 4.0 * a * cc;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
            if (0.0..=1.0).contains(&t) {
                let (x, y) = (fx + t * dx, fy + t * dy);
                angles.push(y.atan2(x).rem_euclid(2.0 * PI));
            }
        }
    }
    let on_circle = |theta: f64| Point::new(c.x + r * theta.cos(), c.y + r * theta.sin());
    if angles.is_empty() {
        return if w.contains(&on_circle(0.0)) { 1.0 } else { 0.0 };
    }
    angles.sort_by(f64::total_cmp);
    let mut inside = 0.0;
    for k in 0..angles.len() {
        let a0 = angles[k];
        let a1 = if k + 1 < angles.len() { angles[k + 1] } else { angles[0] + 2.0 * PI };
        let span = a1 - a0;
        if span <= 0.0 {
            continue;
        }
        if w.contains(&on_circle(a0 + span / 2.0)) {
            inside += span;
        }
    }
    (inside / (2.0 * PI)).clamp(0.0, 1.0)
}

/// Ripley's isotropic correction weight `1 / (|D| g(s, u))`, where `g` is the
/// fraction of the circle about `s` through `u` inside the window.
pub fn isotropic_correction(s: &Point, u: &Point, w: &Window) -> Result<f64> {
    let r = s.dist(u);
    if r == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let g = if w.distance_to_boundary(s) >= r { 1.0 } else { circle_fraction_inside(s, r, w) };
    if !(g > 0.0) {
        return Err(Error::Degenerate(format!("circle about ({}, {}) of radius {r} misses the window", s.x, s.y)));
    }
    Ok(1.0 / (w.area() * g))
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidParameter("radii must be finite and non-negative".into()));
    }
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("radii must be non-decreasing".into()));
    }
    Ok(())
}

fn check_intensity(lambda: &[f64], n: usize) -> Result<()> {
    if lambda.len() != n {
        return Err(Error::InvalidParameter(format!("{} intensity values for {n} points", lambda.len())));
    }
    if let Some(v) = lambda.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidParameter(format!("intensity values must be positive, found {v}")));
    }
    Ok(())
}

/// `sum_{s in a, u in b, 0 < |s-u| <= r} c(s, u) / (la(s) lb(u))` at each radius.
fn weighted_pair_sum(a: &[Point], b: &[Point], la: &[f64], lb: &[f64], radii: &[f64], w: &Window) -> Vec<f64> {
    let m = radii.len();
    let rmax = radii[m - 1];
    let area = w.area();
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .zip(la.par_iter())
        .map(|(s, &ls)| {
            let mut inc = vec![0.0; m];
            let clear = w.distance_to_boundary(s);
            for (u, &lu) in b.iter().zip(lb) {
                let d = s.dist(u);
                if d <= 0.0 || d > rmax {
                    continue;
                }
                let g = if clear >= d { 1.0 } else { circle_fraction_inside(s, d, w) };
                if g <= 0.0 {
                    continue;
                }
                let bin = radii.partition_point(|&r| r < d);
                inc[bin] += 1.0 / (area * g * ls * lu);
            }
            inc
        })
        .collect();
    let mut k = vec![0.0; m];
    for row in &rows {
        for (acc, v) in k.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for i in 1..m {
        k[i] += k[i - 1];
    }
    k
}

/// Empirical inhomogeneous K function on `radii` (non-decreasing).
pub fn k_inhom(pp: &PointPattern, intensity: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
    pp.require_simple()?;
    check_radii(radii)?;
    check_intensity(intensity, pp.len())?;
    Ok(weighted_pair_sum(pp.points(), pp.points(), intensity, intensity, radii, pp.window()))
}

/// Empirical inhomogeneous cross-K function: ordered pairs `(s in pp1, u in pp2)`
/// with the correction circle centred on `s`.
pub fn cross_k_inhom(pp1: &PointPattern, pp2: &PointPattern, l1: &[f64], l2: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
    pp1.require_simple()?;
    pp2.require_simple()?;
    check_radii(radii)?;
    check_intensity(l1, pp1.len())?;
    check_intensity(l2, pp2.len())?;
    Ok(weighted_pair_sum(pp1.points(), pp2.points(), l1, l2, radii, pp1.window()))
}

/// Which intensity the K statistic of a simulated pattern is computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeIntensity {
    /// Kernel re-estimate with the bandwidth of the source field.
    #[default]
    Kernel,
    /// Homogeneous `n / |D|` of each simulated pattern.
    Homogeneous,
    /// The generating field, looked up at each point.
    Generating,
}

/// Per-point intensities of `pp` under the chosen policy; `None` when the
/// pattern is too small for a K statistic.
pub fn pattern_intensity(pp: &PointPattern, source: &IntensityField, mode: EnvelopeIntensity) -> Result<Option<Vec<f64>>> {
    let n = pp.len();
    if n < 2 {
        return Ok(None);
    }
    let vals = match mode {
        EnvelopeIntensity::Homogeneous => vec![n as f64 / pp.window().area(); n],
        EnvelopeIntensity::Generating => {
            let v: Vec<f64> = pp.points().iter().map(|p| source.at(p)).collect();
            if v.iter().any(|x| *x <= 0.0) {
                return Ok(None);
            }
            v
        }
        EnvelopeIntensity::Kernel => {
            let h = match source.bandwidth {
                Some(h) => h,
                None => match default_bandwidth(pp) {
                    Ok(h) => h,
                    Err(_) => return Ok(None),
                },
            };
            kernel_intensity(pp, h, &source.grid)?.point_values.expect("kernel estimate sets point values")
        }
    };
    Ok(Some(vals))
}

/// Pointwise envelope over simulated curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub radii: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub level: f64,
    pub curves: Vec<Vec<f64>>,
}

impl Envelope {
    pub fn n_sim(&self) -> usize {
        self.curves.len()
    }
}

/// Rank used for a two-sided pointwise envelope at `level` from `n_sim` curves.
pub fn envelope_rank(n_sim: usize, level: f64) -> usize {
    let k = ((1.0 - level) / 2.0 * (n_sim as f64 + 1.0)).floor() as usize;
    k.clamp(1, n_sim.max(1))
}

/// `k`-th smallest and `k`-th largest value at each radius, and the mean.
pub fn envelope_from_curves(radii: &[f64], curves: Vec<Vec<f64>>, level: f64) -> Result<Envelope> {
    if curves.is_empty() {
        return Err(Error::InvalidParameter("no simulated curves".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must be in (0, 1), got {level}")));
    }
    let m = radii.len();
    if curves.iter().any(|c| c.len() != m) {
        return Err(Error::InvalidParameter("curve length differs from radii".into()));
    }
    let n = curves.len();
    let k = envelope_rank(n, level);
    let mut mean = vec![0.0; m];
    let mut lo = vec![0.0; m];
    let mut hi = vec![0.0; m];
    let mut col = vec![0.0; n];
    for i in 0..m {
        for (c, curve) in col.iter_mut().zip(&curves) {
            *c = curve[i];
        }
        mean[i] = col.iter().sum::<f64>() / n as f64;
        col.sort_by(f64::total_cmp);
        lo[i] = col[k - 1];
        hi[i] = col[n - k];
    }
    Ok(Envelope {
        radii: radii.to_vec(),
        mean,
        lo,
        hi,
        level,
        curves,
    })
}

/// Envelope of `k_inhom` over `n_sim` inhomogeneous Poisson patterns drawn
/// from `field`. Replicate `k` uses stream `k` of `seed`.
pub fn poisson_envelope(
    field: &IntensityField,
    window: &Arc<Window>,
    n_sim: usize,
    radii: &[f64],
    level: f64,
    seed: u64,
    mode: EnvelopeIntensity,
) -> Result<Envelope> {
    if n_sim < 2 {
        return Err(Error::InvalidParameter(format!("n_sim must be >= 2, got {n_sim}")));
    }
    check_radii(radii)?;
    let curves = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            let pp = simulate_poisson_with(field, window, &mut rng)?;
            match pattern_intensity(&pp, field, mode)? {
                Some(l) if pp.is_simple() => k_inhom(&pp, &l, radii),
                _ => Ok(vec![0.0; radii.len()]),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    envelope_from_curves(radii, curves, level)
}

/// Envelope of `cross_k_inhom` over independent Poisson pairs from `f1`, `f2`.
#[allow(clippy::too_many_arguments)]
pub fn cross_poisson_envelope(
    f1: &IntensityField,
    f2: &IntensityField,
    window: &Arc<Window>,
    n_sim: usize,
    radii: &[f64],
    level: f64,
    seed: u64,
    mode: EnvelopeIntensity,
) -> Result<Envelope> {
    if n_sim < 2 {
        return Err(Error::InvalidParameter(format!("n_sim must be >= 2, got {n_sim}")));
    }
    check_radii(radii)?;
    let curves = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            let a = simulate_poisson_with(f1, window, &mut rng)?;
            let b = simulate_poisson_with(f2, window, &mut rng)?;
            match (pattern_intensity(&a, f1, mode)?, pattern_intensity(&b, f2, mode)?) {
                (Some(la), Some(lb)) if a.is_simple() && b.is_simple() => cross_k_inhom(&a, &b, &la, &lb, radii),
                _ => Ok(vec![0.0; radii.len()]),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    envelope_from_curves(radii, curves, level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsrTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n_sim: usize,
}

impl CsrTest {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// Maximum absolute deviation test: `T = max_r |K(r) - mean_sim(r)|`, with
/// Monte-Carlo p-value `(1 + #{T_sim >= T}) / (n_sim + 1)`.
pub fn csr_test(khat: &[f64], curves: &[Vec<f64>], radii: &[f64]) -> Result<CsrTest> {
    let n = curves.len();
    if n < 19 {
        return Err(Error::InvalidParameter(format!("csr_test needs at least 19 simulated curves, got {n}")));
    }
    let m = radii.len();
    if khat.len() != m || curves.iter().any(|c| c.len() != m) {
        return Err(Error::InvalidParameter("curve length differs from radii".into()));
    }
    let mean: Vec<f64> = (0..m).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n as f64).collect();
    let dev = |c: &[f64]| c.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let t = dev(khat);
    let exceed = curves.iter().filter(|c| dev(c) >= t).count();
    Ok(CsrTest {
        statistic: t,
        p_value: (1 + exceed) as f64 / (n + 1) as f64,
        n_sim: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KKind {
    Univariate,
    Cross,
}

/// Empirical curve with its envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KResult {
    pub kind: KKind,
    pub radii: Vec<f64>,
    pub khat: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_sim: usize,
    pub level: f64,
}

impl KResult {
    pub fn new(kind: KKind, khat: Vec<f64>, env: &Envelope) -> Result<Self> {
        if khat.len() != env.radii.len() {
            return Err(Error::InvalidParameter("curve length differs from radii".into()));
        }
        Ok(KResult {
            kind,
            radii: env.radii.clone(),
            khat,
            mean: env.mean.clone(),
            lo: env.lo.clone(),
            hi: env.hi.clone(),
            n_sim: env.n_sim(),
            level: env.level,
        })
    }

    /// Radii where the empirical curve lies above / below the envelope.
    pub fn above(&self) -> Vec<bool> {
        self.khat.iter().zip(&self.hi).map(|(k, h)| k > h).collect()
    }

    pub fn below(&self) -> Vec<bool> {
        self.khat.iter().zip(&self.lo).map(|(k, l)| k < l).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,khat,mean,lo,hi\n");
        for i in 0..self.radii.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.radii[i], self.khat[i], self.mean[i], self.lo[i], self.hi[i]
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn to_svg(&self, title: &str) -> String {
        let band = format!("{:.0}% envelope", self.level * 100.0);
        LinePlot::new(title, "r", "K(r)")
            .band(&self.radii, &self.lo, &self.hi, "#9e9e9e")
            .line("empirical", &self.radii, &self.khat, "black", false)
            .line(&format!("simulation mean ({band})"), &self.radii, &self.mean, "#c62828", true)
            .render()
    }
}
