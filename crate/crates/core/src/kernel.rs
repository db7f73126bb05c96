//! Gaussian kernel estimate of the first-order intensity with uniform edge
//! correction.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{GridSpec, Point, PointPattern};
use crate::raster::AsciiGrid;

/// Lower bound on leave-one-out intensities, as a fraction of `n / |D|`.
/// Isolated points otherwise underflow to zero and break `1 / lambda` weights.
pub const LOO_FLOOR: f64 = 1e-6;

/// Intensity surface on a grid (events per unit area). Cells outside the mask
/// hold zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// Leave-one-out values at the data points, when estimated from data.
    pub point_values: Option<Vec<f64>>,
    pub bandwidth: Option<f64>,
}

impl IntensityField {
    pub fn new(grid: GridSpec, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        for (idx, v) in values.iter_mut().enumerate() {
            if !grid.is_masked(idx) {
                *v = 0.0;
            } else if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::NonFinite(format!("intensity {v} at cell {idx}")));
            }
        }
        Ok(IntensityField {
            grid,
            values,
            point_values: None,
            bandwidth: None,
        })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Result<Self> {
        let n = grid.n_cells();
        Self::new(grid, vec![value; n])
    }

    /// Integral over the masked cells.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Value of the cell containing `p` (zero outside the grid).
    pub fn at(&self, p: &Point) -> f64 {
        self.grid.locate_index(p).map_or(0.0, |i| self.values[i])
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut out = Self::new(self.grid.clone(), self.values.iter().map(|v| v * c).collect())?;
        out.point_values = self.point_values.as_ref().map(|p| p.iter().map(|v| v * c).collect());
        out.bandwidth = self.bandwidth;
        Ok(out)
    }

    pub fn to_ascii(&self) -> AsciiGrid {
        AsciiGrid::from_grid_values(&self.grid, &self.values)
    }

    pub fn write_ascii(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_ascii().write(path)
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gauss(t: f64, h: f64) -> f64 {
    let z = t / h;
    FRAC_1_SQRT_2PI / h * (-0.5 * z * z).exp()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Mass of a 1-D Gaussian centred at `u` over `[a, b]`.
fn cell_mass(u: f64, a: f64, b: f64, h: f64) -> f64 {
    // evaluate on the side with the smaller tail to avoid cancellation
    if u < a {
        norm_cdf((u - a) / h) - norm_cdf((u - b) / h)
    } else {
        norm_cdf((b - u) / h) - norm_cdf((a - u) / h)
    }
}

/// Per-axis kernel masses: `out[j]` is the mass of cell column `j` for a kernel at `u`.
fn axis_masses(u: f64, origin: f64, step: f64, n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let a = origin + j as f64 * step;
            cell_mass(u, a, a + step, h)
        })
        .collect()
}

/// Edge-correction mass `E(u) = int_window k_h(u - v) dv` using the grid mask.
fn edge_mass(grid: &GridSpec, p: &Point, h: f64) -> f64 {
    let mx = axis_masses(p.x, grid.origin.x, grid.dx, grid.nx, h);
    let my = axis_masses(p.y, grid.origin.y, grid.dy, grid.ny, h);
    let mask = grid.mask();
    let mut total = 0.0;
    for (iy, wy) in my.iter().enumerate() {
        if *wy == 0.0 {
            continue;
        }
        let row = &mask[iy * grid.nx..(iy + 1) * grid.nx];
        let s: f64 = row.iter().zip(&mx).filter(|(m, _)| **m).map(|(_, w)| w).sum();
        total += wy * s;
    }
    total
}

/// Kernel intensity `sum_i k_h(u - y_i) / E(u)` on the masked cells of `grid`,
/// with leave-one-out values at the data points.
pub fn kernel_intensity(pp: &PointPattern, bandwidth: f64, grid: &GridSpec) -> Result<IntensityField> {
    pp.require_simple()?;
    let n = pp.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("kernel intensity needs n >= 2, got {n}")));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    let h = bandwidth;
    let pts = pp.points();
    let (nx, ny) = (grid.nx, grid.ny);
    let cx: Vec<f64> = (0..nx).map(|ix| grid.origin.x + (ix as f64 + 0.5) * grid.dx).collect();
    let cy: Vec<f64> = (0..ny).map(|iy| grid.origin.y + (iy as f64 + 0.5) * grid.dy).collect();
    // gx[i * nx + ix] = k(cx - x_i)
    let gx: Vec<f64> = pts.iter().flat_map(|p| cx.iter().map(move |&c| gauss(c - p.x, h))).collect();
    let gy: Vec<f64> = pts.iter().flat_map(|p| cy.iter().map(move |&c| gauss(c - p.y, h))).collect();
    // kx[ix * nx + jx] = mass of column jx seen from centre ix
    let kx: Vec<f64> = cx
        .iter()
        .flat_map(|&c| axis_masses(c, grid.origin.x, grid.dx, nx, h))
        .collect();
    let ky: Vec<f64> = cy
        .iter()
        .flat_map(|&c| axis_masses(c, grid.origin.y, grid.dy, ny, h))
        .collect();
    let mask = grid.mask();
    // mx[jy * nx + ix] = sum_jx mask[jy, jx] * kx[ix, jx]
    let mx: Vec<f64> = (0..ny)
        .flat_map(|jy| {
            let row = &mask[jy * nx..(jy + 1) * nx];
            let kx = &kx;
            (0..nx).map(move |ix| {
                row.iter()
                    .zip(&kx[ix * nx..(ix + 1) * nx])
                    .filter(|(m, _)| **m)
                    .map(|(_, w)| w)
                    .sum::<f64>()
            })
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..ny)
        .into_par_iter()
        .map(|iy| {
            let mut out = vec![0.0; nx];
            for ix in 0..nx {
                let idx = iy * nx + ix;
                if !mask[idx] {
                    continue;
                }
                let mut num = 0.0;
                for i in 0..n {
                    let w = gy[i * ny + iy];
                    if w != 0.0 {
                        num += w * gx[i * nx + ix];
                    }
                }
                let e: f64 = (0..ny).map(|jy| ky[iy * ny + jy] * mx[jy * nx + ix]).sum();
                out[ix] = if e > 0.0 { num / e } else { 0.0 };
            }
            out
        })
        .collect();
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    let floor = LOO_FLOOR * n as f64 / pp.window().area();
    let point_values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = pts[i];
            let num: f64 = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| gauss(p.x - q.x, h) * gauss(p.y - q.y, h))
                .sum();
            let e = edge_mass(grid, &p, h);
            if e > 0.0 { (num / e).max(floor) } else { floor }
        })
        .collect();
    let mut field = IntensityField::new(grid.clone(), values)?;
    field.point_values = Some(point_values);
    field.bandwidth = Some(h);
    Ok(field)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn axis_bandwidth(vals: &mut [f64]) -> f64 {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    vals.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(vals, 0.75) - quantile_sorted(vals, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Rule-of-thumb bandwidth `0.9 min(sd, IQR/1.34) n^(-1/5)` per axis,
/// combined by geometric mean.
pub fn default_bandwidth(pp: &PointPattern) -> Result<f64> {
    let n = pp.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("bandwidth needs n >= 2, got {n}")));
    }
    let mut xs: Vec<f64> = pp.points().iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = pp.points().iter().map(|p| p.y).collect();
    let h = (axis_bandwidth(&mut xs) * axis_bandwidth(&mut ys)).sqrt();
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Degenerate("points have zero spread on an axis".into()));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Window;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn square(side: f64) -> Arc<Window> {
        Arc::new(Window::rectangle(0.0, 0.0, side, side).unwrap())
    }

    fn uniform(n: usize, side: f64, seed: u64) -> PointPattern {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side))
            .collect();
        PointPattern::new(pts, square(side)).unwrap().into_simple().unwrap()
    }

    #[test]
    fn far_from_cluster_is_negligible() {
        let w = square(100.0);
        let pts = vec![Point::new(5.0, 5.0), Point::new(5.5, 5.2), Point::new(4.8, 5.1)];
        let pp = PointPattern::new(pts, w.clone()).unwrap().into_simple().unwrap();
        let grid = GridSpec::covering(&w, 50, 50).unwrap();
        let f = kernel_intensity(&pp, 1.0, &grid).unwrap();
        assert!(f.at(&Point::new(80.0, 80.0)) < 1e-8);
    }

    #[test]
    fn mass_is_preserved() {
        let pp = uniform(300, 10.0, 3);
        let grid = GridSpec::covering(pp.window(), 64, 64).unwrap();
        let h = default_bandwidth(&pp).unwrap();
        let f = kernel_intensity(&pp, h, &grid).unwrap();
        let m = f.integral();
        assert!((m - 300.0).abs() < 0.05 * 300.0, "mass {m}");
    }

    #[test]
    fn two_point_closed_form() {
        let w = square(1.0);
        let pts = vec![Point::new(0.4, 0.45), Point::new(0.6, 0.5)];
        let pp = PointPattern::new(pts.clone(), w.clone()).unwrap().into_simple().unwrap();
        let grid = GridSpec::covering(&w, 20, 20).unwrap();
        let h = 0.1;
        let f = kernel_intensity(&pp, h, &grid).unwrap();
        let k2 = |dx: f64, dy: f64| (-(dx * dx + dy * dy) / (2.0 * h * h)).exp() / (2.0 * std::f64::consts::PI * h * h);
        // edge integral by fine midpoint rule over the unit square
        let m = 2000;
        let edge = |u: Point| {
            let s = 1.0 / m as f64;
            let mut acc = 0.0;
            for a in 0..m {
                for b in 0..m {
                    acc += k2(u.x - (a as f64 + 0.5) * s, u.y - (b as f64 + 0.5) * s);
                }
            }
            acc * s * s
        };
        let idx = grid.index(10, 9);
        let u = grid.cell_center(idx);
        let expected = (k2(u.x - pts[0].x, u.y - pts[0].y) + k2(u.x - pts[1].x, u.y - pts[1].y)) / edge(u);
        assert!((f.values[idx] - expected).abs() < 1e-6 * expected, "{} vs {expected}", f.values[idx]);
        let loo0 = k2(pts[0].x - pts[1].x, pts[0].y - pts[1].y) / edge(pts[0]);
        let got = f.point_values.as_ref().unwrap()[0];
        assert!((got - loo0).abs() < 1e-6 * loo0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = square(1.0);
        let one = PointPattern::new(vec![Point::new(0.5, 0.5)], w.clone()).unwrap().into_simple().unwrap();
        let grid = GridSpec::covering(&w, 4, 4).unwrap();
        assert!(kernel_intensity(&one, 0.1, &grid).is_err());
        let two = uniform(5, 1.0, 1);
        assert!(kernel_intensity(&two, 0.0, &grid).is_err());
        let dup = PointPattern::new(vec![Point::new(0.5, 0.5); 3], w).unwrap();
        assert!(default_bandwidth(&dup).is_err());
    }

    #[test]
    fn bandwidth_scale_equivariant() {
        let pp = uniform(80, 1.0, 9);
        let big = Arc::new(Window::rectangle(0.0, 0.0, 2.0, 2.0).unwrap());
        let scaled = PointPattern::new(pp.points().iter().map(|p| Point::new(2.0 * p.x, 2.0 * p.y)).collect(), big).unwrap();
        let a = default_bandwidth(&pp).unwrap();
        let b = default_bandwidth(&scaled).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_matches_rule_of_thumb() {
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = Arc::new(Window::rectangle(-10.0, -10.0, 10.0, 10.0).unwrap());
        let pts: Vec<Point> = (0..100).map(|_| Point::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let pp = PointPattern::new(pts.clone(), w).unwrap();
        // independent oracle: R-style type 7 quantiles, sample sd
        let per_axis = |mut v: Vec<f64>| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let h = (n - 1.0) * p;
                let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
                v[lo] + (h - h.floor()) * (v[hi] - v[lo])
            };
            0.9 * sd.min((q(0.75) - q(0.25)) / 1.34) * n.powf(-0.2)
        };
        let hx = per_axis(pts.iter().map(|p| p.x).collect());
        let hy = per_axis(pts.iter().map(|p| p.y).collect());
        assert!((default_bandwidth(&pp).unwrap() - (hx * hy).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn translation_equivariant() {
        let pp = uniform(60, 4.0, 5);
        let grid = GridSpec::covering(pp.window(), 16, 16).unwrap();
        let f = kernel_intensity(&pp, 0.5, &grid).unwrap();
        let shift = 2.0 * grid.dx;
        let w2 = Arc::new(pp.window().translate(shift, 0.0));
        let pts2 = pp.points().iter().map(|p| Point::new(p.x + shift, p.y)).collect();
        let pp2 = PointPattern::new(pts2, w2.clone()).unwrap().into_simple().unwrap();
        let grid2 = GridSpec::covering(&w2, 16, 16).unwrap();
        let f2 = kernel_intensity(&pp2, 0.5, &grid2).unwrap();
        for (a, b) in f.values.iter().zip(&f2.values) {
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn doubling_points_doubles_field() {
        let pp = uniform(200, 10.0, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = pp.points().to_vec();
        for p in pp.points() {
            pts.push(Point::new(
                (p.x + 1e-3 * (rng.random::<f64>() - 0.5)).clamp(0.0, 10.0),
                (p.y + 1e-3 * (rng.random::<f64>() - 0.5)).clamp(0.0, 10.0),
            ));
        }
        let pp2 = PointPattern::new(pts, pp.window_arc()).unwrap().into_simple().unwrap();
        let grid = GridSpec::covering(pp.window(), 20, 20).unwrap();
        let a = kernel_intensity(&pp, 1.0, &grid).unwrap();
        let b = kernel_intensity(&pp2, 1.0, &grid).unwrap();
        for iy in 5..15 {
            for ix in 5..15 {
                let i = grid.index(ix, iy);
                let r = b.values[i] / a.values[i];
                assert!((r - 2.0).abs() < 0.1, "ratio {r}");
            }
        }
    }
}
