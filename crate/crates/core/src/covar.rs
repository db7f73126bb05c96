//! Covariate rasters and event-table preparation.
//!
//! Layers live on a [`GridSpec`]; statistics always run over masked cells
//! only. Standardisation follows the "divide by two standard deviations"
//! convention: `x -> (x - mean) / (2 sd)`, using the population sd.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{has_duplicates, GridSpec, Point, PointPattern, Projection, Window};
use crate::raster::AsciiGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    /// One value per grid cell; unmasked cells are ignored.
    pub values: Vec<f64>,
    /// Values are `log(1 + population)`; aggregation averages on the raw scale.
    pub population: bool,
}

impl Layer {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Layer {
            name: name.into(),
            values,
            population: false,
        }
    }

    /// Log-population layer from raw counts, `log(x + 1)`.
    pub fn log_population(name: impl Into<String>, raw: &[f64]) -> Self {
        Layer {
            name: name.into(),
            values: raw.iter().map(|v| v.ln_1p()).collect(),
            population: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateStack {
    grid: GridSpec,
    layers: Vec<Layer>,
    standardization: Vec<Option<Standardization>>,
}

impl CovariateStack {
    pub fn new(grid: GridSpec) -> Self {
        CovariateStack {
            grid,
            layers: Vec::new(),
            standardization: Vec::new(),
        }
    }

    /// Adds a layer; masked cells must be finite.
    pub fn with_layer(mut self, layer: Layer) -> Result<Self> {
        self.push_layer(layer, None)?;
        Ok(self)
    }

    fn push_layer(&mut self, layer: Layer, std: Option<Standardization>) -> Result<()> {
        if layer.values.len() != self.grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "layer `{}` has {} values for {} cells",
                layer.name,
                layer.values.len(),
                self.grid.n_cells()
            )));
        }
        if let Some(idx) = self
            .grid
            .masked_indices()
            .into_iter()
            .find(|&i| !layer.values[i].is_finite())
        {
            return Err(Error::NonFinite(format!(
                "layer `{}` has no value at masked cell {idx}",
                layer.name
            )));
        }
        if self.layers.iter().any(|l| l.name == layer.name) {
            return Err(Error::InvalidParameter(format!("duplicate layer `{}`", layer.name)));
        }
        self.layers.push(layer);
        self.standardization.push(std);
        Ok(())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    pub fn standardization(&self, name: &str) -> Result<Option<Standardization>> {
        let i = self.position(name)?;
        Ok(self.standardization[i])
    }

    pub fn is_standardized(&self) -> bool {
        self.standardization.iter().all(Option::is_some)
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    fn masked_moments(&self, values: &[f64]) -> (f64, f64) {
        let idx = self.grid.masked_indices();
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Values with any standardisation undone.
    fn raw_values(&self, i: usize) -> Vec<f64> {
        match self.standardization[i] {
            Some(s) => self.layers[i]
                .values
                .iter()
                .map(|v| v * 2.0 * s.sd + s.mean)
                .collect(),
            None => self.layers[i].values.clone(),
        }
    }
}

/// Centres and scales every not-yet-standardised layer to mean 0, sd 0.5.
pub fn standardize(stack: &CovariateStack) -> Result<CovariateStack> {
    let mut out = stack.clone();
    for i in 0..out.layers.len() {
        if out.standardization[i].is_some() {
            continue;
        }
        let (mean, sd) = out.masked_moments(&out.layers[i].values);
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ConstantLayer(out.layers[i].name.clone()));
        }
        for v in out.layers[i].values.iter_mut() {
            *v = (*v - mean) / (2.0 * sd);
        }
        out.standardization[i] = Some(Standardization { mean, sd });
    }
    Ok(out)
}

struct Nesting {
    kx: usize,
    ky: usize,
    ox: isize,
    oy: isize,
}

fn nesting(fine: &GridSpec, coarse: &GridSpec) -> Result<Nesting> {
    let int = |v: f64, what: &str| -> Result<isize> {
        let r = v.round();
        if (v - r).abs() > 1e-6 {
            Err(Error::GridMismatch(format!("coarse grid does not nest the fine grid ({what} = {v})")))
        } else {
            Ok(r as isize)
        }
    };
    let kx = int(coarse.dx / fine.dx, "x ratio")?;
    let ky = int(coarse.dy / fine.dy, "y ratio")?;
    if kx < 1 || ky < 1 {
        return Err(Error::GridMismatch("coarse cells are smaller than fine cells".into()));
    }
    let ox = int((fine.origin.x - coarse.origin.x) / fine.dx, "x offset")?;
    let oy = int((fine.origin.y - coarse.origin.y) / fine.dy, "y offset")?;
    let fits = ox >= 0
        && oy >= 0
        && (ox as usize + fine.nx) <= coarse.nx * kx as usize
        && (oy as usize + fine.ny) <= coarse.ny * ky as usize;
    if !fits {
        return Err(Error::GridMismatch("coarse grid does not cover the fine grid".into()));
    }
    Ok(Nesting {
        kx: kx as usize,
        ky: ky as usize,
        ox,
        oy,
    })
}

impl Nesting {
    fn coarse_index(&self, fine: &GridSpec, coarse: &GridSpec, idx: usize) -> usize {
        let (ix, iy) = (idx % fine.nx, idx / fine.nx);
        let cx = (ix + self.ox as usize) / self.kx;
        let cy = (iy + self.oy as usize) / self.ky;
        coarse.index(cx, cy)
    }
}

/// Area-weighted mean of the masked fine cells inside each coarse cell.
///
/// The result lives on `coarse` with its mask replaced by "covers at least
/// one masked fine cell". Standardisation is undone first and the output is
/// unstandardised. Population layers are averaged as raw counts.
pub fn aggregate(stack: &CovariateStack, coarse: &GridSpec) -> Result<CovariateStack> {
    let fine = &stack.grid;
    let nest = nesting(fine, coarse)?;
    let mut weight = vec![0.0; coarse.n_cells()];
    let owners: Vec<Option<usize>> = (0..fine.n_cells())
        .map(|i| fine.is_masked(i).then(|| nest.coarse_index(fine, coarse, i)))
        .collect();
    for c in owners.iter().flatten() {
        weight[*c] += fine.cell_area();
    }
    let mask: Vec<bool> = weight.iter().map(|&w| w > 0.0).collect();
    let out_grid = coarse.clone().with_mask(mask)?;
    let mut out = CovariateStack::new(out_grid);
    for (li, layer) in stack.layers.iter().enumerate() {
        let raw = stack.raw_values(li);
        let mut sum = vec![0.0; coarse.n_cells()];
        for (i, owner) in owners.iter().enumerate() {
            if let Some(c) = owner {
                let v = if layer.population { raw[i].exp_m1() } else { raw[i] };
                sum[*c] += v * fine.cell_area();
            }
        }
        let values = sum
            .iter()
            .zip(&weight)
            .map(|(&s, &w)| {
                if w > 0.0 {
                    let m = s / w;
                    if layer.population {
                        m.ln_1p()
                    } else {
                        m
                    }
                } else {
                    f64::NAN
                }
            })
            .collect();
        out.push_layer(
            Layer {
                name: layer.name.clone(),
                values,
                population: layer.population,
            },
            None,
        )?;
    }
    Ok(out)
}

/// Broadcasts a coarse stack back onto a nested fine grid (piecewise
/// constant). Used to supply coarse covariates to a fine computational grid.
pub fn refine_to(coarse_stack: &CovariateStack, fine: &GridSpec) -> Result<CovariateStack> {
    let coarse = &coarse_stack.grid;
    let nest = nesting(fine, coarse)?;
    let mut out = CovariateStack::new(fine.clone());
    for (li, layer) in coarse_stack.layers.iter().enumerate() {
        let values = (0..fine.n_cells())
            .map(|i| layer.values[nest.coarse_index(fine, coarse, i)])
            .collect();
        out.push_layer(
            Layer {
                name: layer.name.clone(),
                values,
                population: layer.population,
            },
            coarse_stack.standardization[li],
        )?;
    }
    Ok(out)
}

/// Appends the element-wise product of two layers (on their current,
/// typically standardised, values). The new layer is not standardised.
pub fn interaction_layer(stack: &CovariateStack, a: &str, b: &str) -> Result<CovariateStack> {
    let la = stack.layer(a)?;
    let lb = stack.layer(b)?;
    let values = la.values.iter().zip(&lb.values).map(|(x, y)| x * y).collect();
    let mut out = stack.clone();
    out.push_layer(Layer::new(format!("{a}:{b}"), values), None)?;
    Ok(out)
}

/// Design matrix over masked cells: rows `[1, V_1 .. V_p]` in cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub grid: GridSpec,
    pub names: Vec<String>,
    /// Grid index of each row.
    pub cells: Vec<usize>,
    ncol: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    /// Intercept-only design on the masked cells of `grid`.
    pub fn intercept_only(grid: &GridSpec) -> Self {
        design_matrix(&CovariateStack::new(grid.clone()))
    }

    pub fn ncol(&self) -> usize {
        self.ncol
    }

    pub fn nrow(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.ncol..(r + 1) * self.ncol]
    }

    /// `Z beta` per row.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.nrow())
            .map(|r| self.row(r).iter().zip(beta).map(|(z, b)| z * b).sum())
            .collect()
    }

    /// `Z^T v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncol];
        for (r, &vr) in v.iter().enumerate() {
            for (o, z) in out.iter_mut().zip(self.row(r)) {
                *o += z * vr;
            }
        }
        out
    }
}

pub fn design_matrix(stack: &CovariateStack) -> DesignMatrix {
    let cells = stack.grid.masked_indices();
    let ncol = stack.layers.len() + 1;
    let mut data = Vec::with_capacity(cells.len() * ncol);
    for &c in &cells {
        data.push(1.0);
        data.extend(stack.layers.iter().map(|l| l.values[c]));
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(stack.layers.iter().map(|l| l.name.clone()));
    DesignMatrix {
        grid: stack.grid.clone(),
        names,
        cells,
        ncol,
        data,
    }
}

/// Easting / northing of cell centres as two layers named `lon` and `lat`.
/// Under the equirectangular projection these are affine in degrees, so they
/// standardise to the same values as true longitude/latitude.
pub fn coordinate_layers(grid: &GridSpec) -> (Layer, Layer) {
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..grid.n_cells())
        .map(|i| {
            let c = grid.cell_center(i);
            (c.x, c.y)
        })
        .unzip();
    (Layer::new("lon", xs), Layer::new("lat", ys))
}

/// Distance (km) from each cell centre to the nearest city.
pub fn nearest_city_layer(grid: &GridSpec, cities: &[Point]) -> Result<Layer> {
    if cities.is_empty() {
        return Err(Error::InvalidParameter("empty city list".into()));
    }
    let values = (0..grid.n_cells())
        .map(|i| {
            let c = grid.cell_center(i);
            cities.iter().map(|p| p.dist(&c)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(Layer::new("mdis", values))
}

/// Reads a `name,lon,lat` city list and projects it.
pub fn load_cities(path: impl AsRef<Path>, projection: Option<&Projection>) -> Result<Vec<(String, Point)>> {
    #[derive(Deserialize)]
    struct Row {
        name: String,
        lon: f64,
        lat: f64,
    }
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|e| csv_parse_error(path, e))?;
        let p = match projection {
            Some(pr) => pr.forward(row.lon, row.lat),
            None => Point::new(row.lon, row.lat),
        };
        out.push((row.name, p));
    }
    Ok(out)
}

/// Loads a raster and resamples it onto `grid` as a layer.
pub fn raster_layer(
    path: impl AsRef<Path>,
    name: &str,
    grid: &GridSpec,
    projection: Option<&Projection>,
    population: bool,
) -> Result<Layer> {
    let raster = AsciiGrid::read(path)?;
    let raw = raster.resample_to(grid, projection);
    Ok(if population {
        Layer::log_population(name, &raw)
    } else {
        Layer::new(name, raw)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub group: String,
    pub specificity: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTable {
    pub rows: Vec<EventRow>,
}

/// Result of [`load_events`]: kept rows plus the number dropped as outside
/// the window.
#[derive(Debug, Clone)]
pub struct LoadedEvents {
    pub table: EventTable,
    pub dropped: usize,
}

fn csv_parse_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Reads an events CSV with columns `id,lon,lat,group,specificity`
/// (`id` optional). Rows outside the window are dropped and counted.
pub fn load_events(
    path: impl AsRef<Path>,
    window: &Window,
    projection: Option<&Projection>,
) -> Result<LoadedEvents> {
    #[derive(Deserialize)]
    struct Raw {
        #[serde(default)]
        id: Option<String>,
        lon: f64,
        lat: f64,
        group: String,
        specificity: i64,
    }
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Config(format!("cannot open {}: {e}", path.display())),
        _ => csv_parse_error(path, e),
    })?;
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (k, rec) in rdr.deserialize::<Raw>().enumerate() {
        let line = k + 2;
        let raw = rec.map_err(|e| csv_parse_error(path, e))?;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if !(1..=5).contains(&raw.specificity) {
            return Err(bad(format!("specificity {} outside 1..=5", raw.specificity)));
        }
        if !raw.lon.is_finite() || !raw.lat.is_finite() {
            return Err(bad("non-finite coordinate".into()));
        }
        let p = match projection {
            Some(pr) => pr.forward(raw.lon, raw.lat),
            None => Point::new(raw.lon, raw.lat),
        };
        if !window.contains(&p) {
            dropped += 1;
            continue;
        }
        rows.push(EventRow {
            id: raw.id.unwrap_or_else(|| (line - 1).to_string()),
            lon: raw.lon,
            lat: raw.lat,
            group: raw.group,
            specificity: raw.specificity as u8,
        });
    }
    Ok(LoadedEvents {
        table: EventTable { rows },
        dropped,
    })
}

/// Writes events in the `id,lon,lat,group,specificity` schema.
pub fn write_events(path: impl AsRef<Path>, table: &EventTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in &table.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecificityFilter {
    Equals(u8),
    Above(u8),
    AtMost(u8),
}

impl SpecificityFilter {
    pub fn accepts(&self, s: u8) -> bool {
        match *self {
            SpecificityFilter::Equals(v) => s == v,
            SpecificityFilter::Above(v) => s > v,
            SpecificityFilter::AtMost(v) => s <= v,
        }
    }
}

pub fn filter_events(
    table: &EventTable,
    group: Option<&str>,
    specificity: Option<SpecificityFilter>,
) -> EventTable {
    EventTable {
        rows: table
            .rows
            .iter()
            .filter(|r| group.is_none_or(|g| r.group == g))
            .filter(|r| specificity.is_none_or(|f| f.accepts(r.specificity)))
            .cloned()
            .collect(),
    }
}

impl EventTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Projects rows into a pattern carrying group marks and specificity.
    pub fn to_pattern(&self, window: Arc<Window>, projection: Option<&Projection>) -> Result<PointPattern> {
        let pts = self
            .rows
            .iter()
            .map(|r| match projection {
                Some(p) => p.forward(r.lon, r.lat),
                None => Point::new(r.lon, r.lat),
            })
            .collect();
        PointPattern::new(pts, window)?
            .with_marks(self.rows.iter().map(|r| r.group.clone()).collect())?
            .with_specificity(self.rows.iter().map(|r| r.specificity).collect())
    }

    /// Inverse of [`EventTable::to_pattern`]; marks become groups
    /// (`default_group` when absent).
    pub fn from_pattern(pp: &PointPattern, projection: Option<&Projection>, default_group: &str) -> Self {
        let rows = pp
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (lon, lat) = match projection {
                    Some(pr) => pr.inverse(p),
                    None => (p.x, p.y),
                };
                EventRow {
                    id: (i + 1).to_string(),
                    lon,
                    lat,
                    group: pp
                        .marks()
                        .map(|m| m[i].clone())
                        .unwrap_or_else(|| default_group.to_string()),
                    specificity: pp.specificity().map(|s| s[i]).unwrap_or(1),
                }
            })
            .collect();
        EventTable { rows }
    }
}

/// Keeps the first occurrence of each exact location.
pub fn deduplicate(pp: &PointPattern) -> (PointPattern, usize) {
    let mut seen = std::collections::HashSet::new();
    let keep: Vec<usize> = (0..pp.len())
        .filter(|&i| {
            let p = pp.points()[i];
            seen.insert((p.x.to_bits(), p.y.to_bits()))
        })
        .collect();
    let removed = pp.len() - keep.len();
    let sub = pp.select(&keep);
    let out = PointPattern::from_parts(
        sub.points().to_vec(),
        sub.marks().map(<[String]>::to_vec),
        sub.specificity().map(<[u8]>::to_vec),
        sub.window_arc(),
        true,
    );
    (out, removed)
}

/// Adds independent Gaussian noise with standard deviation `sd` (degrees)
/// to each coordinate. With a projection the noise is applied in
/// longitude/latitude before re-projecting; without one it is applied to the
/// coordinates directly. Draws that leave the window or collide are redrawn.
pub fn jitter(pp: &PointPattern, sd: f64, seed: u64, projection: Option<&Projection>) -> Result<PointPattern> {
    if !(sd > 0.0) {
        return Err(Error::InvalidParameter(format!("jitter sd must be > 0, got {sd}")));
    }
    let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = pp.window();
    let mut seen = std::collections::HashSet::with_capacity(pp.len());
    let mut out = Vec::with_capacity(pp.len());
    for p in pp.points() {
        let (u, v) = match projection {
            Some(pr) => pr.inverse(p),
            None => (p.x, p.y),
        };
        let mut attempts = 0;
        let q = loop {
            let (a, b) = (u + normal.sample(&mut rng), v + normal.sample(&mut rng));
            let q = match projection {
                Some(pr) => pr.forward(a, b),
                None => Point::new(a, b),
            };
            if window.contains(&q) && seen.insert((q.x.to_bits(), q.y.to_bits())) {
                break q;
            }
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::Degenerate(format!(
                    "could not jitter point ({}, {}) inside the window",
                    p.x, p.y
                )));
            }
        };
        out.push(q);
    }
    debug_assert!(!has_duplicates(&out));
    Ok(PointPattern::from_parts(
        out,
        pp.marks().map(<[String]>::to_vec),
        pp.specificity().map(<[u8]>::to_vec),
        pp.window_arc(),
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::io::Write;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, nx, ny).unwrap()
    }

    fn events_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "id,lon,lat,group,specificity\n{body}").unwrap();
        f
    }

    #[test]
    fn load_events_well_formed() {
        let w = Window::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
        let f = events_file("1,1,1,BH,1\n2,2,2,FE,3\n3,5,5,BH,2\n");
        let ev = load_events(f.path(), &w, None).unwrap();
        assert_eq!(ev.table.len(), 3);
        assert_eq!(ev.dropped, 0);
        assert_eq!(ev.table.rows[1].group, "FE");
    }

    #[test]
    fn load_events_rejects_bad_specificity_with_line() {
        let w = Window::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
        let f = events_file("1,1,1,BH,1\n2,2,2,FE,6\n");
        match load_events(f.path(), &w, None) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("specificity"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = events_file("1,abc,1,BH,1\n");
        assert!(matches!(load_events(f.path(), &w, None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn load_events_drops_outside_rows() {
        let tri = Window::from_rings(vec![vec![
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(0.0, 10.0),
            Point::new(0.0, 0.0),
        ]])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> = (0..200).map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect();
        let body: String = pts
            .iter()
            .enumerate()
            .map(|(i, (x, y))| format!("{i},{x},{y},G,1\n"))
            .collect();
        let f = events_file(&body);
        let ev = load_events(f.path(), &tri, None).unwrap();
        let oracle = pts.iter().filter(|(x, y)| x + y <= 10.0).count();
        assert_eq!(ev.table.len(), oracle);
        assert_eq!(ev.dropped, 200 - oracle);
    }

    fn table(groups: &[(&str, u8)]) -> EventTable {
        EventTable {
            rows: groups
                .iter()
                .enumerate()
                .map(|(i, (g, s))| EventRow {
                    id: i.to_string(),
                    lon: i as f64,
                    lat: 0.0,
                    group: g.to_string(),
                    specificity: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn filters() {
        let t = table(&[
            ("BH", 1), ("FE", 2), ("BH", 3), ("O", 1), ("FE", 1),
            ("BH", 2), ("O", 5), ("FE", 4), ("BH", 1), ("O", 2),
        ]);
        assert_eq!(filter_events(&t, Some("BH"), None).len(), 4);
        let all2 = table(&[("A", 2), ("B", 2)]);
        assert!(filter_events(&all2, None, Some(SpecificityFilter::Equals(1))).is_empty());
        let both = filter_events(&t, Some("FE"), Some(SpecificityFilter::Above(1)));
        let composed = filter_events(&filter_events(&t, Some("FE"), None), None, Some(SpecificityFilter::Above(1)));
        assert_eq!(both, composed);
        assert_eq!(both.len(), 2);
        // order preserved
        assert_eq!(both.rows[0].id, "1");
    }

    #[test]
    fn dedup_counts() {
        let w = Arc::new(Window::rectangle(0.0, 0.0, 10.0, 10.0).unwrap());
        let pp = PointPattern::new(vec![Point::new(1.0, 1.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)], Arc::clone(&w)).unwrap();
        let (d, removed) = deduplicate(&pp);
        assert_eq!((d.len(), removed), (2, 1));
        assert!(d.is_simple());
        let uniq = PointPattern::new(vec![Point::new(1.0, 1.0), Point::new(2.0, 2.0)], Arc::clone(&w)).unwrap();
        let (d, removed) = deduplicate(&uniq);
        assert_eq!((d.points(), removed), (uniq.points(), 0));

        // 714 events, 190 of which repeat an earlier location -> 524 unique.
        let mut rng = ChaCha8Rng::seed_from_u64(2014);
        let uniques: Vec<Point> = (0..524).map(|_| Point::new(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect();
        let mut pts = uniques.clone();
        for k in 0..190 {
            pts.push(uniques[(k * 7) % 524]);
        }
        let pp = PointPattern::new(pts, w).unwrap();
        let (d, removed) = deduplicate(&pp);
        assert_eq!(pp.len(), 714);
        assert_eq!(removed, 190);
        assert_eq!(d.len(), 524);
    }

    #[test]
    fn jitter_separates_and_is_deterministic() {
        let w = Arc::new(Window::rectangle(0.0, 0.0, 10.0, 10.0).unwrap());
        let pp = PointPattern::new(vec![Point::new(5.0, 5.0), Point::new(5.0, 5.0)], w).unwrap();
        let j = jitter(&pp, 1e-6, 9, None).unwrap();
        assert_ne!(j.points()[0], j.points()[1]);
        for p in j.points() {
            assert!((p.x - 5.0).abs() < 1e-5 && (p.y - 5.0).abs() < 1e-5);
        }
        assert!(j.is_simple());
        let again = jitter(&pp, 1e-6, 9, None).unwrap();
        assert_eq!(j.points(), again.points());
        let (_, removed) = deduplicate(&j);
        assert_eq!(removed, 0);
    }

    #[test]
    fn jitter_in_degrees_through_projection() {
        let proj = Projection::new(8.0, 9.0);
        let c = proj.forward(8.5, 9.5);
        let w = Arc::new(Window::rectangle(c.x - 50.0, c.y - 50.0, c.x + 50.0, c.y + 50.0).unwrap());
        let pp = PointPattern::new(vec![c; 50], w).unwrap();
        let j = jitter(&pp, 1e-6, 1, Some(&proj)).unwrap();
        for p in j.points() {
            let (lon, lat) = proj.inverse(p);
            assert!((lon - 8.5).abs() < 1e-5 && (lat - 9.5).abs() < 1e-5);
        }
    }

    #[test]
    fn jitter_moment_check() {
        let w = Arc::new(Window::rectangle(0.0, 0.0, 10.0, 10.0).unwrap());
        let pp = PointPattern::new(vec![Point::new(3.0, 3.0); 1000], w).unwrap();
        let j = jitter(&pp, 1e-6, 77, None).unwrap();
        let dx: Vec<f64> = j.points().iter().map(|p| p.x - 3.0).collect();
        let m = dx.iter().sum::<f64>() / 1000.0;
        let sd = (dx.iter().map(|d| (d - m).powi(2)).sum::<f64>() / 999.0).sqrt();
        assert!((sd / 1e-6 - 1.0).abs() < 0.05, "sd = {sd}");
        // 8 sigma bound
        for seed in 0..20 {
            let j = jitter(&pp, 1e-6, seed, None).unwrap();
            assert!(j.points().iter().all(|p| (p.x - 3.0).abs() < 8e-6 && (p.y - 3.0).abs() < 8e-6));
        }
    }

    #[test]
    fn standardize_examples() {
        let g = grid(2, 1);
        let s = CovariateStack::new(g.clone()).with_layer(Layer::new("v", vec![0.0, 1.0])).unwrap();
        let st = standardize(&s).unwrap();
        assert_eq!(st.layer("v").unwrap().values, vec![-0.5, 0.5]);
        let rec = st.standardization("v").unwrap().unwrap();
        assert_eq!((rec.mean, rec.sd), (0.5, 0.5));

        let c = CovariateStack::new(g).with_layer(Layer::new("flat", vec![3.0, 3.0])).unwrap();
        assert!(matches!(standardize(&c), Err(Error::ConstantLayer(n)) if n == "flat"));
    }

    #[test]
    fn standardize_already_standardized_values_is_noop() {
        let g = grid(4, 1);
        let s = CovariateStack::new(g)
            .with_layer(Layer::new("v", vec![-0.5, 0.5, -0.5, 0.5]))
            .unwrap();
        let st = standardize(&s).unwrap();
        for (a, b) in st.layer("v").unwrap().values.iter().zip(&s.layer("v").unwrap().values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_ignores_unmasked_cells() {
        let g = grid(3, 1).with_mask(vec![true, true, false]).unwrap();
        let s = CovariateStack::new(g)
            .with_layer(Layer::new("v", vec![0.0, 1.0, 1000.0]))
            .unwrap();
        let st = standardize(&s).unwrap();
        assert_eq!(&st.layer("v").unwrap().values[..2], &[-0.5, 0.5]);
    }

    #[test]
    fn aggregate_examples() {
        let fine = grid(2, 2);
        let coarse = GridSpec::new(Point::new(0.0, 0.0), 2.0, 2.0, 1, 1).unwrap();
        let s = CovariateStack::new(fine.clone())
            .with_layer(Layer::new("v", vec![1.0, 2.0, 3.0, 4.0]))
            .unwrap()
            .with_layer(Layer::new("c", vec![7.0; 4]))
            .unwrap();
        let a = aggregate(&s, &coarse).unwrap();
        assert_eq!(a.layer("v").unwrap().values, vec![2.5]);
        assert_eq!(a.layer("c").unwrap().values, vec![7.0]);

        let bad = GridSpec::new(Point::new(0.0, 0.0), 1.5, 1.5, 2, 2).unwrap();
        assert!(matches!(aggregate(&s, &bad), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn aggregate_population_on_raw_scale() {
        let fine = grid(2, 1);
        let coarse = GridSpec::new(Point::new(0.0, 0.0), 2.0, 1.0, 1, 1).unwrap();
        let s = CovariateStack::new(fine)
            .with_layer(Layer::log_population("pop", &[0.0, 100.0]))
            .unwrap();
        let a = aggregate(&s, &coarse).unwrap();
        assert!((a.layer("pop").unwrap().values[0] - 50f64.ln_1p()).abs() < 1e-12);
    }

    fn ragged_fixture(seed: u64) -> (CovariateStack, GridSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fine = grid(12, 9);
        let mask: Vec<bool> = (0..fine.n_cells()).map(|_| rng.random::<f64>() < 0.7).collect();
        let fine = fine.with_mask(mask).unwrap();
        let vals: Vec<f64> = (0..fine.n_cells()).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
        let s = CovariateStack::new(fine).with_layer(Layer::new("v", vals)).unwrap();
        let coarse = GridSpec::new(Point::new(0.0, 0.0), 3.0, 3.0, 4, 3).unwrap();
        (s, coarse)
    }

    #[test]
    fn aggregate_masked_mean_matches_brute_force() {
        let (s, coarse) = ragged_fixture(4);
        let a = aggregate(&s, &coarse).unwrap();
        let fine = s.grid();
        let v = &s.layer("v").unwrap().values;
        for cy in 0..3 {
            for cx in 0..4 {
                let mut acc = Vec::new();
                for iy in cy * 3..cy * 3 + 3 {
                    for ix in cx * 3..cx * 3 + 3 {
                        let i = fine.index(ix, iy);
                        if fine.is_masked(i) {
                            acc.push(v[i]);
                        }
                    }
                }
                let got = a.layer("v").unwrap().values[coarse.index(cx, cy)];
                if acc.is_empty() {
                    assert!(got.is_nan());
                    assert!(!a.grid().is_masked(coarse.index(cx, cy)));
                } else {
                    let oracle = acc.iter().sum::<f64>() / acc.len() as f64;
                    assert!((got - oracle).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn refine_broadcasts_coarse_values() {
        let fine = grid(4, 2);
        let coarse = GridSpec::new(Point::new(0.0, 0.0), 2.0, 2.0, 2, 1).unwrap();
        let s = CovariateStack::new(fine.clone())
            .with_layer(Layer::new("v", vec![1.0, 1.0, 5.0, 5.0, 3.0, 3.0, 7.0, 7.0]))
            .unwrap();
        let a = aggregate(&s, &coarse).unwrap();
        let r = refine_to(&a, &fine).unwrap();
        assert_eq!(r.layer("v").unwrap().values, vec![2.0, 2.0, 6.0, 6.0, 2.0, 2.0, 6.0, 6.0]);
    }

    #[test]
    fn interaction_and_design() {
        let g = grid(3, 2);
        let (lon, lat) = coordinate_layers(&g);
        let s = CovariateStack::new(g.clone())
            .with_layer(lon)
            .unwrap()
            .with_layer(lat)
            .unwrap();
        let s = standardize(&s).unwrap();
        let s = interaction_layer(&s, "lon", "lat").unwrap();
        let prod = &s.layer("lon:lat").unwrap().values;
        for i in 0..g.n_cells() {
            let oracle = s.layer("lon").unwrap().values[i] * s.layer("lat").unwrap().values[i];
            assert_eq!(prod[i], oracle);
        }
        let sq = interaction_layer(&s, "lon", "lon").unwrap();
        let v = &sq.layer("lon:lon").unwrap().values;
        assert!(v.iter().zip(&s.layer("lon").unwrap().values).all(|(a, b)| *a == b * b));
        assert!(matches!(interaction_layer(&s, "lon", "nope"), Err(Error::MissingLayer(_))));

        let zeros = CovariateStack::new(g.clone()).with_layer(Layer::new("z", vec![0.0; 6])).unwrap();
        let zl = interaction_layer(&zeros, "z", "z").unwrap();
        assert!(zl.layer("z:z").unwrap().values.iter().all(|&v| v == 0.0));

        let d0 = design_matrix(&CovariateStack::new(g.clone()));
        assert_eq!(d0.ncol(), 1);
        assert!((0..d0.nrow()).all(|r| d0.row(r) == [1.0]));
        let dz = design_matrix(&zeros);
        assert!((0..dz.nrow()).all(|r| dz.row(r)[1] == 0.0));
    }

    #[test]
    fn six_covariate_design_has_seven_columns() {
        let g = grid(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * 1000.0).collect();
        let elev: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * 500.0).collect();
        let (lon, lat) = coordinate_layers(&g);
        let s = CovariateStack::new(g.clone())
            .with_layer(Layer::log_population("logpop", &pop)).unwrap()
            .with_layer(Layer::new("elevation", elev)).unwrap()
            .with_layer(nearest_city_layer(&g, &[Point::new(1.0, 1.0), Point::new(6.0, 7.0)]).unwrap()).unwrap()
            .with_layer(lon).unwrap()
            .with_layer(lat).unwrap();
        let s = standardize(&s).unwrap();
        let s = standardize(&interaction_layer(&s, "lon", "lat").unwrap()).unwrap();
        let d = design_matrix(&s);
        assert_eq!(d.ncol(), 7);
        assert_eq!(d.names[6], "lon:lat");
    }

    #[test]
    fn mdis_is_nearest_distance() {
        let g = grid(2, 1);
        let l = nearest_city_layer(&g, &[Point::new(0.5, 0.5), Point::new(10.0, 0.5)]).unwrap();
        assert_eq!(l.values, vec![0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn standardize_moments_and_idempotence(vals in prop::collection::vec(-1e3f64..1e3, 4..40)) {
            let n = vals.len();
            let g = grid(n, 1);
            let s = CovariateStack::new(g).with_layer(Layer::new("v", vals)).unwrap();
            let st = match standardize(&s) { Ok(s) => s, Err(_) => return Ok(()) };
            let v = &st.layer("v").unwrap().values;
            let m = v.iter().sum::<f64>() / n as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((sd - 0.5).abs() < 1e-9);
            let again = standardize(&st).unwrap();
            for (a, b) in again.layer("v").unwrap().values.iter().zip(v) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregate_preserves_weighted_mean(seed in 0u64..500) {
            let (s, coarse) = ragged_fixture(seed);
            let a = aggregate(&s, &coarse).unwrap();
            let fine = s.grid();
            let v = &s.layer("v").unwrap().values;
            let fine_mean = fine.masked_indices().iter().map(|&i| v[i]).sum::<f64>() / fine.n_masked() as f64;
            let mut wsum = 0.0;
            let mut acc = 0.0;
            for c in a.grid().masked_indices() {
                let (cx, cy) = (c % 4, c / 4);
                let w = (cy * 3..cy * 3 + 3)
                    .flat_map(|iy| (cx * 3..cx * 3 + 3).map(move |ix| (ix, iy)))
                    .filter(|&(ix, iy)| fine.is_masked(fine.index(ix, iy)))
                    .count() as f64;
                acc += w * a.layer("v").unwrap().values[c];
                wsum += w;
            }
            prop_assert!((acc / wsum - fine_mean).abs() < 1e-9);
        }
    }
}
