//! Planar geometry: observation windows, regular grids, point patterns.
//!
//! All coordinates are planar kilometres. Longitude/latitude input is mapped
//! through [`Projection`] at ingestion.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Closed polygon ring: first vertex repeated as last.
pub type Ring = Vec<Point>;

/// One polygon: outer ring followed by holes.
pub type Polygon = Vec<Ring>;

fn ring_signed_area(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].x * w[1].y - w[1].x * w[0].y)
        .sum::<f64>()
        / 2.0
}

fn ring_centroid(ring: &[Point]) -> (f64, f64, f64) {
    let a = ring_signed_area(ring);
    let (mut cx, mut cy) = (0.0, 0.0);
    for w in ring.windows(2) {
        let cross = w[0].x * w[1].y - w[1].x * w[0].y;
        cx += (w[0].x + w[1].x) * cross;
        cy += (w[0].y + w[1].y) * cross;
    }
    (cx / (6.0 * a), cy / (6.0 * a), a.abs())
}

fn on_segment(p: &Point, a: &Point, b: &Point) -> bool {
    let scale = a.x.abs().max(a.y.abs()).max(b.x.abs()).max(b.y.abs()).max(1.0);
    segment_distance(p, a, b) <= 1e-12 * scale
}

fn segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let len2 = ex * ex + ey * ey;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * ex + (p.y - a.y) * ey) / len2).clamp(0.0, 1.0);
    p.dist(&Point::new(a.x + t * ex, a.y + t * ey))
}

/// Polygonal observation window. Holes and multiple parts are handled by the
/// even-odd rule over all rings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    rings: Vec<Ring>,
    area: f64,
    bbox: [f64; 4],
}

impl Window {
    /// Builds a window from polygons (outer ring first, then holes).
    /// Self-intersection is not detected.
    pub fn from_polygons(polygons: Vec<Polygon>) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::InvalidWindow("no polygons".into()));
        }
        let mut area = 0.0;
        let mut rings = Vec::new();
        for poly in polygons {
            if poly.is_empty() {
                return Err(Error::InvalidWindow("polygon without rings".into()));
            }
            for (k, ring) in poly.into_iter().enumerate() {
                if ring.len() < 4 {
                    return Err(Error::InvalidWindow(format!(
                        "ring has {} vertices, need at least 4",
                        ring.len()
                    )));
                }
                if ring.first() != ring.last() {
                    return Err(Error::InvalidWindow("ring is not closed".into()));
                }
                if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                    return Err(Error::InvalidWindow("non-finite vertex".into()));
                }
                let a = ring_signed_area(&ring).abs();
                area += if k == 0 { a } else { -a };
                rings.push(ring);
            }
        }
        if area <= 0.0 || !area.is_finite() {
            return Err(Error::InvalidWindow(format!("non-positive area {area}")));
        }
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in rings.iter().flatten() {
            bbox[0] = bbox[0].min(p.x);
            bbox[1] = bbox[1].min(p.y);
            bbox[2] = bbox[2].max(p.x);
            bbox[3] = bbox[3].max(p.y);
        }
        Ok(Window { rings, area, bbox })
    }

    pub fn from_rings(rings: Vec<Ring>) -> Result<Self> {
        Self::from_polygons(vec![rings])
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidWindow(format!(
                "degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Self::from_rings(vec![vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
            Point::new(x0, y0),
        ]])
    }

    pub fn unit_square() -> Self {
        Self::rectangle(0.0, 0.0, 1.0, 1.0).expect("valid rectangle")
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// `[xmin, ymin, xmax, ymax]`
    pub fn bbox(&self) -> [f64; 4] {
        self.bbox
    }

    pub fn shorter_side(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]).min(self.bbox[3] - self.bbox[1])
    }

    /// Iterates every boundary segment of every ring.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings
            .iter()
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    /// Even-odd membership; points on the boundary count as inside.
    pub fn contains(&self, p: &Point) -> bool {
        if p.x < self.bbox[0] || p.x > self.bbox[2] || p.y < self.bbox[1] || p.y > self.bbox[3] {
            return false;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if on_segment(p, &a, &b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let xint = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < xint {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Euclidean distance from `p` to the nearest boundary segment.
    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, &a, &b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Area-weighted centroid (outer rings add, holes subtract).
    pub fn centroid(&self) -> Point {
        let (mut sx, mut sy, mut sa) = (0.0, 0.0, 0.0);
        // Orientation-free: treat each ring by its nesting parity.
        for ring in &self.rings {
            let (cx, cy, a) = ring_centroid(ring);
            let probe = ring[0];
            let depth = self
                .rings
                .iter()
                .filter(|other| !std::ptr::eq(*other, ring) && ring_contains_strict(other, &probe))
                .count();
            let s = if depth % 2 == 0 { 1.0 } else { -1.0 };
            sx += s * a * cx;
            sy += s * a * cy;
            sa += s * a;
        }
        Point::new(sx / sa, sy / sa)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Window {
        let rings = self
            .rings
            .iter()
            .map(|r| r.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect())
            .collect();
        Window {
            rings,
            area: self.area,
            bbox: [
                self.bbox[0] + dx,
                self.bbox[1] + dy,
                self.bbox[2] + dx,
                self.bbox[3] + dy,
            ],
        }
    }

    /// Reads a GeoJSON `Polygon`, `MultiPolygon`, `Feature` or the first
    /// feature of a `FeatureCollection`. Coordinates are returned unprojected.
    pub fn polygons_from_geojson(text: &str) -> Result<Vec<Polygon>> {
        let v: Value = serde_json::from_str(text)?;
        geojson_polygons(&v)
    }
}

fn ring_contains_strict(ring: &[Point], p: &Point) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let xint = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < xint {
                inside = !inside;
            }
        }
    }
    inside
}

fn geojson_polygons(v: &Value) -> Result<Vec<Polygon>> {
    let bad = |m: &str| Error::InvalidWindow(format!("geojson: {m}"));
    let ty = v
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing `type`"))?;
    match ty {
        "FeatureCollection" => {
            let first = v
                .get("features")
                .and_then(Value::as_array)
                .and_then(|f| f.first())
                .ok_or_else(|| bad("empty FeatureCollection"))?;
            geojson_polygons(first)
        }
        "Feature" => geojson_polygons(v.get("geometry").ok_or_else(|| bad("feature without geometry"))?),
        "Polygon" => {
            let coords = v.get("coordinates").ok_or_else(|| bad("missing coordinates"))?;
            Ok(vec![parse_polygon(coords)?])
        }
        "MultiPolygon" => v
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing coordinates"))?
            .iter()
            .map(parse_polygon)
            .collect(),
        other => Err(bad(&format!("unsupported geometry type {other}"))),
    }
}

fn parse_polygon(v: &Value) -> Result<Polygon> {
    let bad = || Error::InvalidWindow("geojson: malformed polygon coordinates".into());
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|pt| {
                    let xy = pt.as_array().ok_or_else(bad)?;
                    match (xy.first().and_then(Value::as_f64), xy.get(1).and_then(Value::as_f64)) {
                        (Some(x), Some(y)) => Ok(Point::new(x, y)),
                        _ => Err(bad()),
                    }
                })
                .collect()
        })
        .collect()
}

/// Equirectangular projection about a reference longitude/latitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        Projection { lon0, lat0 }
    }

    /// Projection centred on the area centroid of polygons given in degrees.
    pub fn centered_on(polygons: &[Polygon]) -> Result<Self> {
        let w = Window::from_polygons(polygons.to_vec())?;
        let c = w.centroid();
        Ok(Projection::new(c.x, c.y))
    }

    pub fn forward(&self, lon: f64, lat: f64) -> Point {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        Point::new(
            k * (lon - self.lon0) * self.lat0.to_radians().cos(),
            k * (lat - self.lat0),
        )
    }

    pub fn inverse(&self, p: &Point) -> (f64, f64) {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        (
            self.lon0 + p.x / (k * self.lat0.to_radians().cos()),
            self.lat0 + p.y / k,
        )
    }

    pub fn project_polygons(&self, polygons: &[Polygon]) -> Vec<Polygon> {
        polygons
            .iter()
            .map(|poly| {
                poly.iter()
                    .map(|ring| ring.iter().map(|p| self.forward(p.x, p.y)).collect())
                    .collect()
            })
            .collect()
    }
}

/// Regular grid of `nx * ny` cells with an inside-window mask.
/// Cells are indexed row-major from the lower-left: `idx = iy * nx + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    mask: Vec<bool>,
}

impl GridSpec {
    /// Grid with every cell masked in.
    pub fn new(origin: Point, dx: f64, dy: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0) || nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid(format!(
                "need dx, dy > 0 and nx, ny >= 1 (got dx={dx}, dy={dy}, nx={nx}, ny={ny})"
            )));
        }
        Ok(GridSpec {
            origin,
            dx,
            dy,
            nx,
            ny,
            mask: vec![true; nx * ny],
        })
    }

    /// `nx * ny` grid over the window's bounding box; a cell is masked in
    /// when its centre lies in the window.
    pub fn covering(window: &Window, nx: usize, ny: usize) -> Result<Self> {
        let [x0, y0, x1, y1] = window.bbox();
        let g = GridSpec::new(
            Point::new(x0, y0),
            (x1 - x0) / nx as f64,
            (y1 - y0) / ny as f64,
            nx,
            ny,
        )?;
        Ok(g.with_window_mask(window))
    }

    /// Square cells of side `cell` covering the window's bounding box.
    pub fn covering_square(window: &Window, cell: f64) -> Result<Self> {
        let [x0, y0, x1, y1] = window.bbox();
        if !(cell > 0.0) {
            return Err(Error::InvalidGrid(format!("cell size {cell}")));
        }
        let nx = ((x1 - x0) / cell).ceil().max(1.0) as usize;
        let ny = ((y1 - y0) / cell).ceil().max(1.0) as usize;
        Ok(GridSpec::new(Point::new(x0, y0), cell, cell, nx, ny)?.with_window_mask(window))
    }

    pub fn with_window_mask(mut self, window: &Window) -> Self {
        for idx in 0..self.n_cells() {
            self.mask[idx] = window.contains(&self.cell_center(idx));
        }
        self
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n_cells() {
            return Err(Error::InvalidGrid(format!(
                "mask has {} entries for {} cells",
                mask.len(),
                self.n_cells()
            )));
        }
        self.mask = mask;
        Ok(self)
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_masked(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&i| self.mask[i]).collect()
    }

    pub fn n_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_area(&self) -> f64 {
        self.n_masked() as f64 * self.cell_area()
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.dx,
            self.origin.y + (iy as f64 + 0.5) * self.dy,
        )
    }

    /// `[xmin, ymin, xmax, ymax]` of the full grid.
    pub fn extent(&self) -> [f64; 4] {
        [
            self.origin.x,
            self.origin.y,
            self.origin.x + self.nx as f64 * self.dx,
            self.origin.y + self.ny as f64 * self.dy,
        ]
    }

    /// Cell containing `p`. Points on an interior edge go to the cell with
    /// the larger index; points on the outer right/top edge go to the last cell.
    pub fn locate(&self, p: &Point) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.dx;
        let fy = (p.y - self.origin.y) / self.dy;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.nx as f64 && fy <= self.ny as f64) {
            return None;
        }
        let ix = (fx.floor() as usize).min(self.nx - 1);
        let iy = (fy.floor() as usize).min(self.ny - 1);
        Some((ix, iy))
    }

    pub fn locate_index(&self, p: &Point) -> Option<usize> {
        self.locate(p).map(|(ix, iy)| self.index(ix, iy))
    }

    /// Same geometry (origin, spacing, dimensions and mask).
    pub fn same_as(&self, other: &GridSpec) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        self.nx == other.nx
            && self.ny == other.ny
            && close(self.dx, other.dx)
            && close(self.dy, other.dy)
            && close(self.origin.x, other.origin.x)
            && close(self.origin.y, other.origin.y)
            && self.mask == other.mask
    }
}

/// Events inside an observation window.
#[derive(Debug, Clone)]
pub struct PointPattern {
    points: Vec<Point>,
    marks: Option<Vec<String>>,
    specificity: Option<Vec<u8>>,
    window: Arc<Window>,
    simple: bool,
}

impl PointPattern {
    /// Fails if any point lies outside the window.
    pub fn new(points: Vec<Point>, window: Arc<Window>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !window.contains(p)) {
            return Err(Error::InvalidParameter(format!(
                "point ({}, {}) lies outside the window",
                p.x, p.y
            )));
        }
        Ok(PointPattern {
            points,
            marks: None,
            specificity: None,
            window,
            simple: false,
        })
    }

    pub fn empty(window: Arc<Window>) -> Self {
        PointPattern {
            points: Vec::new(),
            marks: None,
            specificity: None,
            window,
            simple: true,
        }
    }

    pub fn with_marks(mut self, marks: Vec<String>) -> Result<Self> {
        if marks.len() != self.points.len() {
            return Err(Error::InvalidParameter("mark count differs from point count".into()));
        }
        self.marks = Some(marks);
        Ok(self)
    }

    pub fn with_specificity(mut self, spec: Vec<u8>) -> Result<Self> {
        if spec.len() != self.points.len() {
            return Err(Error::InvalidParameter(
                "specificity count differs from point count".into(),
            ));
        }
        if let Some(s) = spec.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::InvalidParameter(format!("specificity {s} outside 1..=5")));
        }
        self.specificity = Some(spec);
        Ok(self)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn marks(&self) -> Option<&[String]> {
        self.marks.as_deref()
    }

    pub fn specificity(&self) -> Option<&[u8]> {
        self.specificity.as_deref()
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn window_arc(&self) -> Arc<Window> {
        Arc::clone(&self.window)
    }

    pub fn is_simple(&self) -> bool {
        self.simple
    }

    /// Checks pairwise distinctness and sets the `simple` flag on success.
    pub fn into_simple(mut self) -> Result<Self> {
        if !self.simple {
            if has_duplicates(&self.points) {
                return Err(Error::Degenerate(
                    "pattern has duplicated locations; deduplicate or jitter first".into(),
                ));
            }
            self.simple = true;
        }
        Ok(self)
    }

    pub(crate) fn require_simple(&self) -> Result<()> {
        if self.simple {
            Ok(())
        } else {
            Err(Error::Degenerate(
                "operation requires a simple pattern (distinct locations)".into(),
            ))
        }
    }

    /// Subset by index, keeping marks and specificity.
    pub fn select(&self, keep: &[usize]) -> PointPattern {
        PointPattern {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            marks: self
                .marks
                .as_ref()
                .map(|m| keep.iter().map(|&i| m[i].clone()).collect()),
            specificity: self
                .specificity
                .as_ref()
                .map(|s| keep.iter().map(|&i| s[i]).collect()),
            window: Arc::clone(&self.window),
            simple: self.simple,
        }
    }

    pub(crate) fn from_parts(
        points: Vec<Point>,
        marks: Option<Vec<String>>,
        specificity: Option<Vec<u8>>,
        window: Arc<Window>,
        simple: bool,
    ) -> Self {
        PointPattern {
            points,
            marks,
            specificity,
            window,
            simple,
        }
    }
}

pub(crate) fn has_duplicates(points: &[Point]) -> bool {
    let mut keys: Vec<(u64, u64)> = points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
    keys.sort_unstable();
    keys.windows(2).any(|w| w[0] == w[1])
}

/// Dense symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn point_in_window(p: &Point, w: &Window) -> bool {
    w.contains(p)
}

pub fn pairwise_distances(pp: &PointPattern) -> DistanceMatrix {
    let n = pp.len();
    let pts = pp.points();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = pts[i].dist(&pts[j]);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}

pub fn count_in_region(pp: &PointPattern, region: &Window) -> usize {
    pp.points().iter().filter(|p| region.contains(p)).count()
}

/// Per-cell counts over every cell of the grid (masked or not).
pub fn bin_to_grid(pp: &PointPattern, grid: &GridSpec) -> Result<Vec<u32>> {
    bin_points(pp.points(), grid)
}

pub(crate) fn bin_points(points: &[Point], grid: &GridSpec) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; grid.n_cells()];
    for p in points {
        let idx = grid
            .locate_index(p)
            .ok_or(Error::OutsideGrid { x: p.x, y: p.y })?;
        counts[idx] += 1;
    }
    Ok(counts)
}
