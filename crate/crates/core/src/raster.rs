//! ESRI ASCII grid reading and writing.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{GridSpec, Point, Projection};

/// An ESRI ASCII raster. `values` are stored row-major with the first row
/// at the top (north), as in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xll: f64,
    pub yll: f64,
    pub dx: f64,
    pub dy: f64,
    pub nodata: f64,
    pub values: Vec<f64>,
}

impl AsciiGrid {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut ncols = None;
        let mut nrows = None;
        let mut xll = None;
        let mut yll = None;
        let mut centered = false;
        let mut cellsize = None;
        let mut dx = None;
        let mut dy = None;
        let mut nodata = -9999.0;
        let mut values = Vec::new();
        let mut in_body = false;
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if !in_body {
                let mut parts = trimmed.split_whitespace();
                let key = parts.next().unwrap_or_default().to_ascii_lowercase();
                let is_header = key.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
                if is_header {
                    let val = parts
                        .next()
                        .ok_or_else(|| err(lineno, format!("header `{key}` without value")))?;
                    let num: f64 = val
                        .parse()
                        .map_err(|_| err(lineno, format!("bad header value `{val}`")))?;
                    match key.as_str() {
                        "ncols" => ncols = Some(num as usize),
                        "nrows" => nrows = Some(num as usize),
                        "xllcorner" => xll = Some(num),
                        "yllcorner" => yll = Some(num),
                        "xllcenter" => {
                            xll = Some(num);
                            centered = true;
                        }
                        "yllcenter" => {
                            yll = Some(num);
                            centered = true;
                        }
                        "cellsize" => cellsize = Some(num),
                        "dx" => dx = Some(num),
                        "dy" => dy = Some(num),
                        "nodata_value" => nodata = num,
                        other => return Err(err(lineno, format!("unknown header `{other}`"))),
                    }
                    continue;
                }
                in_body = true;
            }
            for tok in trimmed.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| err(lineno, format!("bad cell value `{tok}`")))?;
                values.push(v);
            }
        }
        let ncols = ncols.ok_or_else(|| err(0, "missing ncols".into()))?;
        let nrows = nrows.ok_or_else(|| err(0, "missing nrows".into()))?;
        let (dx, dy) = match (cellsize, dx, dy) {
            (Some(c), _, _) => (c, c),
            (None, Some(a), Some(b)) => (a, b),
            _ => return Err(err(0, "missing cellsize".into())),
        };
        let mut xll = xll.ok_or_else(|| err(0, "missing xllcorner".into()))?;
        let mut yll = yll.ok_or_else(|| err(0, "missing yllcorner".into()))?;
        if centered {
            xll -= dx / 2.0;
            yll -= dy / 2.0;
        }
        if values.len() != ncols * nrows {
            return Err(err(
                0,
                format!("expected {} cell values, found {}", ncols * nrows, values.len()),
            ));
        }
        Ok(AsciiGrid {
            ncols,
            nrows,
            xll,
            yll,
            dx,
            dy,
            nodata,
            values,
        })
    }

    /// Value at raster coordinate `(x, y)`; `None` outside or on NODATA.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let fx = (x - self.xll) / self.dx;
        let fy = (y - self.yll) / self.dy;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.ncols as f64 && fy <= self.nrows as f64) {
            return None;
        }
        let col = (fx.floor() as usize).min(self.ncols - 1);
        let row_from_bottom = (fy.floor() as usize).min(self.nrows - 1);
        let row = self.nrows - 1 - row_from_bottom;
        let v = self.values[row * self.ncols + col];
        (v != self.nodata && v.is_finite()).then_some(v)
    }

    /// Nearest-cell lookup at each grid cell centre. With a projection the
    /// raster is taken to be in degrees and centres are mapped back to
    /// longitude/latitude first. Unavailable cells become NaN.
    pub fn resample_to(&self, grid: &GridSpec, projection: Option<&Projection>) -> Vec<f64> {
        (0..grid.n_cells())
            .map(|idx| {
                let c = grid.cell_center(idx);
                let (x, y) = match projection {
                    Some(p) => p.inverse(&c),
                    None => (c.x, c.y),
                };
                self.sample(x, y).unwrap_or(f64::NAN)
            })
            .collect()
    }

    /// Raster view of per-cell grid values; unmasked or non-finite cells
    /// are written as NODATA.
    pub fn from_grid_values(grid: &GridSpec, values: &[f64]) -> Self {
        let nodata = -9999.0;
        let mut out = Vec::with_capacity(grid.n_cells());
        for row in 0..grid.ny {
            let iy = grid.ny - 1 - row;
            for ix in 0..grid.nx {
                let idx = grid.index(ix, iy);
                let v = values[idx];
                out.push(if grid.is_masked(idx) && v.is_finite() { v } else { nodata });
            }
        }
        AsciiGrid {
            ncols: grid.nx,
            nrows: grid.ny,
            xll: grid.origin.x,
            yll: grid.origin.y,
            dx: grid.dx,
            dy: grid.dy,
            nodata,
            values: out,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ncols {}", self.ncols);
        let _ = writeln!(s, "nrows {}", self.nrows);
        let _ = writeln!(s, "xllcorner {}", self.xll);
        let _ = writeln!(s, "yllcorner {}", self.yll);
        if (self.dx - self.dy).abs() <= 1e-12 * self.dx.abs() {
            let _ = writeln!(s, "cellsize {}", self.dx);
        } else {
            let _ = writeln!(s, "dx {}", self.dx);
            let _ = writeln!(s, "dy {}", self.dy);
        }
        let _ = writeln!(s, "NODATA_value {}", self.nodata);
        for row in self.values.chunks(self.ncols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Grid geometry matching this raster, every cell masked in.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(Point::new(self.xll, self.yll), self.dx, self.dy, self.ncols, self.nrows)
    }

    /// Values reordered to grid cell order (bottom row first).
    pub fn grid_values(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.ncols * self.nrows];
        for row in 0..self.nrows {
            let iy = self.nrows - 1 - row;
            for col in 0..self.ncols {
                let v = self.values[row * self.ncols + col];
                out[iy * self.ncols + col] = if v == self.nodata { f64::NAN } else { v };
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "ncols 3\nnrows 2\nxllcorner 10\nyllcorner 20\ncellsize 0.5\nNODATA_value -9999\n1 2 3\n4 -9999 6\n";

    #[test]
    fn parses_header_and_orientation() {
        let g = AsciiGrid::parse(SAMPLE, Path::new("t.asc")).unwrap();
        assert_eq!((g.ncols, g.nrows), (3, 2));
        // top row is north
        assert_eq!(g.sample(10.1, 20.9), Some(1.0));
        assert_eq!(g.sample(10.1, 20.1), Some(4.0));
        assert_eq!(g.sample(10.6, 20.1), None);
        assert_eq!(g.sample(9.0, 20.1), None);
        let v = g.grid_values();
        assert_eq!(v[0], 4.0);
        assert!(v[1].is_nan());
        assert_eq!(v[3], 1.0);
    }

    #[test]
    fn bad_value_reports_line() {
        let text = SAMPLE.replace("4 -9999 6", "4 x 6");
        match AsciiGrid::parse(&text, Path::new("t.asc")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read_preserves_values() {
        let grid = GridSpec::new(Point::new(0.0, 0.0), 2.0, 2.0, 3, 2).unwrap();
        let vals: Vec<f64> = (0..6).map(|i| i as f64 * 1.5).collect();
        let r = AsciiGrid::from_grid_values(&grid, &vals);
        let back = AsciiGrid::parse(&r.to_text(), Path::new("x")).unwrap();
        assert_eq!(back.grid_values(), vals);
        assert!(back.grid_spec().unwrap().same_as(&grid));
    }
}
