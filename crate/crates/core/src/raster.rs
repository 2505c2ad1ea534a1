//! Canopy height rasters: loading, validation, georeferencing and windowed access.
//!
//! Heights are kept as raw decimeter integers. Pixel `(row, col)` covers the
//! ground square
//! `[x0 + col·c, x0 + (col+1)·c) × [y0 + (rows−1−row)·c, y0 + (rows−row)·c)`,
//! so row 0 is the northernmost row.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

/// Sentinel used when a file does not declare `NODATA_value`.
pub const DEFAULT_NODATA: i32 = -9999;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("window rows {rows:?} cols {cols:?} out of bounds for {n_rows}x{n_cols} raster")]
    Bounds {
        rows: Range<usize>,
        cols: Range<usize>,
        n_rows: usize,
        n_cols: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned ground extent in CRS meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn intersects(&self, other: &Extent) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }
}

/// Single-band integer canopy height raster with a nodata sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    n_rows: usize,
    n_cols: usize,
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    values: Vec<i32>,
    nodata_value: i32,
    crs_tag: String,
}

impl RasterGrid {
    /// Builds a raster from row-major values, top row first.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        values: Vec<i32>,
        nodata_value: i32,
    ) -> Result<Self, RasterError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(RasterError::Invalid(format!(
                "dimensions must be positive, got {n_rows}x{n_cols}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(RasterError::Invalid(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(RasterError::Invalid("non-finite origin".into()));
        }
        if values.len() != n_rows * n_cols {
            return Err(RasterError::Invalid(format!(
                "expected {} values, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|&v| v != nodata_value && v < 0) {
            return Err(RasterError::Invalid(format!(
                "negative height {} at row {} col {}",
                values[pos],
                pos / n_cols,
                pos % n_cols
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            origin_x,
            origin_y,
            cell_size,
            values,
            nodata_value,
            crs_tag: String::new(),
        })
    }

    /// Raster filled with a single value, with the lower-left corner at `(origin_x, origin_y)`.
    pub fn filled(
        n_rows: usize,
        n_cols: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        value: i32,
    ) -> Result<Self, RasterError> {
        Self::new(
            n_rows,
            n_cols,
            origin_x,
            origin_y,
            cell_size,
            vec![value; n_rows * n_cols],
            DEFAULT_NODATA,
        )
    }

    pub fn with_crs(mut self, tag: impl Into<String>) -> Self {
        self.crs_tag = tag.into();
        self
    }

    pub fn with_origin(mut self, origin_x: f64, origin_y: f64) -> Self {
        self.origin_x = origin_x;
        self.origin_y = origin_y;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn origin_x(&self) -> f64 {
        self.origin_x
    }

    pub fn origin_y(&self) -> f64 {
        self.origin_y
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn nodata_value(&self) -> i32 {
        self.nodata_value
    }

    pub fn crs_tag(&self) -> &str {
        &self.crs_tag
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.values[row * self.n_cols + col]
    }

    #[inline]
    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == self.nodata_value
    }

    /// Ground coordinates of the center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y + (self.n_rows as f64 - row as f64 - 0.5) * self.cell_size,
        )
    }

    pub fn extent(&self) -> Extent {
        Extent {
            min_x: self.origin_x,
            min_y: self.origin_y,
            max_x: self.origin_x + self.n_cols as f64 * self.cell_size,
            max_y: self.origin_y + self.n_rows as f64 * self.cell_size,
        }
    }

    /// Pixel containing the ground point `(x, y)`, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.cell_size).floor();
        let row_from_bottom = ((y - self.origin_y) / self.cell_size).floor();
        if col < 0.0 || row_from_bottom < 0.0 {
            return None;
        }
        let (col, rfb) = (col as usize, row_from_bottom as usize);
        if col >= self.n_cols || rfb >= self.n_rows {
            return None;
        }
        Some((self.n_rows - 1 - rfb, col))
    }

    pub fn view(&self) -> RasterView<'_> {
        RasterView {
            grid: self,
            row0: 0,
            col0: 0,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
        }
    }

    pub fn window(
        &self,
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> Result<RasterView<'_>, RasterError> {
        self.view().window(rows, cols)
    }

    pub fn parse(text: &str) -> Result<Self, RasterError> {
        parse_ascii_grid(text)
    }

    /// Canonical text form: fixed header order, one raster row per line.
    pub fn to_ascii_grid(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 4 + 128);
        writeln!(out, "ncols {}", self.n_cols).unwrap();
        writeln!(out, "nrows {}", self.n_rows).unwrap();
        writeln!(out, "xllcorner {}", self.origin_x).unwrap();
        writeln!(out, "yllcorner {}", self.origin_y).unwrap();
        writeln!(out, "cellsize {}", self.cell_size).unwrap();
        writeln!(out, "NODATA_value {}", self.nodata_value).unwrap();
        if !self.crs_tag.is_empty() {
            writeln!(out, "crs {}", self.crs_tag).unwrap();
        }
        for row in self.values.chunks(self.n_cols) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Read-only window into a [`RasterGrid`]; shares the source values.
#[derive(Debug, Clone, Copy)]
pub struct RasterView<'a> {
    grid: &'a RasterGrid,
    row0: usize,
    col0: usize,
    n_rows: usize,
    n_cols: usize,
}

impl<'a> RasterView<'a> {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn cell_size(&self) -> f64 {
        self.grid.cell_size
    }

    pub fn nodata_value(&self) -> i32 {
        self.grid.nodata_value
    }

    /// Offset of the window's top-left pixel in the source raster.
    pub fn offset(&self) -> (usize, usize) {
        (self.row0, self.col0)
    }

    pub fn origin_x(&self) -> f64 {
        self.grid.origin_x + self.col0 as f64 * self.grid.cell_size
    }

    pub fn origin_y(&self) -> f64 {
        let below = self.grid.n_rows - self.row0 - self.n_rows;
        self.grid.origin_y + below as f64 * self.grid.cell_size
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i32 {
        assert!(row < self.n_rows && col < self.n_cols, "pixel outside window");
        self.grid.get(self.row0 + row, self.col0 + col)
    }

    pub fn window(
        &self,
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> Result<RasterView<'a>, RasterError> {
        if rows.start >= rows.end
            || cols.start >= cols.end
            || rows.end > self.n_rows
            || cols.end > self.n_cols
        {
            return Err(RasterError::Bounds {
                rows,
                cols,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        Ok(RasterView {
            grid: self.grid,
            row0: self.row0 + rows.start,
            col0: self.col0 + cols.start,
            n_rows: rows.len(),
            n_cols: cols.len(),
        })
    }

    pub fn to_grid(&self) -> RasterGrid {
        let mut values = Vec::with_capacity(self.n_rows * self.n_cols);
        for r in 0..self.n_rows {
            let start = (self.row0 + r) * self.grid.n_cols + self.col0;
            values.extend_from_slice(&self.grid.values[start..start + self.n_cols]);
        }
        RasterGrid {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            origin_x: self.origin_x(),
            origin_y: self.origin_y(),
            cell_size: self.grid.cell_size,
            values,
            nodata_value: self.grid.nodata_value,
            crs_tag: self.grid.crs_tag.clone(),
        }
    }
}

impl PartialEq for RasterView<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.origin_x() == other.origin_x()
            && self.origin_y() == other.origin_y()
            && self.cell_size() == other.cell_size()
            && (0..self.n_rows)
                .all(|r| (0..self.n_cols).all(|c| self.get(r, c) == other.get(r, c)))
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterGrid, RasterError> {
    let text = fs::read_to_string(path)?;
    parse_ascii_grid(&text)
}

pub fn save_raster(raster: &RasterGrid, path: impl AsRef<Path>) -> Result<(), RasterError> {
    fs::write(path, raster.to_ascii_grid())?;
    Ok(())
}

#[derive(Default)]
struct Header {
    ncols: Option<usize>,
    nrows: Option<usize>,
    xll: Option<(f64, bool)>,
    yll: Option<(f64, bool)>,
    cellsize: Option<f64>,
    nodata: Option<i32>,
    crs: Option<String>,
}

fn parse_ascii_grid(text: &str) -> Result<RasterGrid, RasterError> {
    let mut header = Header::default();
    let mut lines = text.lines().enumerate().peekable();

    while let Some(&(idx, line)) = lines.peek() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            lines.next();
            continue;
        }
        let mut parts = trimmed.splitn(2, char::is_whitespace);
        let key = parts.next().unwrap_or_default();
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            break;
        }
        let value = parts.next().map(str::trim).unwrap_or_default();
        if value.is_empty() {
            return Err(parse_err(line_no, format!("header key `{key}` has no value")));
        }
        let perr = |what: &str| parse_err(line_no, format!("invalid {what} `{value}`"));
        match key.to_ascii_lowercase().as_str() {
            "ncols" => header.ncols = Some(value.parse().map_err(|_| perr("ncols"))?),
            "nrows" => header.nrows = Some(value.parse().map_err(|_| perr("nrows"))?),
            "xllcorner" => header.xll = Some((parse_f64(value).ok_or_else(|| perr("xllcorner"))?, false)),
            "xllcenter" => header.xll = Some((parse_f64(value).ok_or_else(|| perr("xllcenter"))?, true)),
            "yllcorner" => header.yll = Some((parse_f64(value).ok_or_else(|| perr("yllcorner"))?, false)),
            "yllcenter" => header.yll = Some((parse_f64(value).ok_or_else(|| perr("yllcenter"))?, true)),
            "cellsize" => header.cellsize = Some(parse_f64(value).ok_or_else(|| perr("cellsize"))?),
            "nodata_value" => header.nodata = Some(value.parse().map_err(|_| perr("NODATA_value"))?),
            "crs" => header.crs = Some(value.to_string()),
            other => return Err(parse_err(line_no, format!("unknown header key `{other}`"))),
        }
        lines.next();
    }

    let missing = |k: &str| parse_err(0, format!("missing header key `{k}`"));
    let n_cols = header.ncols.ok_or_else(|| missing("ncols"))?;
    let n_rows = header.nrows.ok_or_else(|| missing("nrows"))?;
    let cell_size = header.cellsize.ok_or_else(|| missing("cellsize"))?;
    let (xll, x_center) = header.xll.ok_or_else(|| missing("xllcorner"))?;
    let (yll, y_center) = header.yll.ok_or_else(|| missing("yllcorner"))?;
    let nodata = header.nodata.unwrap_or(DEFAULT_NODATA);
    if n_cols == 0 || n_rows == 0 {
        return Err(parse_err(0, "ncols and nrows must be positive".into()));
    }
    if cell_size.is_nan() || cell_size <= 0.0 {
        return Err(parse_err(0, format!("cellsize must be positive, got {cell_size}")));
    }
    let origin_x = if x_center { xll - 0.5 * cell_size } else { xll };
    let origin_y = if y_center { yll - 0.5 * cell_size } else { yll };

    let mut values = Vec::with_capacity(n_rows * n_cols);
    let mut rows_read = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == n_rows {
            return Err(parse_err(line_no, format!("more than {n_rows} data rows")));
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: i32 = tok
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid integer height `{tok}`")))?;
            if v != nodata && v < 0 {
                return Err(parse_err(line_no, format!("negative height {v}")));
            }
            values.push(v);
        }
        let got = values.len() - before;
        if got != n_cols {
            return Err(parse_err(
                line_no,
                format!("expected {n_cols} values in row, found {got}"),
            ));
        }
        rows_read += 1;
    }
    if rows_read != n_rows {
        return Err(parse_err(
            text.lines().count(),
            format!("expected {n_rows} data rows, found {rows_read}"),
        ));
    }

    let grid = RasterGrid::new(n_rows, n_cols, origin_x, origin_y, cell_size, values, nodata)
        .map_err(|e| parse_err(0, e.to_string()))?;
    Ok(match header.crs {
        Some(tag) => grid.with_crs(tag),
        None => grid,
    })
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_err(line: usize, msg: String) -> RasterError {
    RasterError::Parse { line, msg }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SMALL: &str = "ncols 2\nnrows 2\nxllcorner 100\nyllcorner 200\ncellsize 1\nNODATA_value -9999\n0 40\n120 -9999\n";

    #[test]
    fn loads_hand_written_grid() {
        let g = RasterGrid::parse(SMALL).unwrap();
        assert_eq!((g.n_rows(), g.n_cols()), (2, 2));
        assert_eq!(g.values(), &[0, 40, 120, -9999]);
        assert!(g.is_nodata(1, 1));
        assert!(!g.is_nodata(0, 0));
        assert_eq!(g.to_ascii_grid(), SMALL);
    }

    #[test]
    fn header_is_case_insensitive_and_accepts_centers() {
        let text = "NCOLS 1\nNROWS 1\nXLLCENTER 0.5\nYLLCENTER 0.5\nCELLSIZE 1\n7\n";
        let g = RasterGrid::parse(text).unwrap();
        assert_eq!((g.origin_x(), g.origin_y()), (0.0, 0.0));
        assert_eq!(g.nodata_value(), DEFAULT_NODATA);
        assert_eq!(g.get(0, 0), 7);
    }

    #[test]
    fn short_row_is_a_parse_error_with_line() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n4 5\n";
        match RasterGrid::parse(text) {
            Err(RasterError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn negative_height_rejected() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value -1\n-1 -5\n";
        match RasterGrid::parse(text) {
            Err(RasterError::Parse { line, msg }) => {
                assert_eq!(line, 7);
                assert!(msg.contains("negative"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_rows_and_bad_header() {
        let text = "ncols 1\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1\n";
        assert!(matches!(RasterGrid::parse(text), Err(RasterError::Parse { .. })));
        let text = "ncols x\nnrows 2\n";
        assert!(matches!(
            RasterGrid::parse(text),
            Err(RasterError::Parse { line: 1, .. })
        ));
        let text = "nrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1\n";
        assert!(RasterGrid::parse(text).is_err());
    }

    #[test]
    fn pixel_centers_of_3x3() {
        let g = RasterGrid::filled(3, 3, 10.0, 20.0, 2.0, 0).unwrap();
        assert_eq!(g.pixel_center(0, 0), (11.0, 25.0));
        assert_eq!(g.pixel_center(0, 2), (15.0, 25.0));
        assert_eq!(g.pixel_center(2, 0), (11.0, 21.0));
        assert_eq!(g.pixel_center(2, 2), (15.0, 21.0));
        assert_eq!(g.pixel_center(1, 1), (13.0, 23.0));
        assert_eq!(g.locate(11.0, 25.0), Some((0, 0)));
        assert_eq!(g.locate(15.9, 20.1), Some((2, 2)));
        assert_eq!(g.locate(16.0, 21.0), None);
        assert_eq!(g.locate(9.99, 21.0), None);
    }

    #[test]
    fn windows() {
        let values: Vec<i32> = (0..12).collect();
        let g = RasterGrid::new(3, 4, 0.0, 0.0, 1.0, values, DEFAULT_NODATA).unwrap();
        assert!(g.window(0..3, 0..4).unwrap() == g.view());
        assert_eq!(g.window(0..3, 0..4).unwrap().to_grid(), g);

        let w = g.window(0..1, 0..1).unwrap();
        assert_eq!(w.get(0, 0), 0);
        assert_eq!((w.origin_x(), w.origin_y()), (0.0, 2.0));

        let w = g.window(1..3, 2..4).unwrap();
        assert_eq!(w.get(0, 0), 6);
        assert_eq!(w.get(1, 1), 11);
        assert_eq!((w.origin_x(), w.origin_y()), (2.0, 0.0));

        assert!(matches!(g.window(0..4, 0..1), Err(RasterError::Bounds { .. })));
        assert!(matches!(g.window(1..1, 0..1), Err(RasterError::Bounds { .. })));
    }

    fn arb_grid() -> impl Strategy<Value = RasterGrid> {
        (1usize..8, 1usize..8, -1000i32..1000, -1000i32..1000, 1u32..4).prop_flat_map(
            |(r, c, ox, oy, cs)| {
                prop::collection::vec(prop_oneof![9 => 0i32..2000, 1 => Just(DEFAULT_NODATA)], r * c)
                    .prop_map(move |vals| {
                        RasterGrid::new(r, c, ox as f64 * 0.5, oy as f64 * 0.25, cs as f64 * 0.5, vals, DEFAULT_NODATA)
                            .unwrap()
                    })
            },
        )
    }

    proptest! {
        #[test]
        fn save_load_is_a_fixed_point(g in arb_grid()) {
            let text = g.to_ascii_grid();
            let back = RasterGrid::parse(&text).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(back.to_ascii_grid(), text);
        }

        #[test]
        fn window_composition(g in arb_grid(), a in 0usize..8, b in 0usize..8, c in 0usize..8, d in 0usize..8,
                              e in 0usize..8, f in 0usize..8, h in 0usize..8, i in 0usize..8) {
            let (r0, r1) = (a % g.n_rows(), b % g.n_rows());
            let (rs, re) = (r0.min(r1), r0.max(r1) + 1);
            let (c0, c1) = (c % g.n_cols(), d % g.n_cols());
            let (cs, ce) = (c0.min(c1), c0.max(c1) + 1);
            let outer = g.window(rs..re, cs..ce).unwrap();
            let (ir0, ir1) = (e % outer.n_rows(), f % outer.n_rows());
            let (irs, ire) = (ir0.min(ir1), ir0.max(ir1) + 1);
            let (ic0, ic1) = (h % outer.n_cols(), i % outer.n_cols());
            let (ics, ice) = (ic0.min(ic1), ic0.max(ic1) + 1);
            let nested = outer.window(irs..ire, ics..ice).unwrap();
            let direct = g.window(rs + irs..rs + ire, cs + ics..cs + ice).unwrap();
            prop_assert!(nested == direct);
            prop_assert_eq!(nested.to_grid(), direct.to_grid());
        }
    }
}
