//! Labeled polygons, pixel masks and the geographic train/validation/test split.
//!
//! Rings are closed coordinate lists in raster CRS meters. Every polygon keeps
//! outer rings counter-clockwise and holes clockwise, so the sum of signed
//! shoelace areas is the covered area. Inside tests use the even-odd rule
//! with half-open edges, which makes pixels on shared boundaries belong to
//! exactly one side.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::raster::{Extent, RasterGrid};

pub type Point = [f64; 2];

/// Regions below one hectare are too small to assess reliably.
pub const MIN_REGION_AREA_M2: f64 = 10_000.0;

/// Split grid cell side used by default (1.28 km).
pub const DEFAULT_SPLIT_CELL_M: f64 = 1280.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate ring {ring}: {reason}")]
    DegenerateRing { ring: usize, reason: String },
    #[error("polygon has no rings")]
    Empty,
    #[error("polygon `{0}` lies outside the raster")]
    OutsideRaster(String),
    #[error("no pixel centers inside polygon `{0}`")]
    NoPixelsInside(String),
    #[error("CHM incomplete for polygon `{id}`: {nodata} nodata pixels")]
    ChmIncomplete { id: String, nodata: usize },
    #[error("invalid split fractions {0:?}")]
    Fractions([f64; 3]),
    #[error("no split cell intersects any polygon")]
    EmptySplit,
    #[error("invalid cell size {0}")]
    CellSize(f64),
    #[error("GeoJSON: {0}")]
    GeoJson(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Low = 0,
    High = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Low),
            1 => Some(Label::High),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Low => "low",
            Label::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" | "1" => Some(Label::High),
            "low" | "0" => Some(Label::Low),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPolygon {
    rings: Vec<Vec<Point>>,
    pub label: Option<Label>,
    pub source_id: String,
}

impl LabeledPolygon {
    /// First ring is the exterior, the rest are holes.
    pub fn new(
        rings: Vec<Vec<Point>>,
        label: Option<Label>,
        source_id: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        Self::from_parts(vec![rings], label, source_id)
    }

    /// Several outer boundaries (each with its holes) forming one region.
    pub fn from_parts(
        parts: Vec<Vec<Vec<Point>>>,
        label: Option<Label>,
        source_id: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        let mut rings = Vec::new();
        for part in parts {
            for (k, mut ring) in part.into_iter().enumerate() {
                let idx = rings.len();
                check_ring(&ring, idx)?;
                let a = signed_area(&ring);
                if a == 0.0 {
                    return Err(GeometryError::DegenerateRing {
                        ring: idx,
                        reason: "zero area".into(),
                    });
                }
                let want_ccw = k == 0;
                if (a > 0.0) != want_ccw {
                    ring.reverse();
                }
                rings.push(ring);
            }
        }
        Self::from_oriented(rings, label, source_id.into())
    }

    /// Rings whose orientation already encodes outer boundaries and holes.
    fn from_oriented(
        rings: Vec<Vec<Point>>,
        label: Option<Label>,
        source_id: String,
    ) -> Result<Self, GeometryError> {
        if rings.is_empty() {
            return Err(GeometryError::Empty);
        }
        for (i, r) in rings.iter().enumerate() {
            check_ring(r, i)?;
        }
        if signed_area(&rings[0]) <= 0.0 {
            return Err(GeometryError::DegenerateRing {
                ring: 0,
                reason: "exterior ring has no positive area".into(),
            });
        }
        Ok(Self {
            rings,
            label,
            source_id,
        })
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        label: Option<Label>,
        source_id: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        Self::new(
            vec![vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]],
            label,
            source_id,
        )
    }

    pub fn rings(&self) -> &[Vec<Point>] {
        &self.rings
    }

    /// Rings grouped into outer boundaries with their holes.
    pub fn parts(&self) -> Vec<Vec<&[Point]>> {
        let mut parts: Vec<Vec<&[Point]>> = Vec::new();
        for ring in &self.rings {
            if signed_area(ring) > 0.0 || parts.is_empty() {
                parts.push(vec![ring.as_slice()]);
            } else {
                parts.last_mut().unwrap().push(ring.as_slice());
            }
        }
        parts
    }

    pub fn bbox(&self) -> Extent {
        let mut e = Extent {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in self.rings.iter().flatten() {
            e.min_x = e.min_x.min(p[0]);
            e.min_y = e.min_y.min(p[1]);
            e.max_x = e.max_x.max(p[0]);
            e.max_y = e.max_y.max(p[1]);
        }
        e
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            rings: self
                .rings
                .iter()
                .map(|r| r.iter().map(|p| [p[0] + dx, p[1] + dy]).collect())
                .collect(),
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        point_in_rings(&self.rings, x, y)
    }
}

fn check_ring(ring: &[Point], idx: usize) -> Result<(), GeometryError> {
    let fail = |reason: &str| GeometryError::DegenerateRing {
        ring: idx,
        reason: reason.into(),
    };
    if ring.len() < 4 {
        return Err(fail("fewer than 4 points"));
    }
    if ring.first() != ring.last() {
        return Err(fail("ring is not closed"));
    }
    if ring.iter().flatten().any(|v| !v.is_finite()) {
        return Err(fail("non-finite coordinate"));
    }
    Ok(())
}

/// Shoelace area, positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let mut acc = 0.0;
    for w in ring.windows(2) {
        acc += w[0][0] * w[1][1] - w[1][0] * w[0][1];
    }
    0.5 * acc
}

/// Area of the exterior minus holes, in square meters.
pub fn polygon_area(polygon: &LabeledPolygon) -> f64 {
    polygon.rings.iter().map(|r| signed_area(r)).sum::<f64>().max(0.0)
}

/// x where edge `a→b` crosses the horizontal line at `y`, if it straddles it
/// under the half-open rule `(a.y > y) != (b.y > y)`.
#[inline]
fn crossing_x(a: Point, b: Point, y: f64) -> Option<f64> {
    if (a[1] > y) != (b[1] > y) {
        Some(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
    } else {
        None
    }
}

/// Even-odd ray casting towards +x. Points on lower or left edges are inside,
/// points on upper or right edges are outside.
pub fn point_in_rings(rings: &[Vec<Point>], x: f64, y: f64) -> bool {
    let mut inside = false;
    for ring in rings {
        for w in ring.windows(2) {
            if let Some(cx) = crossing_x(w[0], w[1], y) {
                if x < cx {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Pixel set of a polygon on a raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionOfInterest {
    pub polygon: LabeledPolygon,
    /// In-polygon pixels, sorted in row-major order.
    pub mask: Vec<(usize, usize)>,
    pub area_m2: f64,
}

impl RegionOfInterest {
    /// Region with an explicit pixel mask; the mask is sorted and deduplicated.
    pub fn from_mask(
        polygon: LabeledPolygon,
        mut mask: Vec<(usize, usize)>,
        area_m2: f64,
    ) -> Result<Self, GeometryError> {
        mask.sort_unstable();
        mask.dedup();
        if mask.is_empty() {
            return Err(GeometryError::NoPixelsInside(polygon.source_id.clone()));
        }
        Ok(Self {
            polygon,
            mask,
            area_m2,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.polygon.source_id
    }

    pub fn label(&self) -> Option<Label> {
        self.polygon.label
    }
}

/// Pixels whose centers fall inside the polygon, row-major. Pixels outside
/// the raster are never reported.
pub fn polygon_mask(polygon: &LabeledPolygon, raster: &RasterGrid) -> Vec<(usize, usize)> {
    let bb = polygon.bbox();
    let cs = raster.cell_size();
    let (ox, oy) = (raster.origin_x(), raster.origin_y());
    let n_rows = raster.n_rows();
    let n_cols = raster.n_cols();
    let center_x = |c: usize| ox + (c as f64 + 0.5) * cs;

    // rows whose center y lies in [bb.min_y, bb.max_y], widened by one
    let row_of = |y: f64| n_rows as f64 - (y - oy) / cs - 0.5;
    let r_lo = (row_of(bb.max_y).floor() - 1.0).max(0.0) as usize;
    let r_hi = ((row_of(bb.min_y).ceil() + 1.0).max(0.0) as usize).min(n_rows);

    let mut mask = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for row in r_lo..r_hi {
        let (_, y) = raster.pixel_center(row, 0);
        xs.clear();
        for ring in polygon.rings() {
            for w in ring.windows(2) {
                if let Some(cx) = crossing_x(w[0], w[1], y) {
                    xs.push(cx);
                }
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        // inside iff an odd number of crossings lie strictly right of the center,
        // i.e. the center is in some [xs[2k], xs[2k+1])
        let n = xs.len();
        for pair in xs.chunks(2) {
            if pair.len() < 2 {
                break;
            }
            let (a, b) = (pair[0], pair[1]);
            let first = first_col_at_or_after(a, ox, cs, n_cols, &center_x);
            let mut col = first;
            while col < n_cols && center_x(col) < b {
                mask.push((row, col));
                col += 1;
            }
        }
        debug_assert!(n.is_multiple_of(2));
    }
    mask
}

fn first_col_at_or_after(a: f64, ox: f64, cs: f64, n_cols: usize, center_x: &dyn Fn(usize) -> f64) -> usize {
    let approx = ((a - ox) / cs - 0.5).ceil();
    let mut c = if approx <= 0.0 {
        0
    } else {
        (approx as usize).min(n_cols)
    };
    while c > 0 && center_x(c - 1) >= a {
        c -= 1;
    }
    while c < n_cols && center_x(c) < a {
        c += 1;
    }
    c
}

/// Pixel mask and area of `polygon` on `raster`, rejecting regions without
/// pixels or with missing CHM values.
pub fn rasterize(
    polygon: &LabeledPolygon,
    raster: &RasterGrid,
) -> Result<RegionOfInterest, GeometryError> {
    if !polygon.bbox().intersects(&raster.extent()) {
        return Err(GeometryError::OutsideRaster(polygon.source_id.clone()));
    }
    let mask = polygon_mask(polygon, raster);
    if mask.is_empty() {
        return Err(GeometryError::NoPixelsInside(polygon.source_id.clone()));
    }
    let nodata = mask.iter().filter(|&&(r, c)| raster.is_nodata(r, c)).count();
    if nodata > 0 {
        return Err(GeometryError::ChmIncomplete {
            id: polygon.source_id.clone(),
            nodata,
        });
    }
    Ok(RegionOfInterest {
        area_m2: polygon_area(polygon),
        polygon: polygon.clone(),
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Validation, SplitTag::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions(pub [f64; 3]);

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions([0.64, 0.16, 0.20])
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let f = self.0;
        let ok = f.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (f.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::Fractions(f))
        }
    }
}

/// Assignment of square grid cells to split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub cell_size_m: f64,
    pub seed: u64,
    /// Lower-left corner of cell `(0, 0)`.
    pub anchor: Point,
    pub mapping: BTreeMap<(i64, i64), SplitTag>,
}

impl SplitAssignment {
    pub fn cell_rect(&self, cell: (i64, i64)) -> Extent {
        let x0 = self.anchor[0] + cell.0 as f64 * self.cell_size_m;
        let y0 = self.anchor[1] + cell.1 as f64 * self.cell_size_m;
        Extent {
            min_x: x0,
            min_y: y0,
            max_x: x0 + self.cell_size_m,
            max_y: y0 + self.cell_size_m,
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.anchor[0]) / self.cell_size_m).floor() as i64,
            ((y - self.anchor[1]) / self.cell_size_m).floor() as i64,
        )
    }

    pub fn tag_at(&self, x: f64, y: f64) -> Option<SplitTag> {
        self.mapping.get(&self.cell_of(x, y)).copied()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.mapping.values().filter(|t| **t == tag).count()
    }
}

fn cells_covering(bb: &Extent, anchor: Point, cs: f64) -> impl Iterator<Item = (i64, i64)> {
    let i0 = ((bb.min_x - anchor[0]) / cs).floor() as i64;
    let i1 = ((bb.max_x - anchor[0]) / cs).floor() as i64;
    let j0 = ((bb.min_y - anchor[1]) / cs).floor() as i64;
    let j1 = ((bb.max_y - anchor[1]) / cs).floor() as i64;
    (i0..=i1).flat_map(move |i| (j0..=j1).map(move |j| (i, j)))
}

/// Lays a square grid anchored at the extent's lower-left corner (rounded down
/// to a multiple of `cell_size_m`), keeps cells sharing positive area with at
/// least one polygon, and assigns them by a seeded shuffle.
pub fn build_split(
    polygons: &[LabeledPolygon],
    extent: &Extent,
    cell_size_m: f64,
    seed: u64,
    fractions: SplitFractions,
) -> Result<SplitAssignment, GeometryError> {
    fractions.validate()?;
    if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
        return Err(GeometryError::CellSize(cell_size_m));
    }
    let anchor = [
        (extent.min_x / cell_size_m).floor() * cell_size_m,
        (extent.min_y / cell_size_m).floor() * cell_size_m,
    ];
    let mut scratch = SplitAssignment {
        cell_size_m,
        seed,
        anchor,
        mapping: BTreeMap::new(),
    };
    let mut occupied = std::collections::BTreeSet::new();
    for poly in polygons {
        for cell in cells_covering(&poly.bbox(), anchor, cell_size_m) {
            if occupied.contains(&cell) {
                continue;
            }
            let rect = scratch.cell_rect(cell);
            if clip_rings_to_rect(poly.rings(), &rect).is_some() {
                occupied.insert(cell);
            }
        }
    }
    if occupied.is_empty() {
        return Err(GeometryError::EmptySplit);
    }
    let mut cells: Vec<(i64, i64)> = occupied.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);

    let n = cells.len() as f64;
    let f = fractions.0;
    let b1 = ((n * f[0]).round() as usize).min(cells.len());
    let b2 = ((n * (f[0] + f[1])).round() as usize).clamp(b1, cells.len());
    for (k, cell) in cells.into_iter().enumerate() {
        let tag = if k < b1 {
            SplitTag::Train
        } else if k < b2 {
            SplitTag::Validation
        } else {
            SplitTag::Test
        };
        scratch.mapping.insert(cell, tag);
    }
    Ok(scratch)
}

/// Sutherland–Hodgman clip of one closed ring against an axis-aligned
/// rectangle. Returns `None` when nothing of positive area remains.
pub fn clip_ring_to_rect(ring: &[Point], rect: &Extent) -> Option<Vec<Point>> {
    #[derive(Clone, Copy)]
    enum Side {
        MinX,
        MaxX,
        MinY,
        MaxY,
    }
    fn inside(p: Point, side: Side, r: &Extent) -> bool {
        match side {
            Side::MinX => p[0] >= r.min_x,
            Side::MaxX => p[0] <= r.max_x,
            Side::MinY => p[1] >= r.min_y,
            Side::MaxY => p[1] <= r.max_y,
        }
    }
    fn intersect(a: Point, b: Point, side: Side, r: &Extent) -> Point {
        match side {
            Side::MinX | Side::MaxX => {
                let x = if matches!(side, Side::MinX) { r.min_x } else { r.max_x };
                let t = (x - a[0]) / (b[0] - a[0]);
                [x, a[1] + t * (b[1] - a[1])]
            }
            Side::MinY | Side::MaxY => {
                let y = if matches!(side, Side::MinY) { r.min_y } else { r.max_y };
                let t = (y - a[1]) / (b[1] - a[1]);
                [a[0] + t * (b[0] - a[0]), y]
            }
        }
    }

    let mut pts: Vec<Point> = ring[..ring.len() - 1].to_vec();
    for side in [Side::MinX, Side::MaxX, Side::MinY, Side::MaxY] {
        if pts.is_empty() {
            return None;
        }
        let mut out = Vec::with_capacity(pts.len() + 4);
        for i in 0..pts.len() {
            let cur = pts[i];
            let prev = pts[(i + pts.len() - 1) % pts.len()];
            let (ci, pi) = (inside(cur, side, rect), inside(prev, side, rect));
            if ci {
                if !pi {
                    out.push(intersect(prev, cur, side, rect));
                }
                out.push(cur);
            } else if pi {
                out.push(intersect(prev, cur, side, rect));
            }
        }
        pts = out;
    }
    pts.dedup();
    while pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 {
        return None;
    }
    pts.push(pts[0]);
    if signed_area(&pts) == 0.0 {
        return None;
    }
    Some(pts)
}

/// Clips every ring, keeping orientation; `None` if the covered area is zero.
fn clip_rings_to_rect(rings: &[Vec<Point>], rect: &Extent) -> Option<Vec<Vec<Point>>> {
    let clipped: Vec<Vec<Point>> = rings
        .iter()
        .filter_map(|r| clip_ring_to_rect(r, rect))
        .collect();
    let area: f64 = clipped.iter().map(|r| signed_area(r)).sum();
    (area > 0.0).then_some(clipped)
}

/// Parts of `polygon` falling into each split tag, before any area filter.
pub fn split_pieces(
    polygon: &LabeledPolygon,
    split: &SplitAssignment,
) -> Vec<(LabeledPolygon, SplitTag)> {
    let mut per_tag: BTreeMap<SplitTag, Vec<Vec<Point>>> = BTreeMap::new();
    for cell in cells_covering(&polygon.bbox(), split.anchor, split.cell_size_m) {
        let Some(&tag) = split.mapping.get(&cell) else {
            continue;
        };
        if let Some(rings) = clip_rings_to_rect(polygon.rings(), &split.cell_rect(cell)) {
            per_tag.entry(tag).or_default().extend(rings);
        }
    }
    per_tag
        .into_iter()
        .filter_map(|(tag, mut rings)| {
            // an outer ring must come first
            if let Some(pos) = rings.iter().position(|r| signed_area(r) > 0.0) {
                rings[..=pos].rotate_right(1);
            }
            LabeledPolygon::from_oriented(rings, polygon.label, polygon.source_id.clone())
                .ok()
                .map(|p| (p, tag))
        })
        .collect()
}

/// Intersects the polygon with each split tag's cells and drops pieces
/// smaller than one hectare. Labels are inherited.
pub fn clip_to_split(
    polygon: &LabeledPolygon,
    split: &SplitAssignment,
) -> Vec<(LabeledPolygon, SplitTag)> {
    split_pieces(polygon, split)
        .into_iter()
        .filter(|(p, _)| polygon_area(p) >= MIN_REGION_AREA_M2)
        .collect()
}

pub fn extent_of(polygons: &[LabeledPolygon]) -> Option<Extent> {
    polygons.iter().map(|p| p.bbox()).reduce(|a, b| Extent {
        min_x: a.min_x.min(b.min_x),
        min_y: a.min_y.min(b.min_y),
        max_x: a.max_x.max(b.max_x),
        max_y: a.max_y.max(b.max_y),
    })
}

// ---------------------------------------------------------------------------
// GeoJSON-style feature collections
// ---------------------------------------------------------------------------

fn gj_err(msg: impl Into<String>) -> GeometryError {
    GeometryError::GeoJson(msg.into())
}

fn parse_ring(v: &Value) -> Result<Vec<Point>, GeometryError> {
    let arr = v.as_array().ok_or_else(|| gj_err("ring is not an array"))?;
    arr.iter()
        .map(|p| {
            let xy = p.as_array().filter(|a| a.len() >= 2).ok_or_else(|| gj_err("bad position"))?;
            let x = xy[0].as_f64().ok_or_else(|| gj_err("non-numeric coordinate"))?;
            let y = xy[1].as_f64().ok_or_else(|| gj_err("non-numeric coordinate"))?;
            Ok([x, y])
        })
        .collect()
}

fn parse_rings(v: &Value) -> Result<Vec<Vec<Point>>, GeometryError> {
    v.as_array()
        .ok_or_else(|| gj_err("polygon coordinates are not an array"))?
        .iter()
        .map(parse_ring)
        .collect()
}

/// Reads a FeatureCollection of `Polygon` / `MultiPolygon` features with
/// optional `label` ("high" / "low") and `source_id` properties.
pub fn parse_feature_collection(text: &str) -> Result<Vec<LabeledPolygon>, GeometryError> {
    let root: Value = serde_json::from_str(text).map_err(|e| gj_err(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(gj_err("top-level object is not a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| gj_err("missing features array"))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let source_id = match props.get("source_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("feature-{i}"),
        };
        let label = match props.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.is_empty() => None,
            Some(Value::String(s)) => Some(
                Label::parse(s).ok_or_else(|| gj_err(format!("feature {i}: unknown label `{s}`")))?,
            ),
            Some(Value::Number(n)) => Some(
                n.as_u64()
                    .and_then(|v| Label::from_u8(v as u8).filter(|_| v <= 1))
                    .ok_or_else(|| gj_err(format!("feature {i}: unknown label {n}")))?,
            ),
            Some(other) => return Err(gj_err(format!("feature {i}: bad label {other}"))),
        };
        let geom = f
            .get("geometry")
            .ok_or_else(|| gj_err(format!("feature {i}: missing geometry")))?;
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| gj_err(format!("feature {i}: missing coordinates")))?;
        let parts = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_rings(coords)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| gj_err("multipolygon coordinates are not an array"))?
                .iter()
                .map(parse_rings)
                .collect::<Result<_, _>>()?,
            other => return Err(gj_err(format!("feature {i}: unsupported geometry {other:?}"))),
        };
        let poly = LabeledPolygon::from_parts(parts, label, source_id).map_err(|e| {
            gj_err(format!("feature {i}: {e}"))
        })?;
        out.push(poly);
    }
    Ok(out)
}

/// Writes polygons as a FeatureCollection; `extra` adds one property to every feature.
pub fn to_feature_collection(polygons: &[LabeledPolygon], extra: Option<(&str, &str)>) -> String {
    let features: Vec<Value> = polygons
        .iter()
        .map(|p| {
            let parts = p.parts();
            let to_coords = |rings: &Vec<&[Point]>| -> Value {
                Value::Array(
                    rings
                        .iter()
                        .map(|r| Value::Array(r.iter().map(|pt| json!([pt[0], pt[1]])).collect()))
                        .collect(),
                )
            };
            let geometry = if parts.len() == 1 {
                json!({"type": "Polygon", "coordinates": to_coords(&parts[0])})
            } else {
                json!({"type": "MultiPolygon", "coordinates": parts.iter().map(to_coords).collect::<Vec<_>>()})
            };
            let mut props = serde_json::Map::new();
            props.insert("source_id".into(), Value::String(p.source_id.clone()));
            props.insert(
                "label".into(),
                p.label.map_or(Value::Null, |l| Value::String(l.name().into())),
            );
            if let Some((k, v)) = extra {
                props.insert(k.into(), Value::String(v.into()));
            }
            json!({"type": "Feature", "properties": props, "geometry": geometry})
        })
        .collect();
    let root = json!({"type": "FeatureCollection", "features": features});
    let mut s = serde_json::to_string_pretty(&root).expect("serializable");
    s.push('\n');
    s
}
