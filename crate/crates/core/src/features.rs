//! The eight canopy-structure features of a region of interest.
//!
//! | name | meaning                                   | unit            |
//! |------|-------------------------------------------|-----------------|
//! | td   | fraction of region pixels that are trees  | –               |
//! | thm  | mean tree-pixel height                    | dm              |
//! | thv  | coefficient of variation of tree heights  | –               |
//! | ttd  | treetops per hectare                      | 1/ha            |
//! | tthm | mean treetop height                       | dm              |
//! | tthv | coefficient of variation of treetops      | –               |
//! | elp  | fraction of edge-like LBP pixels          | –               |
//! | ttsd | min occupied-bin fraction of projections  | –               |
//!
//! A pixel is a tree when its height is at least `h_min`. Treetops are
//! pixels equal to the `w_s × w_s` maximum-filtered CHM, at least `h_min`
//! and inside the region; each 8-connected plateau keeps its top-left pixel.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RegionOfInterest;
use crate::raster::RasterGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("no trees in region `{0}`")]
    NoTrees(String),
    #[error("no pixel of region `{0}` has a complete LBP neighborhood")]
    DegenerateRegion(String),
    #[error("invalid feature configuration: {0}")]
    Config(String),
}

/// Names of the features, in column order.
pub const FEATURE_NAMES: [&str; 8] = ["td", "thm", "thv", "ttd", "tthm", "tthv", "elp", "ttsd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Minimum tree height in decimeters.
    pub h_min_dm: i32,
    /// Minimum treetop separation in meters; the max-filter window is
    /// `2·d_min/cell_size + 1` pixels wide.
    pub d_min_m: f64,
    pub lbp_points: usize,
    pub lbp_radius: usize,
    pub ttsd_bin_width_m: f64,
    pub ttsd_directions: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            h_min_dm: 40,
            d_min_m: 2.0,
            lbp_points: 24,
            lbp_radius: 3,
            ttsd_bin_width_m: 1.0,
            ttsd_directions: 100,
        }
    }
}

impl FeatureConfig {
    /// Max-filter window side in pixels.
    pub fn window_size(&self, cell_size: f64) -> Result<usize, FeatureError> {
        let half = self.d_min_m / cell_size;
        let k = half.round();
        if !half.is_finite() || (half - k).abs() > 1e-9 || k < 1.0 {
            return Err(FeatureError::Config(format!(
                "d_min {} m must be a positive multiple of the cell size {cell_size} m",
                self.d_min_m
            )));
        }
        Ok(2 * k as usize + 1)
    }

    pub fn validate(&self, cell_size: f64) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::Config(m));
        if self.h_min_dm <= 0 {
            return bad(format!("h_min must be positive, got {}", self.h_min_dm));
        }
        self.window_size(cell_size)?;
        if self.lbp_points < 4 {
            return bad(format!("need at least 4 LBP points, got {}", self.lbp_points));
        }
        if self.lbp_radius < 1 {
            return bad("LBP radius must be at least 1".into());
        }
        if !(self.ttsd_bin_width_m > 0.0 && self.ttsd_bin_width_m.is_finite()) {
            return bad(format!("bin width must be positive, got {}", self.ttsd_bin_width_m));
        }
        if self.ttsd_directions < 1 {
            return bad("need at least one projection direction".into());
        }
        Ok(())
    }

    /// Inclusive LBP value range counted as edge-like: `p/2 ± (r−1)`.
    pub fn edge_range(&self) -> (usize, usize) {
        let mid = self.lbp_points as f64 / 2.0;
        let spread = self.lbp_radius as f64 - 1.0;
        ((mid - spread).ceil().max(0.0) as usize, (mid + spread).floor() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Treetop {
    pub row: usize,
    pub col: usize,
    pub height_dm: i32,
    /// Pixel center in CRS meters.
    pub x: f64,
    pub y: f64,
}

/// Treetops of one region, in row-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TreetopSet {
    pub treetops: Vec<Treetop>,
}

impl TreetopSet {
    pub fn len(&self) -> usize {
        self.treetops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treetops.is_empty()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.treetops.iter().map(|t| (t.x, t.y)).collect()
    }

    pub fn heights(&self) -> Vec<i32> {
        self.treetops.iter().map(|t| t.height_dm).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub td: f64,
    pub thm: f64,
    pub thv: f64,
    pub ttd: f64,
    pub tthm: f64,
    pub tthv: f64,
    pub elp: f64,
    pub ttsd: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.td, self.thm, self.thv, self.ttd, self.tthm, self.tthv, self.elp, self.ttsd,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            td: a[0],
            thm: a[1],
            thv: a[2],
            ttd: a[3],
            tthm: a[4],
            tthv: a[5],
            elp: a[6],
            ttsd: a[7],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.to_array()[i])
    }
}

pub fn feature_index(name: &str) -> Option<usize> {
    let lower = name.trim().to_ascii_lowercase();
    FEATURE_NAMES.iter().position(|n| *n == lower)
}

/// Tree pixels H′: mask pixels at or above `h_min`.
pub fn tree_pixels(
    roi: &RegionOfInterest,
    raster: &RasterGrid,
    config: &FeatureConfig,
) -> Vec<(usize, usize)> {
    roi.mask
        .iter()
        .copied()
        .filter(|&(r, c)| !raster.is_nodata(r, c) && raster.get(r, c) >= config.h_min_dm)
        .collect()
}

/// `|H′| / |H|`.
pub fn tree_density(roi: &RegionOfInterest, raster: &RasterGrid, config: &FeatureConfig) -> f64 {
    tree_pixels(roi, raster, config).len() as f64 / roi.mask.len() as f64
}

/// Mean and population coefficient of variation of integer heights.
fn mean_and_cv(values: impl Iterator<Item = i32> + Clone) -> Option<(f64, f64)> {
    let (n, sum) = values.clone().fold((0usize, 0i64), |(n, s), v| (n + 1, s + v as i64));
    if n == 0 {
        return None;
    }
    let mean = sum as f64 / n as f64;
    let ss: f64 = values.map(|v| (v as f64 - mean).powi(2)).sum();
    let sd = (ss / n as f64).sqrt();
    Some((mean, sd / mean))
}

/// `(thm, thv)`: mean tree height and its coefficient of variation.
pub fn tree_height_stats(
    roi: &RegionOfInterest,
    raster: &RasterGrid,
    config: &FeatureConfig,
) -> Result<(f64, f64), FeatureError> {
    let trees = tree_pixels(roi, raster, config);
    mean_and_cv(trees.iter().map(|&(r, c)| raster.get(r, c)))
        .ok_or_else(|| FeatureError::NoTrees(roi.source_id().to_string()))
}

/// Sliding-window maximum of `row` with half-width `h`, truncated at the ends.
fn sliding_max(row: &[i64], h: usize, out: &mut Vec<i64>) {
    out.clear();
    let n = row.len();
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0usize;
    for i in 0..n {
        let hi = (i + h).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&b| row[b] <= row[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&f| f + h < i) {
            dq.pop_front();
        }
        out.push(row[*dq.front().unwrap()]);
    }
}

/// Row-major bounding box `(r0, r1, c0, c1)` of the mask, inclusive.
fn mask_bbox(mask: &[(usize, usize)]) -> (usize, usize, usize, usize) {
    let r0 = mask.first().unwrap().0;
    let r1 = mask.last().unwrap().0;
    let c0 = mask.iter().map(|m| m.1).min().unwrap();
    let c1 = mask.iter().map(|m| m.1).max().unwrap();
    (r0, r1, c0, c1)
}

/// Maximum-filtered CHM over the mask bounding box (separable, monotone
/// deque per axis). Pixels beyond the raster and nodata pixels act as −∞.
fn max_filter_bbox(
    raster: &RasterGrid,
    bbox: (usize, usize, usize, usize),
    h: usize,
) -> Vec<i64> {
    let (r0, r1, c0, c1) = bbox;
    let nr = raster.n_rows();
    let nc = raster.n_cols();
    let cell = |r: usize, c: usize| -> i64 {
        if raster.is_nodata(r, c) {
            i64::MIN
        } else {
            raster.get(r, c) as i64
        }
    };
    // horizontal pass over rows r0-h..=r1+h, cols c0-h..=c1+h
    let er0 = r0.saturating_sub(h);
    let er1 = (r1 + h).min(nr - 1);
    let ec0 = c0.saturating_sub(h);
    let ec1 = (c1 + h).min(nc - 1);
    let width = c1 - c0 + 1;
    let mut horiz = vec![i64::MIN; (er1 - er0 + 1) * width];
    let mut line = Vec::with_capacity(ec1 - ec0 + 1);
    let mut maxed = Vec::new();
    for r in er0..=er1 {
        line.clear();
        line.extend((ec0..=ec1).map(|c| cell(r, c)));
        sliding_max(&line, h, &mut maxed);
        let dst = &mut horiz[(r - er0) * width..(r - er0 + 1) * width];
        dst.copy_from_slice(&maxed[c0 - ec0..c0 - ec0 + width]);
    }
    // vertical pass
    let height = r1 - r0 + 1;
    let mut filtered = vec![i64::MIN; height * width];
    let mut col = Vec::with_capacity(er1 - er0 + 1);
    for c in 0..width {
        col.clear();
        col.extend((0..=er1 - er0).map(|r| horiz[r * width + c]));
        sliding_max(&col, h, &mut maxed);
        for r in 0..height {
            filtered[r * width + c] = maxed[r + r0 - er0];
        }
    }
    filtered
}

/// Treetops of the region: local maxima of the `w_s` max filter at or above
/// `h_min`, one per 8-connected plateau (its top-left pixel).
pub fn detect_treetops(
    roi: &RegionOfInterest,
    raster: &RasterGrid,
    config: &FeatureConfig,
) -> Result<TreetopSet, FeatureError> {
    let ws = config.window_size(raster.cell_size())?;
    let bbox = mask_bbox(&roi.mask);
    let (r0, r1, c0, c1) = bbox;
    let width = c1 - c0 + 1;
    let filtered = max_filter_bbox(raster, bbox, ws / 2);

    let mut candidate = vec![false; (r1 - r0 + 1) * width];
    for &(r, c) in &roi.mask {
        let v = raster.get(r, c);
        if v >= config.h_min_dm && v as i64 == filtered[(r - r0) * width + (c - c0)] {
            candidate[(r - r0) * width + (c - c0)] = true;
        }
    }

    let mut visited = vec![false; candidate.len()];
    let mut treetops = Vec::new();
    let mut stack = Vec::new();
    for &(r, c) in &roi.mask {
        let idx = (r - r0) * width + (c - c0);
        if !candidate[idx] || visited[idx] {
            continue;
        }
        // first unvisited pixel in row-major order is the plateau's top-left
        let v = raster.get(r, c);
        let (x, y) = raster.pixel_center(r, c);
        treetops.push(Treetop {
            row: r,
            col: c,
            height_dm: v,
            x,
            y,
        });
        visited[idx] = true;
        stack.push((r, c));
        while let Some((pr, pc)) = stack.pop() {
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (pr as i64 + dr, pc as i64 + dc);
                    if nr < r0 as i64 || nr > r1 as i64 || nc < c0 as i64 || nc > c1 as i64 {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    let nidx = (nr - r0) * width + (nc - c0);
                    if candidate[nidx] && !visited[nidx] && raster.get(nr, nc) == v {
                        visited[nidx] = true;
                        stack.push((nr, nc));
                    }
                }
            }
        }
    }
    if treetops.is_empty() {
        return Err(FeatureError::NoTrees(roi.source_id().to_string()));
    }
    Ok(TreetopSet { treetops })
}

/// `(ttd, tthm, tthv)`: treetops per hectare, their mean height and its
/// coefficient of variation.
pub fn treetop_stats(
    treetops: &TreetopSet,
    roi: &RegionOfInterest,
) -> Result<(f64, f64, f64), FeatureError> {
    let (tthm, tthv) = mean_and_cv(treetops.treetops.iter().map(|t| t.height_dm))
        .ok_or_else(|| FeatureError::NoTrees(roi.source_id().to_string()))?;
    let hectares = roi.area_m2 / 10_000.0;
    Ok((treetops.len() as f64 / hectares, tthm, tthv))
}

/// Sampling offsets `(d_row, d_col)` of `p` points on a radius-`r` circle.
/// Values within 1e-9 of an integer are snapped so exact grid hits do not
/// leak weight into a neighboring pixel.
pub fn lbp_offsets(points: usize, radius: usize) -> Vec<(f64, f64)> {
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    (0..points)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / points as f64;
            let r = radius as f64;
            (snap(-r * theta.sin()), snap(r * theta.cos()))
        })
        .collect()
}

/// Rotation-invariant uniform LBP code: number of set bits for patterns with
/// at most two circular 0/1 transitions, `p + 1` otherwise.
pub fn uniform_lbp_value(bits: &[bool]) -> usize {
    let p = bits.len();
    let transitions = (0..p).filter(|&k| bits[k] != bits[(k + 1) % p]).count();
    if transitions <= 2 {
        bits.iter().filter(|&&b| b).count()
    } else {
        p + 1
    }
}

/// Bilinear interpolation of `value − center` at `(y, x)`; exact zero
/// when all contributing pixels equal the center.
fn bilinear_minus(raster: &RasterGrid, y: f64, x: f64, center: i32) -> f64 {
    let r0 = y.floor();
    let c0 = x.floor();
    let (fr, fc) = (y - r0, x - c0);
    let (r0, c0) = (r0 as usize, c0 as usize);
    let v = |r: usize, c: usize| (raster.get(r, c) - center) as f64;
    let mut acc = (1.0 - fr) * (1.0 - fc) * v(r0, c0);
    if fc > 0.0 {
        acc += (1.0 - fr) * fc * v(r0, c0 + 1);
    }
    if fr > 0.0 {
        acc += fr * (1.0 - fc) * v(r0 + 1, c0);
        if fc > 0.0 {
            acc += fr * fc * v(r0 + 1, c0 + 1);
        }
    }
    acc
}

/// LBP code of pixel `(row, col)`, or `None` when its circular neighborhood
/// leaves the raster or touches nodata.
pub fn lbp_at(
    raster: &RasterGrid,
    row: usize,
    col: usize,
    offsets: &[(f64, f64)],
    radius: usize,
) -> Option<usize> {
    if row < radius
        || col < radius
        || row + radius >= raster.n_rows()
        || col + radius >= raster.n_cols()
    {
        return None;
    }
    for r in row - radius..=row + radius {
        for c in col - radius..=col + radius {
            if raster.is_nodata(r, c) {
                return None;
            }
        }
    }
    let center = raster.get(row, col);
    let mut bits = [false; 64];
    let mut dyn_bits;
    let bits: &mut [bool] = if offsets.len() <= 64 {
        &mut bits[..offsets.len()]
    } else {
        dyn_bits = vec![false; offsets.len()];
        &mut dyn_bits
    };
    for (k, &(dr, dc)) in offsets.iter().enumerate() {
        bits[k] = bilinear_minus(raster, row as f64 + dr, col as f64 + dc, center) >= 0.0;
    }
    Some(uniform_lbp_value(bits))
}

/// Share of evaluable region pixels whose uniform LBP code lies in the edge range.
pub fn edge_like_pixels(
    roi: &RegionOfInterest,
    raster: &RasterGrid,
    config: &FeatureConfig,
) -> Result<f64, FeatureError> {
    let offsets = lbp_offsets(config.lbp_points, config.lbp_radius);
    let (lo, hi) = config.edge_range();
    let mut evaluated = 0usize;
    let mut edges = 0usize;
    for &(r, c) in &roi.mask {
        if let Some(v) = lbp_at(raster, r, c, &offsets, config.lbp_radius) {
            evaluated += 1;
            if (lo..=hi).contains(&v) {
                edges += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(FeatureError::DegenerateRegion(roi.source_id().to_string()));
    }
    Ok(edges as f64 / evaluated as f64)
}

/// Occupied fraction of width-`w` bins for projections onto direction
/// `alpha`. Bins are centered on the projection range and number
/// `floor(range/w) + 1`, where ranges within `1e-9·w` below a multiple of
/// `w` count as that multiple so that lattice positions are rotation-stable.
pub fn occupied_bin_fraction(points: &[(f64, f64)], alpha: f64, w: f64) -> f64 {
    let (ca, sa) = (alpha.cos(), alpha.sin());
    let proj = points.iter().map(|&(x, y)| x * ca + y * sa);
    let (lo, hi) = proj
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let count = ((hi - lo) / w + 1e-9).floor() as usize + 1;
    let start = 0.5 * (lo + hi) - 0.5 * count as f64 * w;
    let mut occupied = vec![false; count];
    for s in proj {
        let b = (((s - start) / w).floor().max(0.0) as usize).min(count - 1);
        occupied[b] = true;
    }
    occupied.iter().filter(|&&o| o).count() as f64 / count as f64
}

/// TTSD over raw positions: minimum occupied-bin fraction over `n`
/// directions `j·180°/n`.
pub fn ttsd_from_points(points: &[(f64, f64)], bin_width: f64, directions: usize) -> f64 {
    assert!(!points.is_empty(), "TTSD needs at least one treetop");
    (0..directions)
        .map(|j| occupied_bin_fraction(points, j as f64 * PI / directions as f64, bin_width))
        .fold(f64::INFINITY, f64::min)
}

pub fn treetop_spatial_distribution(
    treetops: &TreetopSet,
    config: &FeatureConfig,
) -> Result<f64, FeatureError> {
    if treetops.is_empty() {
        return Err(FeatureError::NoTrees(String::new()));
    }
    Ok(ttsd_from_points(
        &treetops.positions(),
        config.ttsd_bin_width_m,
        config.ttsd_directions,
    ))
}

/// All eight features of a region.
pub fn extract(
    roi: &RegionOfInterest,
    raster: &RasterGrid,
    config: &FeatureConfig,
) -> Result<FeatureVector, FeatureError> {
    config.validate(raster.cell_size())?;
    let td = tree_density(roi, raster, config);
    let (thm, thv) = tree_height_stats(roi, raster, config)?;
    let treetops = detect_treetops(roi, raster, config)?;
    let (ttd, tthm, tthv) = treetop_stats(&treetops, roi)?;
    let elp = edge_like_pixels(roi, raster, config)?;
    let ttsd = treetop_spatial_distribution(&treetops, config)?;
    Ok(FeatureVector {
        td,
        thm,
        thv,
        ttd,
        tthm,
        tthv,
        elp,
        ttsd,
    })
}
