//! Synthetic canopy height scenes with planted (regular, smooth) and
//! natural (Poisson, rough) stands.
//!
//! Stands occupy disjoint square slots of a grid covering the scene. Each
//! crown is a paraboloid `peak − slope·d²` inside its radius; the CHM is the
//! per-pixel maximum over crowns, quantized to decimeters. Natural stands
//! additionally receive bilinear value noise on canopy pixels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Label, LabeledPolygon, Point};
use crate::raster::{RasterGrid, DEFAULT_NODATA};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic scene configuration: {0}")]
    Config(String),
}

/// Inclusive `[low, high]` range sampled uniformly once per stand.
pub type Range = [f64; 2];

fn sample(rng: &mut impl Rng, r: Range) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantationParams {
    pub row_spacing_m: Range,
    pub col_spacing_m: Range,
    /// Standard deviation of tree positions around the grid nodes.
    pub position_jitter_m: f64,
    pub height_mean_dm: Range,
    /// Standard deviation of tree heights within a stand.
    pub height_jitter_dm: Range,
    pub crown_radius_m: Range,
}

impl Default for PlantationParams {
    fn default() -> Self {
        Self {
            row_spacing_m: [3.6, 4.4],
            col_spacing_m: [3.6, 4.4],
            position_jitter_m: 0.15,
            height_mean_dm: [130.0, 175.0],
            height_jitter_dm: [6.0, 12.0],
            crown_radius_m: [2.4, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaturalParams {
    pub treetop_intensity_per_ha: Range,
    pub height_mean_dm: Range,
    /// Standard deviation of tree heights within a stand.
    pub height_spread_dm: Range,
    /// Per-tree crown radius range.
    pub crown_radius_m: Range,
    /// Peak amplitude of the canopy value noise.
    pub roughness_dm: Range,
    /// Lattice spacing of the value noise.
    pub roughness_scale_m: f64,
}

impl Default for NaturalParams {
    fn default() -> Self {
        Self {
            treetop_intensity_per_ha: [300.0, 550.0],
            height_mean_dm: [185.0, 240.0],
            height_spread_dm: [8.0, 16.0],
            crown_radius_m: [2.5, 4.5],
            roughness_dm: [2.0, 8.0],
            roughness_scale_m: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Side of the square scene.
    pub extent_m: f64,
    /// Lower-left corner of the scene.
    pub origin: Point,
    pub cell_size_m: f64,
    /// Side of the square slot holding each stand.
    pub slot_m: f64,
    /// Stand polygons per class; planted stands are labeled low naturalness.
    pub polygons_per_class: usize,
    /// Polygon side lengths before corner jitter.
    pub stand_side_m: Range,
    /// Maximum inward displacement of each polygon corner.
    pub corner_jitter_m: f64,
    /// Crown depth as a fraction of the peak height, drawn per stand.
    pub crown_depth: Range,
    pub max_height_dm: i32,
    /// Probability of flipping the label of the smallest stands; falls
    /// linearly to zero at the middle of the nominal size range.
    pub small_stand_label_noise: f64,
    pub plantation: PlantationParams,
    pub natural: NaturalParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            extent_m: 5120.0,
            origin: [499_200.0, 6_400_000.0],
            cell_size_m: 1.0,
            slot_m: 160.0,
            polygons_per_class: 240,
            stand_side_m: [115.0, 150.0],
            corner_jitter_m: 5.0,
            crown_depth: [0.35, 0.8],
            max_height_dm: 400,
            small_stand_label_noise: 0.0,
            plantation: PlantationParams::default(),
            natural: NaturalParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::Config(m.to_string()));
        let range_ok = |r: Range| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let p = &self.plantation;
        let n = &self.natural;
        let ranges = [
            p.row_spacing_m,
            p.col_spacing_m,
            p.height_mean_dm,
            p.height_jitter_dm,
            p.crown_radius_m,
            n.treetop_intensity_per_ha,
            n.height_mean_dm,
            n.height_spread_dm,
            n.crown_radius_m,
            self.stand_side_m,
            self.crown_depth,
            n.roughness_dm,
        ];
        if !ranges.iter().all(|r| range_ok(*r)) {
            return err("ranges must be finite with low <= high");
        }
        if !(self.cell_size_m > 0.0 && self.extent_m > 0.0 && self.slot_m > 0.0) {
            return err("extent, slot and cell size must be positive");
        }
        if p.row_spacing_m[0] <= 0.0 || p.col_spacing_m[0] <= 0.0 {
            return err("plantation spacings must be positive");
        }
        if n.treetop_intensity_per_ha[0] <= 0.0 {
            return err("natural treetop intensity must be positive");
        }
        if p.crown_radius_m[0] <= 0.0 || n.crown_radius_m[0] <= 0.0 || n.roughness_scale_m <= 0.0 {
            return err("crown radii and noise scale must be positive");
        }
        if !(self.crown_depth[0] >= 0.0 && self.crown_depth[1] < 1.0) {
            return err("crown_depth must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.small_stand_label_noise) {
            return err("small_stand_label_noise must lie in [0, 1]");
        }
        if p.height_mean_dm[1].max(n.height_mean_dm[1]) > self.max_height_dm as f64 {
            return err("mean heights exceed max_height_dm");
        }
        if self.stand_side_m[0] <= 2.0 * self.corner_jitter_m {
            return err("stand sides must exceed twice the corner jitter");
        }
        if self.stand_side_m[1] + 2.0 * self.corner_jitter_m > self.slot_m {
            return err("stands do not fit into their slots");
        }
        let slots = self.slots_per_side().pow(2);
        if slots == 0 {
            return err("scene cannot hold a single stand");
        }
        if 2 * self.polygons_per_class > slots {
            return Err(SynthError::Config(format!(
                "{} stands requested but only {slots} slots fit",
                2 * self.polygons_per_class
            )));
        }
        Ok(())
    }

    fn slots_per_side(&self) -> usize {
        (self.extent_m / self.slot_m).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandKind {
    Plantation,
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTree {
    pub x: f64,
    pub y: f64,
    pub peak_dm: f64,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandTruth {
    pub source_id: String,
    pub kind: StandKind,
    /// Label written to the polygon, after any noise flip.
    pub label: Label,
    pub label_flipped: bool,
    pub trees: Vec<PlantedTree>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub raster: RasterGrid,
    pub polygons: Vec<LabeledPolygon>,
    pub stands: Vec<StandTruth>,
}

/// Float canopy surface before quantization.
struct Canvas {
    n_rows: usize,
    n_cols: usize,
    origin: Point,
    cs: f64,
    top: Vec<f64>,
}

impl Canvas {
    fn new(cfg: &SynthConfig) -> Self {
        let n = (cfg.extent_m / cfg.cell_size_m).round() as usize;
        Self {
            n_rows: n,
            n_cols: n,
            origin: cfg.origin,
            cs: cfg.cell_size_m,
            top: vec![0.0; n * n],
        }
    }

    /// Inclusive pixel index range whose centers may fall in `[lo, hi]` along x.
    fn cols_for(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let a = ((lo - self.origin[0]) / self.cs - 0.5).ceil().max(0.0);
        let b = ((hi - self.origin[0]) / self.cs - 0.5).floor().min(self.n_cols as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    }

    fn rows_for(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let top = self.origin[1] + self.n_rows as f64 * self.cs;
        let a = ((top - hi) / self.cs - 0.5).ceil().max(0.0);
        let b = ((top - lo) / self.cs - 0.5).floor().min(self.n_rows as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    }

    fn center(&self, row: usize, col: usize) -> Point {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cs,
            self.origin[1] + (self.n_rows as f64 - row as f64 - 0.5) * self.cs,
        ]
    }

    fn draw_crown(&mut self, t: &PlantedTree, depth: f64, clip: &Rect) {
        let r = t.radius_m;
        let Some((c0, c1)) = self.cols_for((t.x - r).max(clip.x0), (t.x + r).min(clip.x1)) else {
            return;
        };
        let Some((r0, r1)) = self.rows_for((t.y - r).max(clip.y0), (t.y + r).min(clip.y1)) else {
            return;
        };
        let slope = depth * t.peak_dm / (r * r);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let [x, y] = self.center(row, col);
                let d2 = (x - t.x).powi(2) + (y - t.y).powi(2);
                if d2 <= r * r {
                    let h = (t.peak_dm - slope * d2).max(0.0);
                    let cell = &mut self.top[row * self.n_cols + col];
                    if h > *cell {
                        *cell = h;
                    }
                }
            }
        }
    }

    fn add_noise(&mut self, rng: &mut impl Rng, clip: &Rect, amplitude: f64, scale: f64) {
        if amplitude <= 0.0 {
            return;
        }
        let nx = ((clip.x1 - clip.x0) / scale).ceil() as usize + 2;
        let ny = ((clip.y1 - clip.y0) / scale).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(-amplitude..=amplitude)).collect();
        let (Some((c0, c1)), Some((r0, r1))) = (self.cols_for(clip.x0, clip.x1), self.rows_for(clip.y0, clip.y1)) else {
            return;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cell = row * self.n_cols + col;
                if self.top[cell] <= 0.0 {
                    continue;
                }
                let [x, y] = self.center(row, col);
                let u = (x - clip.x0) / scale;
                let v = (y - clip.y0) / scale;
                let (i, j) = (u.floor() as usize, v.floor() as usize);
                let (fu, fv) = (u - i as f64, v - j as f64);
                let at = |a: usize, b: usize| lattice[b * nx + a];
                let n = at(i, j) * (1.0 - fu) * (1.0 - fv)
                    + at(i + 1, j) * fu * (1.0 - fv)
                    + at(i, j + 1) * (1.0 - fu) * fv
                    + at(i + 1, j + 1) * fu * fv;
                self.top[cell] = (self.top[cell] + n).max(0.0);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn planted_trees(rng: &mut impl Rng, p: &PlantationParams, area: &Rect) -> Vec<PlantedTree> {
    let sr = sample(rng, p.row_spacing_m);
    let sc = sample(rng, p.col_spacing_m);
    let mean = sample(rng, p.height_mean_dm);
    let sd = sample(rng, p.height_jitter_dm);
    let radius = sample(rng, p.crown_radius_m);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let (cx, cy) = (0.5 * (area.x0 + area.x1), 0.5 * (area.y0 + area.y1));
    let half = 0.5 * ((area.x1 - area.x0).hypot(area.y1 - area.y0));
    let (ni, nj) = ((half / sc).ceil() as i64, (half / sr).ceil() as i64);
    let heights = Normal::new(mean, sd.max(0.0)).expect("finite normal");
    let jitter = Normal::new(0.0, p.position_jitter_m.max(0.0)).expect("finite normal");
    let (ox, oy): (f64, f64) = (rng.random_range(0.0..sc), rng.random_range(0.0..sr));
    let mut trees = Vec::new();
    for j in -nj..=nj {
        for i in -ni..=ni {
            let (u, v) = (i as f64 * sc + ox, j as f64 * sr + oy);
            let x = cx + u * c - v * s + jitter.sample(rng);
            let y = cy + u * s + v * c + jitter.sample(rng);
            if x < area.x0 || x > area.x1 || y < area.y0 || y > area.y1 {
                continue;
            }
            trees.push(PlantedTree {
                x,
                y,
                peak_dm: heights.sample(rng),
                radius_m: radius,
            });
        }
    }
    trees
}

fn natural_trees(rng: &mut impl Rng, n: &NaturalParams, area: &Rect) -> Vec<PlantedTree> {
    let intensity = sample(rng, n.treetop_intensity_per_ha);
    let mean = sample(rng, n.height_mean_dm);
    let sd = sample(rng, n.height_spread_dm);
    let ha = (area.x1 - area.x0) * (area.y1 - area.y0) / 10_000.0;
    let count = Poisson::new(intensity * ha).expect("positive intensity").sample(rng) as usize;
    let heights = Normal::new(mean, sd.max(0.0)).expect("finite normal");
    (0..count)
        .map(|_| PlantedTree {
            x: rng.random_range(area.x0..area.x1),
            y: rng.random_range(area.y0..area.y1),
            peak_dm: heights.sample(rng),
            radius_m: sample(rng, n.crown_radius_m),
        })
        .collect()
}

/// Generates a full scene. Deterministic for a given configuration.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_side = cfg.slots_per_side();
    let mut slots: Vec<usize> = (0..per_side * per_side).collect();
    slots.shuffle(&mut rng);
    let mut chosen: Vec<(usize, StandKind)> = slots[..2 * cfg.polygons_per_class]
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, if k % 2 == 0 { StandKind::Natural } else { StandKind::Plantation }))
        .collect();
    chosen.sort_by_key(|&(s, _)| s);

    let mut canvas = Canvas::new(cfg);
    let mut polygons = Vec::with_capacity(chosen.len());
    let mut stands = Vec::with_capacity(chosen.len());
    let side = cfg.stand_side_m;
    for (k, &(slot, kind)) in chosen.iter().enumerate() {
        let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(slot as u64 + 1)));
        let sx = cfg.origin[0] + (slot % per_side) as f64 * cfg.slot_m;
        let sy = cfg.origin[1] + (slot / per_side) as f64 * cfg.slot_m;
        let slot_rect = Rect {
            x0: sx,
            y0: sy,
            x1: sx + cfg.slot_m,
            y1: sy + cfg.slot_m,
        };
        let (w, h) = (sample(&mut srng, side), sample(&mut srng, side));
        let x0 = sx + srng.random_range(cfg.corner_jitter_m..=(cfg.slot_m - w - cfg.corner_jitter_m).max(cfg.corner_jitter_m));
        let y0 = sy + srng.random_range(cfg.corner_jitter_m..=(cfg.slot_m - h - cfg.corner_jitter_m).max(cfg.corner_jitter_m));
        let j = cfg.corner_jitter_m;
        let mut jit = || if j > 0.0 { srng.random_range(0.0..j) } else { 0.0 };
        let mut ring = vec![
            [x0 + jit(), y0 + jit()],
            [x0 + w - jit(), y0 + jit()],
            [x0 + w - jit(), y0 + h - jit()],
            [x0 + jit(), y0 + h - jit()],
        ];
        ring.push(ring[0]);

        let trees_area = Rect {
            x0: (x0 - 5.0).max(sx),
            y0: (y0 - 5.0).max(sy),
            x1: (x0 + w + 5.0).min(slot_rect.x1),
            y1: (y0 + h + 5.0).min(slot_rect.y1),
        };
        let mut trees = match kind {
            StandKind::Plantation => planted_trees(&mut srng, &cfg.plantation, &trees_area),
            StandKind::Natural => natural_trees(&mut srng, &cfg.natural, &trees_area),
        };
        for t in &mut trees {
            t.peak_dm = t.peak_dm.clamp(0.0, cfg.max_height_dm as f64);
        }
        let depth = sample(&mut srng, cfg.crown_depth);
        for t in &trees {
            canvas.draw_crown(t, depth, &slot_rect);
        }
        if kind == StandKind::Natural {
            let amp = sample(&mut srng, cfg.natural.roughness_dm);
            canvas.add_noise(&mut srng, &trees_area, amp, cfg.natural.roughness_scale_m);
        }

        let true_label = match kind {
            StandKind::Plantation => Label::Low,
            StandKind::Natural => Label::High,
        };
        let size = ((w * h).sqrt() - side[0]) / (side[1] - side[0]).max(f64::EPSILON);
        let p_flip = cfg.small_stand_label_noise * (1.0 - 2.0 * size).clamp(0.0, 1.0);
        let flipped = p_flip > 0.0 && srng.random_bool(p_flip);
        let label = if flipped {
            Label::from_u8(1 - true_label.as_u8()).expect("binary label")
        } else {
            true_label
        };
        let source_id = format!("stand-{k:04}");
        let polygon = LabeledPolygon::new(vec![ring], Some(label), source_id.clone())
            .map_err(|e| SynthError::Config(e.to_string()))?;
        polygons.push(polygon);
        stands.push(StandTruth {
            source_id,
            kind,
            label,
            label_flipped: flipped,
            trees,
        });
    }

    let max = cfg.max_height_dm as f64;
    let values: Vec<i32> = canvas.top.iter().map(|&v| v.clamp(0.0, max).round() as i32).collect();
    let raster = RasterGrid::new(
        canvas.n_rows,
        canvas.n_cols,
        cfg.origin[0],
        cfg.origin[1],
        cfg.cell_size_m,
        values,
        DEFAULT_NODATA,
    )
    .map_err(|e| SynthError::Config(e.to_string()))?;
    Ok(SynthScene {
        raster,
        polygons,
        stands,
    })
}
