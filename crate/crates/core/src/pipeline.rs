//! Region filtering, geographic splitting and per-region feature extraction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::features::{extract, tree_pixels, FeatureConfig};
use crate::geometry::{
    build_split, extent_of, polygon_area, rasterize, GeometryError, LabeledPolygon,
    SplitAssignment, SplitFractions, SplitTag, MIN_REGION_AREA_M2,
};
use crate::models::Dataset;
use crate::raster::RasterGrid;
use crate::table::{to_dataset, FeatureRow, TableError};

/// Regions discarded during splitting, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub input_polygons: usize,
    pub pieces: usize,
    pub too_small: usize,
    pub outside_raster: usize,
    pub chm_incomplete: usize,
    pub no_trees: usize,
    pub kept: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub split: SplitAssignment,
    pub regions: BTreeMap<SplitTag, Vec<LabeledPolygon>>,
    pub report: FilterReport,
}

impl SplitOutcome {
    pub fn get(&self, tag: SplitTag) -> &[LabeledPolygon] {
        self.regions.get(&tag).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Assigns grid cells to splits, clips every polygon to them and keeps
/// pieces of at least one hectare with a complete CHM and one tree pixel.
pub fn split_regions(
    polygons: &[LabeledPolygon],
    raster: &RasterGrid,
    cell_size_m: f64,
    seed: u64,
    fractions: SplitFractions,
    features: &FeatureConfig,
) -> Result<SplitOutcome, GeometryError> {
    let extent = extent_of(polygons).ok_or(GeometryError::EmptySplit)?;
    let split = build_split(polygons, &extent, cell_size_m, seed, fractions)?;
    let mut report = FilterReport {
        input_polygons: polygons.len(),
        ..Default::default()
    };
    let mut regions: BTreeMap<SplitTag, Vec<LabeledPolygon>> = BTreeMap::new();
    for poly in polygons {
        for (piece, tag) in crate::geometry::split_pieces(poly, &split) {
            report.pieces += 1;
            if polygon_area(&piece) < MIN_REGION_AREA_M2 {
                report.too_small += 1;
                continue;
            }
            match rasterize(&piece, raster) {
                Ok(roi) => {
                    if tree_pixels(&roi, raster, features).is_empty() {
                        report.no_trees += 1;
                    } else {
                        regions.entry(tag).or_default().push(piece);
                    }
                }
                Err(GeometryError::ChmIncomplete { .. }) => report.chm_incomplete += 1,
                Err(_) => report.outside_raster += 1,
            }
        }
    }
    for tag in SplitTag::ALL {
        report
            .kept
            .insert(tag.name().to_string(), regions.get(&tag).map_or(0, Vec::len));
    }
    Ok(SplitOutcome {
        split,
        regions,
        report,
    })
}

/// A region that could not be turned into a feature row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractFailure {
    pub index: usize,
    pub source_id: String,
    pub reason: String,
}

/// Features of every polygon in input order, in parallel on the current
/// rayon pool. Failures are collected rather than fatal.
pub fn extract_rows(
    polygons: &[LabeledPolygon],
    raster: &RasterGrid,
    config: &FeatureConfig,
) -> (Vec<FeatureRow>, Vec<ExtractFailure>) {
    let results: Vec<Result<FeatureRow, ExtractFailure>> = polygons
        .par_iter()
        .enumerate()
        .map(|(index, poly)| {
            let fail = |reason: String| ExtractFailure {
                index,
                source_id: poly.source_id.clone(),
                reason,
            };
            let roi = rasterize(poly, raster).map_err(|e| fail(e.to_string()))?;
            let features = extract(&roi, raster, config).map_err(|e| fail(e.to_string()))?;
            Ok(FeatureRow {
                source_id: poly.source_id.clone(),
                label: poly.label,
                area_m2: roi.area_m2,
                features,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    (rows, failures)
}

/// Labeled train, validation and test datasets from a split scene.
#[derive(Debug, Clone)]
pub struct SplitDatasets {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub failures: Vec<ExtractFailure>,
}

pub fn datasets_from_split(
    outcome: &SplitOutcome,
    raster: &RasterGrid,
    config: &FeatureConfig,
) -> Result<SplitDatasets, TableError> {
    let mut failures = Vec::new();
    let mut build = |tag| -> Result<Dataset, TableError> {
        let (rows, f) = extract_rows(outcome.get(tag), raster, config);
        failures.extend(f);
        to_dataset(&rows)
    };
    let train = build(SplitTag::Train)?;
    let validation = build(SplitTag::Validation)?;
    let test = build(SplitTag::Test)?;
    Ok(SplitDatasets {
        train,
        validation,
        test,
        failures,
    })
}
