pub mod cli;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod models;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod table;
