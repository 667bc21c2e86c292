//! File formats: netpbm rasters and dataset directories.

pub mod dataset;
pub mod netpbm;
