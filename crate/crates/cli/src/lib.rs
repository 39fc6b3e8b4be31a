//! Report documents and heatmap rendering for the promptlens command line.

pub mod report;
