//! Compression-based sequential-complexity descriptors (FCDs) and moment
//! descriptors (FMDs) for audio-feature time series, together with the two
//! regression tasks built on them: pairwise similarity-rating prediction and
//! song-year prediction.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] — dataset ingestion, deduplicating splits, outlier imputation
//! * [`symbolic`] — downsampling and equal-frequency quantisation
//! * [`ppm`] — prediction-by-partial-match codelengths and compression rates
//! * [`descriptors`] — per-track FCD/FMD descriptor vectors
//! * [`distances`] — Euclidean / KLD / cross-prediction pair distances
//! * [`regress`] — elastic-net multinomial and linear regression
//! * [`metrics`] — rank correlations, balanced accuracy, bootstrap errors
//! * [`synth`] — synthetic corpus generation for testing
//! * [`pipeline`] — end-to-end experiment commands backing the CLI

pub mod data;
pub mod descriptors;
pub mod distances;
pub mod metrics;
pub mod pipeline;
pub mod ppm;
pub mod regress;
pub mod symbolic;
pub mod synth;
