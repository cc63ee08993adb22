//! Synthetic corpus generator for exercising the descriptor and regression
//! pipelines end to end.
//!
//! Every track carries two hidden scalars: a "style" latent and its
//! (normalised) chart-entry year. Both drive the AR(1) coefficient of the
//! generated feature sequences (visible to compression descriptors) and the
//! per-feature means and spreads (visible to moment descriptors), so
//! compression-based and moment-based representations each carry part of the
//! signal. Similarity ratings discretise a monotone function of the latent
//! distance between two tracks plus ordinal noise.
//!
//! Generation is deterministic given (parameters, seed) and independent of
//! evaluation order: each (track, feature) pair gets its own counter-derived
//! RNG stream, which also lets callers rebuild a single track's features
//! without materialising the whole corpus.

use crate::data::{Dataset, FeatureSequence, FrameRate, PairRating, TrackRecord};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("n_tracks must be >= 1")]
    NoTracks,
    #[error("not enough distinct pairs for {requested} ratings over {tracks} tracks")]
    TooManyRatings { requested: usize, tracks: usize },
}

pub const SCALAR_FEATURES: [&str; 21] = [
    "rms", "zerocross", "centroid", "spread", "skewness", "kurtosis", "flatness",
    "entropy", "brightness", "rolloff85", "rolloff95", "roughness", "irregularity",
    "inharmonicity", "modality", "hcdf", "novelty", "attack", "flux", "lowenergy",
    "pulseclarity",
];
pub const MULTI_FEATURES: [&str; 4] = ["mfcc", "dmfcc", "ddmfcc", "chroma"];
pub const MULTI_DIM: usize = 12;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub n_tracks: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub n_ratings: usize,
    /// 0 = one artist per five tracks.
    pub n_artists: usize,
    /// Base AR(1) coefficient; 0 produces temporally uncorrelated sequences.
    pub correlation: f64,
    /// Relative effect of the style latent on the AR coefficient.
    pub style_amp: f64,
    /// Relative effect of the year latent on the AR coefficient.
    pub year_amp: f64,
    /// Effect of the style latent on feature means/spreads.
    pub moment_style: f64,
    /// Effect of the year latent on feature means/spreads.
    pub moment_year: f64,
    /// Per-track intrinsic noise added to moment targets.
    pub latent_noise: f64,
    /// Probability that a generated rating is shifted by +-1.
    pub rating_noise: f64,
    pub year_lo: f64,
    pub year_hi: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_tracks: 10,
            frames: 1200,
            frame_rate: 40.0,
            n_ratings: 0,
            n_artists: 0,
            correlation: 0.55,
            style_amp: 0.35,
            year_amp: 0.5,
            moment_style: 0.6,
            moment_year: 0.5,
            latent_noise: 0.15,
            rating_noise: 0.15,
            year_lo: 1958.0,
            year_hi: 2010.0,
        }
    }
}

impl SynthParams {
    fn artists(&self) -> usize {
        if self.n_artists > 0 {
            self.n_artists
        } else {
            (self.n_tracks / 5).max(1)
        }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0x2545_F491_4F6C_DD1D);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Hidden per-track variables; exposed so tests can measure recovery of the
/// generating signal.
#[derive(Debug, Clone)]
pub struct TrackLatent {
    pub style: f64,
    /// Chart-entry date in fractional years.
    pub year: f64,
    /// Year scaled to [0, 1] over the configured range.
    pub year_norm: f64,
}

pub fn track_latent(params: &SynthParams, seed: u64, index: usize) -> TrackLatent {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, index as u64, 0xA11CE));
    let style: f64 = rng.gen::<f64>();
    let year = rng.gen_range(params.year_lo..params.year_hi);
    TrackLatent {
        style,
        year,
        year_norm: (year - params.year_lo) / (params.year_hi - params.year_lo),
    }
}

fn fractional_year_to_date(fy: f64) -> NaiveDate {
    let year = fy.floor() as i32;
    let ordinal = ((fy - year as f64) * 365.25).floor() as u32;
    NaiveDate::from_yo_opt(year, ordinal.clamp(0, 364) + 1).unwrap()
}

pub fn track_record(params: &SynthParams, seed: u64, index: usize) -> TrackRecord {
    let latent = track_latent(params, seed, index);
    let date = fractional_year_to_date(latent.year);
    TrackRecord {
        track_id: format!("t{index:05}"),
        artist: format!("Artist {}", index % params.artists()),
        title: format!("Title {index}"),
        chart_entry_date: crate::data::date_to_fractional_year(date),
    }
}

struct FeatureSpec {
    name: &'static str,
    dims: usize,
    /// Sinusoid period in frames and relative amplitude.
    period: f64,
    sin_amp: f64,
    base: f64,
    /// Signed weights of the style/year latents on mean and log-spread.
    w_mean_style: f64,
    w_mean_year: f64,
    w_sd_style: f64,
    w_sd_year: f64,
}

fn feature_specs(seed: u64) -> Vec<FeatureSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xFEA7, 0x5EC5));
    let unit = |rng: &mut ChaCha8Rng| if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let mut specs = Vec::new();
    for name in SCALAR_FEATURES {
        specs.push(FeatureSpec {
            name,
            dims: 1,
            period: rng.gen_range(20.0..80.0),
            sin_amp: rng.gen_range(0.1..0.3),
            base: rng.gen_range(-1.0..1.0),
            w_mean_style: unit(&mut rng) * rng.gen_range(0.5..1.0),
            w_mean_year: unit(&mut rng) * rng.gen_range(0.5..1.0),
            w_sd_style: unit(&mut rng) * rng.gen_range(0.3..0.8),
            w_sd_year: unit(&mut rng) * rng.gen_range(0.3..0.8),
        });
    }
    for name in MULTI_FEATURES {
        specs.push(FeatureSpec {
            name,
            dims: MULTI_DIM,
            period: rng.gen_range(20.0..80.0),
            sin_amp: rng.gen_range(0.1..0.3),
            base: rng.gen_range(-1.0..1.0),
            w_mean_style: unit(&mut rng) * rng.gen_range(0.5..1.0),
            w_mean_year: unit(&mut rng) * rng.gen_range(0.5..1.0),
            w_sd_style: unit(&mut rng) * rng.gen_range(0.3..0.8),
            w_sd_year: unit(&mut rng) * rng.gen_range(0.3..0.8),
        });
    }
    specs
}

fn ar_coefficient(params: &SynthParams, latent: &TrackLatent, jitter: f64) -> f64 {
    let factor = 1.0
        + params.style_amp * (latent.style - 0.5) * 2.0
        + params.year_amp * (latent.year_norm - 0.5) * 2.0
        + jitter;
    (params.correlation * factor).clamp(0.0, 0.98)
}

/// All 25 feature sequences of one track.
pub fn track_features(params: &SynthParams, seed: u64, index: usize) -> Vec<FeatureSequence> {
    let latent = track_latent(params, seed, index);
    let track_id = format!("t{index:05}");
    let specs = feature_specs(seed);
    let mut out = Vec::with_capacity(specs.len());
    for (f_idx, spec) in specs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, index as u64, f_idx as u64 + 1));
        let a = ar_coefficient(params, &latent, 0.05 * normal(&mut rng));
        let drive = 1.0 - a * a;
        let mut frames = vec![vec![0.0f64; spec.dims]; params.frames];
        for d in 0..spec.dims {
            let dim_shift = d as f64 * 0.37;
            let mean = spec.base
                + params.moment_style * spec.w_mean_style * (latent.style - 0.5) * (1.0 + 0.2 * dim_shift.sin())
                + params.moment_year * spec.w_mean_year * (latent.year_norm - 0.5) * (1.0 + 0.2 * dim_shift.cos())
                + params.latent_noise * normal(&mut rng);
            let sd = (0.4
                * (params.moment_style * spec.w_sd_style * (latent.style - 0.5)
                    + params.moment_year * spec.w_sd_year * (latent.year_norm - 0.5))
                + 0.1 * params.latent_noise * normal(&mut rng))
            .exp();
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut z = normal(&mut rng);
            for (t, frame) in frames.iter_mut().enumerate() {
                // sinusoid amplitude scales with the AR coefficient so the
                // correlation knob at 0 really yields white noise
                let s = a * spec.sin_amp * ((t as f64) * std::f64::consts::TAU / spec.period + phase).sin();
                frame[d] = mean + sd * (z + s);
                z = a * z + drive.sqrt() * normal(&mut rng);
            }
        }
        out.push(FeatureSequence {
            track_id: track_id.clone(),
            feature_name: spec.name.to_string(),
            frames,
            frame_rate: FrameRate::Hz(params.frame_rate),
        });
    }
    out
}

/// Dataset containing just one track (records and features), for streaming
/// descriptor computation over large corpora.
pub fn track_dataset(params: &SynthParams, seed: u64, index: usize) -> Dataset {
    let record = track_record(params, seed, index);
    let mut features = BTreeMap::new();
    for f in track_features(params, seed, index) {
        features.insert((f.track_id.clone(), f.feature_name.clone()), f);
    }
    Dataset {
        tracks: vec![record],
        features,
        ratings: Vec::new(),
    }
}

/// Latent distance used to generate similarity ratings.
fn latent_distance(a: &TrackLatent, b: &TrackLatent) -> f64 {
    let ds = a.style - b.style;
    let dy = a.year_norm - b.year_norm;
    (ds * ds + 0.5 * dy * dy).sqrt()
}

/// Ratings over sampled distinct pairs: the latent distances are cut at
/// their empirical quintiles (closest fifth scores 5) and then perturbed by
/// ordinal noise.
pub fn generate_ratings(params: &SynthParams, seed: u64) -> Result<Vec<PairRating>, SynthError> {
    let n = params.n_tracks;
    if params.n_ratings > n * (n - 1) / 2 {
        return Err(SynthError::TooManyRatings { requested: params.n_ratings, tracks: n });
    }
    let latents: Vec<TrackLatent> = (0..n).map(|i| track_latent(params, seed, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7A1E5, 0xBEEF));
    let mut seen = std::collections::BTreeSet::new();
    let mut pairs = Vec::with_capacity(params.n_ratings);
    while pairs.len() < params.n_ratings {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            continue;
        }
        pairs.push((i, j, latent_distance(&latents[i], &latents[j])));
    }
    let mut dists: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cut = |q: f64| dists[((q * dists.len() as f64).ceil() as usize).clamp(1, dists.len()) - 1];
    let cuts = [cut(0.2), cut(0.4), cut(0.6), cut(0.8)];
    Ok(pairs
        .into_iter()
        .map(|(i, j, d)| {
            let base = 5 - cuts.iter().filter(|&&c| d > c).count(); // 5 = closest
            let score = if rng.gen::<f64>() < params.rating_noise {
                let shift: i64 = if rng.gen::<bool>() { 1 } else { -1 };
                (base as i64 + shift).clamp(1, 5) as usize
            } else {
                base
            };
            PairRating {
                track_i: format!("t{i:05}"),
                track_j: format!("t{j:05}"),
                score,
            }
        })
        .collect())
}

/// Whole corpus in memory. For large corpora prefer [`track_dataset`] per
/// track.
pub fn generate_dataset(params: &SynthParams, seed: u64) -> Result<Dataset, SynthError> {
    if params.n_tracks == 0 {
        return Err(SynthError::NoTracks);
    }
    let mut tracks = Vec::with_capacity(params.n_tracks);
    let mut features = BTreeMap::new();
    for i in 0..params.n_tracks {
        tracks.push(track_record(params, seed, i));
        for f in track_features(params, seed, i) {
            features.insert((f.track_id.clone(), f.feature_name.clone()), f);
        }
    }
    let ratings = if params.n_ratings > 0 {
        generate_ratings(params, seed)?
    } else {
        Vec::new()
    };
    Ok(Dataset { tracks, features, ratings })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub tracks: usize,
    pub feature_files: usize,
    pub ratings: usize,
    pub manifest: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

/// Writes a manifest-conformant corpus: `manifest.txt`, `tracks.csv`,
/// `features.csv`, optional `ratings.csv`, and one headerless CSV per
/// (track, feature) under `tracks/<track_id>/`. Output bytes are a pure
/// function of (params, seed).
pub fn write_corpus(params: &SynthParams, seed: u64, out: &Path) -> Result<SynthSummary, SynthError> {
    if params.n_tracks == 0 {
        return Err(SynthError::NoTracks);
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut tracks_csv = String::from("track_id,artist,title,chart_entry_date\n");
    let mut features_csv = String::from("track_id,feature_name,path,frame_rate_hz,dims\n");
    let mut feature_files = 0usize;
    for i in 0..params.n_tracks {
        let record = track_record(params, seed, i);
        let date = fractional_year_to_date(track_latent(params, seed, i).year);
        tracks_csv.push_str(&format!(
            "{},{},{},{}\n",
            record.track_id,
            record.artist,
            record.title,
            date.format("%Y-%m-%d")
        ));
        let dir = out.join("tracks").join(&record.track_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for f in track_features(params, seed, i) {
            let rel = format!("tracks/{}/{}.csv", record.track_id, f.feature_name);
            let path = out.join(&rel);
            let mut body = String::new();
            for frame in &f.frames {
                let cells: Vec<String> = frame.iter().map(|v| format!("{v:.9e}")).collect();
                body.push_str(&cells.join(","));
                body.push('\n');
            }
            std::fs::write(&path, body).map_err(io_err(&path))?;
            feature_files += 1;
            features_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                record.track_id,
                f.feature_name,
                rel,
                params.frame_rate,
                f.frames[0].len()
            ));
        }
    }
    let tracks_path = out.join("tracks.csv");
    std::fs::write(&tracks_path, tracks_csv).map_err(io_err(&tracks_path))?;
    let features_path = out.join("features.csv");
    std::fs::write(&features_path, features_csv).map_err(io_err(&features_path))?;
    let mut manifest = String::from("tracks=tracks.csv\nfeatures=features.csv\n");
    let mut n_ratings = 0usize;
    if params.n_ratings > 0 {
        let ratings = generate_ratings(params, seed)?;
        n_ratings = ratings.len();
        let mut body = String::from("track_i,track_j,score\n");
        for r in &ratings {
            body.push_str(&format!("{},{},{}\n", r.track_i, r.track_j, r.score));
        }
        let ratings_path = out.join("ratings.csv");
        std::fs::write(&ratings_path, body).map_err(io_err(&ratings_path))?;
        manifest.push_str("ratings=ratings.csv\n");
    }
    let manifest_path = out.join("manifest.txt");
    let mut fh = std::fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    fh.write_all(manifest.as_bytes()).map_err(io_err(&manifest_path))?;
    Ok(SynthSummary {
        tracks: params.n_tracks,
        feature_files,
        ratings: n_ratings,
        manifest: manifest_path,
    })
}
