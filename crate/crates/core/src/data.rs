//! Dataset ingestion and cleaning: track metadata, feature time series and
//! similarity annotations, plus the artist/title-deduplicating split and
//! KNN outlier imputation used by the year-prediction pipeline.

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const NATIVE_SCALE: usize = 5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: missing or unreadable file: {source}")]
    MissingFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Schema {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: dangling track reference '{track_id}'")]
    DanglingTrack {
        file: PathBuf,
        line: usize,
        track_id: String,
    },
    #[error("infeasible split: largest atomic artist/title group ({group}) exceeds both subset capacities for fraction {fraction}")]
    InfeasibleSplit { group: usize, fraction: f64 },
    #[error("achieved train fraction {achieved:.3} outside {requested:.3} +/- 0.05")]
    SplitFractionMiss { achieved: f64, requested: f64 },
    #[error("imputation needs k < rows: k={k}, rows={rows}")]
    ImputeTooFewRows { k: usize, rows: usize },
    #[error("column {0} has every cell flagged as an outlier")]
    AllFlaggedColumn(usize),
}

/// Frame rate of a feature sequence; rhythmic features in the corpus use the
/// `variable` sentinel and are exempt from downsampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameRate {
    Hz(f64),
    Variable,
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameRate::Hz(v) => write!(f, "{v}"),
            FrameRate::Variable => write!(f, "variable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: String,
    pub artist: String,
    pub title: String,
    /// Chart entry date as fractional years: year + day_of_year / 365.25.
    pub chart_entry_date: f64,
}

#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub track_id: String,
    pub feature_name: String,
    /// T rows of h values each.
    pub frames: Vec<Vec<f64>>,
    pub frame_rate: FrameRate,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    /// One column of the T x h matrix.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f[d]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRating {
    pub track_i: String,
    pub track_j: String,
    pub score: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub tracks: Vec<TrackRecord>,
    pub features: BTreeMap<(String, String), FeatureSequence>,
    pub ratings: Vec<PairRating>,
}

impl Dataset {
    pub fn track(&self, id: &str) -> Option<&TrackRecord> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    pub fn feature(&self, track_id: &str, feature_name: &str) -> Option<&FeatureSequence> {
        self.features
            .get(&(track_id.to_string(), feature_name.to_string()))
    }

    /// Declared feature names, sorted.
    pub fn feature_names(&self) -> Vec<String> {
        let names: BTreeSet<String> =
            self.features.keys().map(|(_, f)| f.clone()).collect();
        names.into_iter().collect()
    }

    /// Track ids in sorted order.
    pub fn track_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.tracks.iter().map(|t| t.track_id.clone()).collect();
        ids.sort();
        ids
    }

    /// Subset containing only the given tracks; ratings are kept when both
    /// endpoints survive.
    pub fn subset(&self, ids: &BTreeSet<String>) -> Dataset {
        Dataset {
            tracks: self
                .tracks
                .iter()
                .filter(|t| ids.contains(&t.track_id))
                .cloned()
                .collect(),
            features: self
                .features
                .iter()
                .filter(|((tid, _), _)| ids.contains(tid))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            ratings: self
                .ratings
                .iter()
                .filter(|r| ids.contains(&r.track_i) && ids.contains(&r.track_j))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// (file, parsed row count) per ingested file.
    pub row_counts: Vec<(PathBuf, usize)>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Valid chart-entry range in fractional years, half-open.
    pub date_range: (f64, f64),
    pub rating_scale: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            date_range: (1957.0, 2011.0),
            rating_scale: NATIVE_SCALE,
        }
    }
}

/// Converts an ISO-8601 date to fractional years.
pub fn date_to_fractional_year(date: NaiveDate) -> f64 {
    date.year() as f64 + date.ordinal() as f64 / 365.25
}

pub fn load_dataset(manifest_path: &Path) -> Result<(Dataset, LoadReport), DataError> {
    load_dataset_with(manifest_path, &LoadOptions::default())
}

pub fn load_dataset_with(
    manifest_path: &Path,
    opts: &LoadOptions,
) -> Result<(Dataset, LoadReport), DataError> {
    let manifest = std::fs::read_to_string(manifest_path).map_err(|e| DataError::MissingFile {
        path: manifest_path.to_path_buf(),
        source: e,
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut tracks_path = None;
    let mut features_path = None;
    let mut ratings_path = None;
    for (i, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(DataError::Schema {
                file: manifest_path.to_path_buf(),
                line: i + 1,
                message: format!("expected key=value, got '{line}'"),
            });
        };
        let path = base.join(value.trim());
        match key.trim() {
            "tracks" => tracks_path = Some(path),
            "features" => features_path = Some(path),
            "ratings" => ratings_path = Some(path),
            other => {
                return Err(DataError::Schema {
                    file: manifest_path.to_path_buf(),
                    line: i + 1,
                    message: format!("unknown manifest key '{other}'"),
                })
            }
        }
    }
    let tracks_path = tracks_path.ok_or_else(|| DataError::Schema {
        file: manifest_path.to_path_buf(),
        line: 0,
        message: "manifest missing 'tracks' entry".into(),
    })?;
    let features_path = features_path.ok_or_else(|| DataError::Schema {
        file: manifest_path.to_path_buf(),
        line: 0,
        message: "manifest missing 'features' entry".into(),
    })?;

    let mut report = LoadReport::default();
    let tracks = load_tracks(&tracks_path, opts, &mut report)?;
    let track_ids: BTreeSet<String> = tracks.iter().map(|t| t.track_id.clone()).collect();
    let features = load_features(&features_path, base, &track_ids, &mut report)?;
    let ratings = match &ratings_path {
        Some(p) => load_ratings(p, &track_ids, opts, &mut report)?,
        None => Vec::new(),
    };

    // rectangular coverage: every track must carry every declared feature
    let feature_names: BTreeSet<String> = features.keys().map(|(_, f)| f.clone()).collect();
    for tid in &track_ids {
        for fname in &feature_names {
            if !features.contains_key(&(tid.clone(), fname.clone())) {
                return Err(DataError::Schema {
                    file: features_path.clone(),
                    line: 0,
                    message: format!("track '{tid}' is missing feature '{fname}' (coverage must be rectangular)"),
                });
            }
        }
    }

    Ok((
        Dataset {
            tracks,
            features,
            ratings,
        },
        report,
    ))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::MissingFile {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn schema_err(file: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Schema {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn load_tracks(
    path: &Path,
    opts: &LoadOptions,
    report: &mut LoadReport,
) -> Result<Vec<TrackRecord>, DataError> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| schema_err(path, 1, e.to_string()))?
        .clone();
    let expected = ["track_id", "artist", "title", "chart_entry_date"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(schema_err(
            path,
            1,
            format!("expected header {expected:?}, got {headers:?}"),
        ));
    }
    let mut tracks = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| schema_err(path, line, e.to_string()))?;
        if record.len() != 4 {
            return Err(schema_err(path, line, format!("expected 4 columns, got {}", record.len())));
        }
        let track_id = record[0].to_string();
        if !seen.insert(track_id.clone()) {
            return Err(schema_err(path, line, format!("duplicate track_id '{track_id}'")));
        }
        let date = NaiveDate::parse_from_str(&record[3], "%Y-%m-%d")
            .map_err(|e| schema_err(path, line, format!("bad date '{}': {e}", &record[3])))?;
        let fy = date_to_fractional_year(date);
        if fy < opts.date_range.0 || fy >= opts.date_range.1 {
            return Err(schema_err(
                path,
                line,
                format!("chart_entry_date {fy:.3} outside valid range [{}, {})", opts.date_range.0, opts.date_range.1),
            ));
        }
        tracks.push(TrackRecord {
            track_id,
            artist: record[1].to_string(),
            title: record[2].to_string(),
            chart_entry_date: fy,
        });
    }
    report.row_counts.push((path.to_path_buf(), tracks.len()));
    Ok(tracks)
}

fn load_features(
    path: &Path,
    base: &Path,
    track_ids: &BTreeSet<String>,
    report: &mut LoadReport,
) -> Result<BTreeMap<(String, String), FeatureSequence>, DataError> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| schema_err(path, 1, e.to_string()))?
        .clone();
    let expected = ["track_id", "feature_name", "path", "frame_rate_hz", "dims"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(schema_err(
            path,
            1,
            format!("expected header {expected:?}, got {headers:?}"),
        ));
    }
    let mut features = BTreeMap::new();
    let mut dims_by_name: HashMap<String, usize> = HashMap::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| schema_err(path, line, e.to_string()))?;
        if record.len() != 5 {
            return Err(schema_err(path, line, format!("expected 5 columns, got {}", record.len())));
        }
        rows += 1;
        let track_id = record[0].to_string();
        if !track_ids.contains(&track_id) {
            return Err(DataError::DanglingTrack {
                file: path.to_path_buf(),
                line,
                track_id,
            });
        }
        let feature_name = record[1].to_string();
        let frame_rate = if &record[3] == "variable" {
            FrameRate::Variable
        } else {
            let hz: f64 = record[3]
                .parse()
                .map_err(|e| schema_err(path, line, format!("bad frame_rate_hz '{}': {e}", &record[3])))?;
            if hz <= 0.0 {
                return Err(schema_err(path, line, "frame_rate_hz must be positive"));
            }
            FrameRate::Hz(hz)
        };
        let dims: usize = record[4]
            .parse()
            .map_err(|e| schema_err(path, line, format!("bad dims '{}': {e}", &record[4])))?;
        if dims == 0 {
            return Err(schema_err(path, line, "dims must be >= 1"));
        }
        match dims_by_name.get(&feature_name) {
            Some(&h) if h != dims => {
                return Err(schema_err(
                    path,
                    line,
                    format!("feature '{feature_name}' declared with dims {dims}, previously {h}"),
                ))
            }
            _ => {
                dims_by_name.insert(feature_name.clone(), dims);
            }
        }
        let seq_path = base.join(&record[2]);
        let frames = load_sequence(&seq_path, dims)?;
        features.insert(
            (track_id.clone(), feature_name.clone()),
            FeatureSequence {
                track_id,
                feature_name,
                frames,
                frame_rate,
            },
        );
    }
    report.row_counts.push((path.to_path_buf(), rows));
    Ok(features)
}

fn load_sequence(path: &Path, dims: usize) -> Result<Vec<Vec<f64>>, DataError> {
    let content = std::fs::read_to_string(path).map_err(|e| DataError::MissingFile {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut frames = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| schema_err(path, i + 1, format!("bad value: {e}")))?;
        if row.len() != dims {
            return Err(schema_err(
                path,
                i + 1,
                format!("expected {dims} columns, got {}", row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(schema_err(path, i + 1, "non-finite value"));
        }
        frames.push(row);
    }
    if frames.is_empty() {
        return Err(schema_err(path, 0, "sequence must have at least one frame"));
    }
    Ok(frames)
}

fn load_ratings(
    path: &Path,
    track_ids: &BTreeSet<String>,
    opts: &LoadOptions,
    report: &mut LoadReport,
) -> Result<Vec<PairRating>, DataError> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| schema_err(path, 1, e.to_string()))?
        .clone();
    let expected = ["track_i", "track_j", "score"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(schema_err(
            path,
            1,
            format!("expected header {expected:?}, got {headers:?}"),
        ));
    }
    let mut ratings = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| schema_err(path, line, e.to_string()))?;
        let track_i = record[0].to_string();
        let track_j = record[1].to_string();
        for id in [&track_i, &track_j] {
            if !track_ids.contains(id) {
                return Err(DataError::DanglingTrack {
                    file: path.to_path_buf(),
                    line,
                    track_id: id.clone(),
                });
            }
        }
        if track_i == track_j {
            return Err(schema_err(path, line, format!("self-pair '{track_i}'")));
        }
        let score: usize = record[2]
            .parse()
            .map_err(|e| schema_err(path, line, format!("bad score '{}': {e}", &record[2])))?;
        if score < 1 || score > opts.rating_scale {
            return Err(schema_err(
                path,
                line,
                format!("score {score} outside 1..={}", opts.rating_scale),
            ));
        }
        ratings.push(PairRating {
            track_i,
            track_j,
            score,
        });
    }
    report.row_counts.push((path.to_path_buf(), ratings.len()));
    Ok(ratings)
}

fn normalise_key(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Partitions tracks into train/test so that no artist string and no title
/// string (case-insensitive, whitespace-trimmed) appears in both subsets.
/// Tracks linked through shared artists or titles move as atomic groups.
pub fn dedup_split(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    assert!(train_fraction > 0.0 && train_fraction < 1.0);
    let n = ds.tracks.len();
    // union-find over tracks sharing a normalised artist or title
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut by_key: HashMap<String, usize> = HashMap::new();
    for (i, t) in ds.tracks.iter().enumerate() {
        for key in [
            format!("a:{}", normalise_key(&t.artist)),
            format!("t:{}", normalise_key(&t.title)),
        ] {
            match by_key.get(&key) {
                Some(&j) => {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri] = rj;
                    }
                }
                None => {
                    by_key.insert(key, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    let target = (train_fraction * n as f64).round() as usize;
    let largest = groups.iter().map(|g| g.len()).max().unwrap_or(0);
    if largest > target.max(n - target) {
        return Err(DataError::InfeasibleSplit {
            group: largest,
            fraction: train_fraction,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let mut train_idx: BTreeSet<usize> = BTreeSet::new();
    let mut train_count = 0usize;
    for g in &groups {
        if train_count + g.len() <= target {
            train_count += g.len();
            train_idx.extend(g.iter().copied());
        }
    }
    let achieved = train_count as f64 / n as f64;
    if (achieved - train_fraction).abs() > 0.05 {
        return Err(DataError::SplitFractionMiss {
            achieved,
            requested: train_fraction,
        });
    }
    let train_ids: BTreeSet<String> = train_idx
        .iter()
        .map(|&i| ds.tracks[i].track_id.clone())
        .collect();
    let test_ids: BTreeSet<String> = ds
        .tracks
        .iter()
        .filter(|t| !train_ids.contains(&t.track_id))
        .map(|t| t.track_id.clone())
        .collect();
    Ok((ds.subset(&train_ids), ds.subset(&test_ids)))
}

#[derive(Debug, Clone)]
pub struct ImputeResult {
    pub matrix: Vec<Vec<f64>>,
    /// (row, column) of every replaced cell.
    pub flagged: Vec<(usize, usize)>,
}

/// Flags cells beyond 10 standard deviations outside the [p1, p99] percentile
/// band of their column and replaces each with the mean of that column over
/// the `k` nearest rows (Euclidean distance on z-scored, flag-free columns).
///
/// Thresholds for a cell are computed leave-one-out over the remaining column
/// values: a gross outlier would otherwise inflate its own percentile and
/// standard deviation enough to mask itself at small row counts.
pub fn impute_outliers(matrix: &[Vec<f64>], k: usize) -> Result<ImputeResult, DataError> {
    impute_outliers_with(matrix, k, false)
}

pub fn impute_outliers_with(
    matrix: &[Vec<f64>],
    k: usize,
    upper_only: bool,
) -> Result<ImputeResult, DataError> {
    let rows = matrix.len();
    if k >= rows {
        return Err(DataError::ImputeTooFewRows { k, rows });
    }
    let cols = matrix.first().map_or(0, |r| r.len());
    let mut flagged: Vec<(usize, usize)> = Vec::new();
    let mut flagged_cols: Vec<bool> = vec![false; cols];
    let mut col_stats = Vec::with_capacity(cols);
    for c in 0..cols {
        let col: Vec<f64> = matrix.iter().map(|r| r[c]).collect();
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sum: f64 = col.iter().sum();
        let sumsq: f64 = col.iter().map(|v| v * v).sum();
        let mean = sum / rows as f64;
        let sd = (sumsq / rows as f64 - mean * mean).max(0.0).sqrt();
        // order statistic at 1-based index ceil(p * (rows - 1)) of the column
        // with one value removed; removing any occurrence of an equal value
        // yields the same multiset
        let loo_percentile = |p: f64, removed: f64| -> f64 {
            let n1 = rows - 1;
            let idx = ((p * n1 as f64).ceil() as usize).clamp(1, n1);
            let j = sorted.partition_point(|&v| v < removed); // first occurrence
            if idx - 1 < j {
                sorted[idx - 1]
            } else {
                sorted[idx]
            }
        };
        let mut col_flags = 0usize;
        for (r, &v) in col.iter().enumerate() {
            let n1 = (rows - 1) as f64;
            let mean1 = (sum - v) / n1;
            let sd1 = ((sumsq - v * v) / n1 - mean1 * mean1).max(0.0).sqrt();
            let hi = loo_percentile(0.99, v) + 10.0 * sd1;
            let lo = loo_percentile(0.01, v) - 10.0 * sd1;
            if v > hi || (!upper_only && v < lo) {
                flagged.push((r, c));
                flagged_cols[c] = true;
                col_flags += 1;
            }
        }
        if col_flags == rows {
            return Err(DataError::AllFlaggedColumn(c));
        }
        col_stats.push((mean, sd));
    }
    if flagged.is_empty() {
        return Ok(ImputeResult {
            matrix: matrix.to_vec(),
            flagged,
        });
    }
    // distance space: z-scored columns that contain no flags anywhere
    let clean_cols: Vec<usize> = (0..cols).filter(|&c| !flagged_cols[c]).collect();
    let z = |r: usize, c: usize| -> f64 {
        let (mean, sd) = col_stats[c];
        if sd > 0.0 {
            (matrix[r][c] - mean) / sd
        } else {
            0.0
        }
    };
    let mut out = matrix.to_vec();
    for &(r, c) in &flagged {
        let flagged_in_col: BTreeSet<usize> = flagged
            .iter()
            .filter(|&&(_, fc)| fc == c)
            .map(|&(fr, _)| fr)
            .collect();
        let mut candidates: Vec<(f64, usize)> = (0..rows)
            .filter(|&r2| r2 != r && !flagged_in_col.contains(&r2))
            .map(|r2| {
                let d2: f64 = clean_cols
                    .iter()
                    .map(|&cc| (z(r, cc) - z(r2, cc)).powi(2))
                    .sum();
                (d2, r2)
            })
            .collect();
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let neighbours: Vec<usize> = candidates.iter().take(k).map(|&(_, r2)| r2).collect();
        if neighbours.is_empty() {
            return Err(DataError::AllFlaggedColumn(c));
        }
        out[r][c] =
            neighbours.iter().map(|&r2| matrix[r2][c]).sum::<f64>() / neighbours.len() as f64;
    }
    Ok(ImputeResult {
        matrix: out,
        flagged,
    })
}
