//! Pairwise distances between track representations: Euclidean distances on
//! descriptor vectors, closed-form Kullback-Leibler divergence on feature
//! moments (diagonal-Gaussian assumption), and a cross-prediction baseline
//! built on state-space embedding.
//!
//! Distance "sets" mirror the descriptor combinations used for the
//! similarity task: set 1 compares compression descriptors at every
//! resolution (100 columns for 25 features), set 2 is the cross-prediction
//! baseline (25), set 3 Euclidean moment distances (25), set 4 KLD moment
//! distances (25), set 5 = 3 union 4 (50) and set 6 = 1 union 3 union 4
//! (150).

use crate::data::Dataset;
use crate::descriptors::{fcd_name, fmd_moments, fmd_name, DescriptorVector};
use rayon::prelude::*;
use thiserror::Error;

/// Floor applied to variances before division so constant features yield
/// finite divergences and normalised errors.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Default embedding dimension for the cross-prediction baseline.
pub const DEFAULT_EMBED_DIM: usize = 12;

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("vector length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("sequence too short for embedding dimension {d}: {t} frames (need at least {min})")]
    TooShortForEmbedding { t: usize, d: usize, min: usize },
    #[error("unknown distance set {0} (valid: 1..=6)")]
    UnknownSet(u8),
    #[error("missing descriptor '{name}' for track '{track_id}'")]
    MissingDescriptor { track_id: String, name: String },
    #[error("missing feature '{feature}' for track '{track_id}'")]
    MissingFeature { track_id: String, feature: String },
}

/// One named distance between a pair of tracks, as written to distances.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistance {
    pub track_i: String,
    pub track_j: String,
    pub name: String,
    pub value: f64,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, DistanceError> {
    if a.len() != b.len() {
        return Err(DistanceError::LengthMismatch { a: a.len(), b: b.len() });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// KLD between diagonal-covariance Gaussians, in nats:
/// `0.5 * sum_d [ var2/var1 + (mu1-mu2)^2/var1 - 1 - ln(var2/var1) ]`,
/// with [`VARIANCE_FLOOR`] applied to both variances.
pub fn kld_diag(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64, DistanceError> {
    let h = mu1.len();
    for other in [var1.len(), mu2.len(), var2.len()] {
        if other != h {
            return Err(DistanceError::LengthMismatch { a: h, b: other });
        }
    }
    let mut acc = 0.0;
    for d in 0..h {
        let v1 = var1[d].max(VARIANCE_FLOOR);
        let v2 = var2[d].max(VARIANCE_FLOOR);
        let dm = mu1[d] - mu2[d];
        acc += v2 / v1 + dm * dm / v1 - 1.0 - (v2 / v1).ln();
    }
    Ok(0.5 * acc)
}

/// How the KLD is mapped to a regression input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KldLog {
    /// `ln(kld)`; negative infinity at identical tracks.
    Plain,
    /// `ln(1 + kld)`; zero at identical tracks (default).
    Plus1,
}

/// Log-transformed KLD between two FMD vectors (means followed by standard
/// deviations, as produced by the moment descriptors). Direction is
/// `track of fmd_i` towards `track of fmd_j`.
pub fn kld_distance(fmd_i: &DescriptorVector, fmd_j: &DescriptorVector) -> Result<f64, DistanceError> {
    kld_distance_with(&fmd_i.values, &fmd_j.values, KldLog::Plus1, false)
}

pub fn kld_distance_with(
    fmd_i: &[f64],
    fmd_j: &[f64],
    log: KldLog,
    symmetrise: bool,
) -> Result<f64, DistanceError> {
    if fmd_i.len() != fmd_j.len() {
        return Err(DistanceError::LengthMismatch { a: fmd_i.len(), b: fmd_j.len() });
    }
    let (mu1, sd1) = fmd_moments(fmd_i);
    let (mu2, sd2) = fmd_moments(fmd_j);
    let var1: Vec<f64> = sd1.iter().map(|s| s * s).collect();
    let var2: Vec<f64> = sd2.iter().map(|s| s * s).collect();
    let mut kld = kld_diag(mu1, &var1, mu2, &var2)?;
    if symmetrise {
        kld = 0.5 * (kld + kld_diag(mu2, &var2, mu1, &var1)?);
    }
    Ok(match log {
        KldLog::Plain => kld.ln(),
        KldLog::Plus1 => kld.ln_1p(),
    })
}

/// Stacks frames `t-d .. t-1` into one point of dimension `d*h` for each
/// valid `t`; `points[k]` predicts frame `d + k`.
fn embed(frames: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let h = frames[0].len();
    (d..frames.len())
        .map(|t| {
            let mut point = Vec::with_capacity(d * h);
            for v in &frames[t - d..t] {
                point.extend_from_slice(v);
            }
            point
        })
        .collect()
}

/// Predicts each frame of `b` as the successor of the nearest neighbour (in
/// the `d`-frame embedded space) among the embedded points of `a`, and
/// returns the square root of the per-dimension variance-normalised mean
/// squared prediction error.
pub fn cross_prediction_error(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    d: usize,
) -> Result<f64, DistanceError> {
    let min = d + 2;
    for t in [a.len(), b.len()] {
        if t < min {
            return Err(DistanceError::TooShortForEmbedding { t, d, min });
        }
    }
    let h = a[0].len();
    if b[0].len() != h {
        return Err(DistanceError::LengthMismatch { a: h, b: b[0].len() });
    }
    let ea = embed(a, d);
    let eb = embed(b, d);
    let mut sq_err = vec![0.0f64; h];
    for (k, point) in eb.iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        for (m, cand) in ea.iter().enumerate() {
            let d2: f64 = point.iter().zip(cand).map(|(x, y)| (x - y) * (x - y)).sum();
            if d2 < best_d2 {
                best_d2 = d2;
                best = m;
            }
        }
        let truth = &b[d + k];
        let pred = &a[d + best];
        for c in 0..h {
            let e = truth[c] - pred[c];
            sq_err[c] += e * e;
        }
    }
    let n = eb.len() as f64;
    let mut nmse = 0.0;
    for c in 0..h {
        let mean = b.iter().map(|f| f[c]).sum::<f64>() / b.len() as f64;
        let var = b.iter().map(|f| (f[c] - mean) * (f[c] - mean)).sum::<f64>() / b.len() as f64;
        nmse += (sq_err[c] / n) / var.max(VARIANCE_FLOOR);
    }
    Ok((nmse / h as f64).sqrt())
}

/// Per-track lookup of named descriptor vectors.
#[derive(Debug, Default, Clone)]
pub struct DescriptorStore {
    map: std::collections::BTreeMap<String, std::collections::BTreeMap<String, Vec<f64>>>,
}

impl DescriptorStore {
    pub fn from_vectors(vectors: impl IntoIterator<Item = DescriptorVector>) -> Self {
        let mut store = DescriptorStore::default();
        for v in vectors {
            store
                .map
                .entry(v.track_id)
                .or_default()
                .insert(v.name, v.values);
        }
        store
    }

    pub fn get(&self, track_id: &str, name: &str) -> Option<&Vec<f64>> {
        self.map.get(track_id).and_then(|m| m.get(name))
    }

    fn require(&self, track_id: &str, name: &str) -> Result<&Vec<f64>, DistanceError> {
        self.get(track_id, name).ok_or_else(|| DistanceError::MissingDescriptor {
            track_id: track_id.to_string(),
            name: name.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DistanceOptions {
    pub factors: Vec<usize>,
    pub embed_dim: usize,
    pub kld_log: KldLog,
    pub symmetrise: bool,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            factors: crate::descriptors::DEFAULT_FACTORS.to_vec(),
            embed_dim: DEFAULT_EMBED_DIM,
            kld_log: KldLog::Plus1,
            symmetrise: false,
        }
    }
}

/// A pairs-by-columns table of named distances, rows in input pair order.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    pub pairs: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DistanceTable {
    pub fn pair_distances(&self) -> impl Iterator<Item = PairDistance> + '_ {
        self.pairs.iter().zip(&self.rows).flat_map(move |((i, j), row)| {
            self.columns.iter().zip(row).map(move |(name, &value)| PairDistance {
                track_i: i.clone(),
                track_j: j.clone(),
                name: name.clone(),
                value,
            })
        })
    }
}

/// Column names for a distance set, in emission order.
pub fn set_columns(
    feature_names: &[String],
    set: u8,
    factors: &[usize],
) -> Result<Vec<String>, DistanceError> {
    let fcd_cols = || -> Vec<String> {
        feature_names
            .iter()
            .flat_map(|f| factors.iter().map(move |&k| format!("euc:{}", fcd_name(f, k))))
            .collect()
    };
    let xpred_cols = || -> Vec<String> {
        feature_names.iter().map(|f| format!("xpred:{f}")).collect()
    };
    let fmd_euc_cols = || -> Vec<String> {
        feature_names.iter().map(|f| format!("euc:{}", fmd_name(f))).collect()
    };
    let kld_cols = || -> Vec<String> {
        feature_names.iter().map(|f| format!("kld:{f}")).collect()
    };
    Ok(match set {
        1 => fcd_cols(),
        2 => xpred_cols(),
        3 => fmd_euc_cols(),
        4 => kld_cols(),
        5 => fmd_euc_cols().into_iter().chain(kld_cols()).collect(),
        6 => fcd_cols()
            .into_iter()
            .chain(fmd_euc_cols())
            .chain(kld_cols())
            .collect(),
        other => return Err(DistanceError::UnknownSet(other)),
    })
}

/// Builds the distance table for `pairs` under distance set `set`. Pairs are
/// processed in parallel but rows are emitted in input order.
pub fn distance_table(
    ds: &Dataset,
    store: &DescriptorStore,
    pairs: &[(String, String)],
    set: u8,
    opts: &DistanceOptions,
) -> Result<DistanceTable, DistanceError> {
    let feature_names = ds.feature_names();
    let columns = set_columns(&feature_names, set, &opts.factors)?;
    let rows: Result<Vec<Vec<f64>>, DistanceError> = pairs
        .par_iter()
        .map(|(i, j)| pair_row(ds, store, i, j, set, &feature_names, opts))
        .collect();
    Ok(DistanceTable {
        pairs: pairs.to_vec(),
        columns,
        rows: rows?,
    })
}

fn pair_row(
    ds: &Dataset,
    store: &DescriptorStore,
    i: &str,
    j: &str,
    set: u8,
    feature_names: &[String],
    opts: &DistanceOptions,
) -> Result<Vec<f64>, DistanceError> {
    let mut row = Vec::new();
    let fcd = |row: &mut Vec<f64>| -> Result<(), DistanceError> {
        for f in feature_names {
            for &k in &opts.factors {
                let name = fcd_name(f, k);
                row.push(euclidean(store.require(i, &name)?, store.require(j, &name)?)?);
            }
        }
        Ok(())
    };
    let fmd_euc = |row: &mut Vec<f64>| -> Result<(), DistanceError> {
        for f in feature_names {
            let name = fmd_name(f);
            row.push(euclidean(store.require(i, &name)?, store.require(j, &name)?)?);
        }
        Ok(())
    };
    let kld = |row: &mut Vec<f64>| -> Result<(), DistanceError> {
        for f in feature_names {
            let name = fmd_name(f);
            row.push(kld_distance_with(
                store.require(i, &name)?,
                store.require(j, &name)?,
                opts.kld_log,
                opts.symmetrise,
            )?);
        }
        Ok(())
    };
    let xpred = |row: &mut Vec<f64>| -> Result<(), DistanceError> {
        for f in feature_names {
            let a = ds.feature(i, f).ok_or_else(|| DistanceError::MissingFeature {
                track_id: i.to_string(),
                feature: f.clone(),
            })?;
            let b = ds.feature(j, f).ok_or_else(|| DistanceError::MissingFeature {
                track_id: j.to_string(),
                feature: f.clone(),
            })?;
            let mut e = cross_prediction_error(&a.frames, &b.frames, opts.embed_dim)?;
            if opts.symmetrise {
                e = 0.5 * (e + cross_prediction_error(&b.frames, &a.frames, opts.embed_dim)?);
            }
            row.push(e);
        }
        Ok(())
    };
    match set {
        1 => fcd(&mut row)?,
        2 => xpred(&mut row)?,
        3 => fmd_euc(&mut row)?,
        4 => kld(&mut row)?,
        5 => {
            fmd_euc(&mut row)?;
            kld(&mut row)?;
        }
        6 => {
            fcd(&mut row)?;
            fmd_euc(&mut row)?;
            kld(&mut row)?;
        }
        other => return Err(DistanceError::UnknownSet(other)),
    }
    Ok(row)
}
