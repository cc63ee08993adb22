//! Per-track descriptor computation: feature complexity descriptors (FCDs,
//! compression rates per downsampling factor and alphabet size) and feature
//! moment descriptors (FMDs, per-dimension mean and standard deviation).
//!
//! Vector-valued features are decorrelated with track-wise PCA and each
//! component is quantised and compressed separately; the per-component
//! codelengths are averaged before normalising by the downsampled length.

use crate::data::{Dataset, FrameRate};
use crate::ppm::{self, PpmError};
use crate::symbolic::{self, SymbolicError};
use thiserror::Error;

pub const DEFAULT_LAMBDAS: [usize; 3] = [3, 4, 5];
pub const DEFAULT_FACTORS: [usize; 4] = [1, 2, 4, 8];
pub const DEFAULT_PPM_ORDER: usize = 5;

/// PCA components with variance below this are excluded from the codelength
/// average; quantising an all-but-constant score sequence is meaningless.
pub const PCA_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("track '{0}' has no feature '{1}'")]
    MissingFeature(String, String),
    #[error("PCA requires more frames than dimensions: T={t}, h={h}")]
    PcaTooFewFrames { t: usize, h: usize },
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Ppm(#[from] PpmError),
}

/// A named per-track descriptor vector `r_{i,n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector {
    pub track_id: String,
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Component score sequences, one per retained axis, each of length T,
    /// ordered by descending variance.
    pub scores: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Column means removed before projection.
    pub mean: Vec<f64>,
    /// Loading vectors matching `scores`, rows of length h.
    pub loadings: Vec<Vec<f64>>,
    /// Set when the input matrix has zero variance everywhere.
    pub degenerate: bool,
}

/// Track-wise PCA: mean-centres columns and returns all h component score
/// sequences ordered by descending variance. Sign is fixed so that each
/// loading vector's largest-magnitude entry is positive.
pub fn track_pca(frames: &[Vec<f64>]) -> Result<PcaResult, DescriptorError> {
    let t = frames.len();
    let h = frames.first().map_or(0, |f| f.len());
    if t <= h {
        return Err(DescriptorError::PcaTooFewFrames { t, h });
    }
    let mut mean = vec![0.0; h];
    for row in frames {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut cov = nalgebra::DMatrix::<f64>::zeros(h, h);
    for row in frames {
        for a in 0..h {
            let da = row[a] - mean[a];
            for b in a..h {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..h {
        for b in a..h {
            let v = cov[(a, b)] / (t as f64 - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let total_var: f64 = (0..h).map(|i| cov[(i, i)]).sum();
    if total_var <= 0.0 {
        return Ok(PcaResult {
            scores: vec![vec![0.0; t]; h],
            explained_variance: vec![0.0; h],
            mean,
            loadings: (0..h)
                .map(|i| (0..h).map(|j| f64::from(i == j)).collect())
                .collect(),
            degenerate: true,
        });
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut loadings = Vec::with_capacity(h);
    let mut explained = Vec::with_capacity(h);
    for &c in &order {
        let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let dominant = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if axis[dominant] < 0.0 {
            for v in &mut axis {
                *v = -*v;
            }
        }
        loadings.push(axis);
        explained.push(eig.eigenvalues[c].max(0.0));
    }
    let scores: Vec<Vec<f64>> = loadings
        .iter()
        .map(|axis| {
            frames
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&mean)
                        .zip(axis)
                        .map(|((v, m), a)| (v - m) * a)
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(PcaResult {
        scores,
        explained_variance: explained,
        mean,
        loadings,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Default)]
pub struct FcdOutput {
    pub vectors: Vec<DescriptorVector>,
    /// Names of (feature, factor) vectors that could not be computed because
    /// the sequence is too short; surfaced in validation reports.
    pub missing: Vec<String>,
    /// Retained PCA component counts per vector feature.
    pub retained_components: Vec<(String, usize)>,
}

pub fn fcd_name(feature: &str, factor: usize) -> String {
    format!("fcd:{feature}:{factor}")
}

pub fn fmd_name(feature: &str) -> String {
    format!("fmd:{feature}")
}

/// Computes all FCD vectors for one track: one vector per (feature, factor)
/// holding one compression rate per alphabet size. Variable-frame-rate
/// features use factor 1 only.
pub fn compute_fcd(
    track_id: &str,
    ds: &Dataset,
    lambdas: &[usize],
    factors: &[usize],
    order: usize,
) -> Result<FcdOutput, DescriptorError> {
    let mut out = FcdOutput::default();
    for feature in ds.feature_names() {
        let seq = ds
            .feature(track_id, &feature)
            .ok_or_else(|| DescriptorError::MissingFeature(track_id.into(), feature.clone()))?;
        let h = seq.dims();
        let components: Vec<Vec<f64>> = if h == 1 {
            vec![seq.column(0)]
        } else {
            let pca = track_pca(&seq.frames)?;
            if pca.degenerate {
                // keep the first (zero) score so constant features still
                // produce a near-zero rate rather than a hole in the matrix
                out.retained_components.push((feature.clone(), 1));
                vec![pca.scores[0].clone()]
            } else {
                let retained: Vec<Vec<f64>> = pca
                    .scores
                    .iter()
                    .zip(&pca.explained_variance)
                    .filter(|(_, &v)| v >= PCA_VARIANCE_FLOOR)
                    .map(|(s, _)| s.clone())
                    .collect();
                out.retained_components.push((feature.clone(), retained.len()));
                retained
            }
        };
        let feature_factors: Vec<usize> = match seq.frame_rate {
            FrameRate::Variable => vec![1],
            FrameRate::Hz(_) => factors.to_vec(),
        };
        for &factor in &feature_factors {
            let name = fcd_name(&feature, factor);
            match fcd_rates(&components, lambdas, factor, order) {
                Ok(values) => out.vectors.push(DescriptorVector {
                    track_id: track_id.to_string(),
                    name,
                    values,
                }),
                Err(DescriptorError::Symbolic(SymbolicError::TooShortForFactor { .. }))
                | Err(DescriptorError::Symbolic(SymbolicError::TooShortForBinning { .. })) => {
                    out.missing.push(name);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Mean per-component codelength divided by the shared downsampled length;
/// equals the mean of per-component rates since all components share T'.
fn fcd_rates(
    components: &[Vec<f64>],
    lambdas: &[usize],
    factor: usize,
    order: usize,
) -> Result<Vec<f64>, DescriptorError> {
    let downsampled: Vec<Vec<f64>> = components
        .iter()
        .map(|c| symbolic::downsample(c, factor))
        .collect::<Result<_, _>>()?;
    let mut rates = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut total_bits = 0.0;
        let mut len = 0usize;
        for comp in &downsampled {
            let edges = symbolic::equal_frequency_edges(comp, lambda)?;
            let symbols = symbolic::quantise(comp, &edges);
            let r = ppm::ppm_codelength(&symbols, order)?;
            total_bits += r.codelength_bits;
            len = r.length;
        }
        rates.push(total_bits / components.len() as f64 / len as f64);
    }
    Ok(rates)
}

/// Computes all FMD vectors for one track: per feature, per dimension, the
/// empirical mean and population standard deviation at the original frame
/// rate, laid out as `[mean_0 .. mean_{h-1}, std_0 .. std_{h-1}]`.
pub fn compute_fmd(track_id: &str, ds: &Dataset) -> Result<Vec<DescriptorVector>, DescriptorError> {
    let mut out = Vec::new();
    for feature in ds.feature_names() {
        let seq = ds
            .feature(track_id, &feature)
            .ok_or_else(|| DescriptorError::MissingFeature(track_id.into(), feature.clone()))?;
        let h = seq.dims();
        let t = seq.len() as f64;
        let mut means = vec![0.0; h];
        for row in &seq.frames {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= t;
        }
        let mut stds = vec![0.0; h];
        for row in &seq.frames {
            for (s, (v, m)) in stds.iter_mut().zip(row.iter().zip(&means)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stds {
            *s = (*s / t).sqrt();
        }
        let mut values = means;
        values.extend(stds);
        out.push(DescriptorVector {
            track_id: track_id.to_string(),
            name: fmd_name(&feature),
            values,
        });
    }
    Ok(out)
}

/// Splits an FMD vector into (means, stds).
pub fn fmd_moments(values: &[f64]) -> (&[f64], &[f64]) {
    values.split_at(values.len() / 2)
}
