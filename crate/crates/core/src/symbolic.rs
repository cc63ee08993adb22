//! Conversion of real-valued sequences to symbol strings: multi-resolution
//! downsampling followed by equal-frequency quantisation.
//!
//! Downsampling uses non-overlapping mean pooling (plain decimation is
//! available behind [`DownsampleMethod`]). Bin edges are empirical quantiles
//! so that the symbol distribution is approximately uniform and compression
//! rates depend on temporal structure alone.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SymbolicError {
    #[error("sequence of length {len} is shorter than downsampling factor {factor}")]
    TooShortForFactor { len: usize, factor: usize },
    #[error("sequence of length {len} is shorter than alphabet size {lambda}")]
    TooShortForBinning { len: usize, lambda: usize },
    #[error("alphabet size must be >= 2, got {0}")]
    BadAlphabet(usize),
}

/// A quantised sequence over the alphabet `0..lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequence {
    pub symbols: Vec<u16>,
    pub lambda: usize,
}

impl SymbolSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Quantisation thresholds: `lambda - 1` non-decreasing edges.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub edges: Vec<f64>,
}

impl BinEdges {
    pub fn lambda(&self) -> usize {
        self.edges.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DownsampleMethod {
    /// Mean over non-overlapping windows.
    #[default]
    MeanPool,
    /// Keep every `factor`-th sample.
    Decimate,
}

/// Downsamples `x` by `factor` using non-overlapping window means; a trailing
/// partial window is dropped. `factor == 1` returns the input unchanged.
pub fn downsample(x: &[f64], factor: usize) -> Result<Vec<f64>, SymbolicError> {
    downsample_with(x, factor, DownsampleMethod::MeanPool)
}

pub fn downsample_with(
    x: &[f64],
    factor: usize,
    method: DownsampleMethod,
) -> Result<Vec<f64>, SymbolicError> {
    if x.len() < factor || factor == 0 {
        return Err(SymbolicError::TooShortForFactor {
            len: x.len(),
            factor,
        });
    }
    if factor == 1 {
        return Ok(x.to_vec());
    }
    let out = match method {
        DownsampleMethod::MeanPool => x
            .chunks_exact(factor)
            .map(|w| w.iter().sum::<f64>() / factor as f64)
            .collect(),
        DownsampleMethod::Decimate => x.iter().step_by(factor).take(x.len() / factor).copied().collect(),
    };
    Ok(out)
}

/// Equal-frequency bin edges: empirical quantiles of `x` at probabilities
/// `m / lambda`, where the quantile at probability `p` is the order statistic
/// with 1-based index `ceil(p * T)`.
pub fn equal_frequency_edges(x: &[f64], lambda: usize) -> Result<BinEdges, SymbolicError> {
    if lambda < 2 {
        return Err(SymbolicError::BadAlphabet(lambda));
    }
    if x.len() < lambda {
        return Err(SymbolicError::TooShortForBinning {
            len: x.len(),
            lambda,
        });
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in sequence"));
    let t = sorted.len();
    let edges = (1..lambda)
        .map(|m| {
            let p = m as f64 / lambda as f64;
            let idx = (p * t as f64).ceil() as usize; // 1-based
            sorted[idx - 1]
        })
        .collect();
    Ok(BinEdges { edges })
}

/// Maps each value to the number of edges strictly less than it; values equal
/// to an edge fall in the lower bin.
pub fn quantise(x: &[f64], edges: &BinEdges) -> SymbolSequence {
    let symbols = x
        .iter()
        .map(|&v| edges.edges.iter().filter(|&&e| e < v).count() as u16)
        .collect();
    SymbolSequence {
        symbols,
        lambda: edges.lambda(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn downsample_identity() {
        assert_eq!(downsample(&[1.0, 2.0, 3.0, 4.0], 1).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn downsample_window_means() {
        assert_eq!(downsample(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.5, 3.5]);
    }

    #[test]
    fn downsample_drops_partial_window() {
        assert_eq!(downsample(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap(), vec![1.5, 3.5]);
    }

    #[test]
    fn downsample_too_short() {
        assert_eq!(
            downsample(&[1.0], 2),
            Err(SymbolicError::TooShortForFactor { len: 1, factor: 2 })
        );
    }

    #[test]
    fn edges_exact_tertiles() {
        let x: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let e = equal_frequency_edges(&x, 3).unwrap();
        assert_eq!(e.edges, vec![3.0, 6.0]);
        let s = quantise(&x, &e);
        let mut counts = [0usize; 3];
        for &sym in &s.symbols {
            counts[sym as usize] += 1;
        }
        assert_eq!(counts, [3, 3, 3]);
    }

    #[test]
    fn edges_constant_sequence() {
        let e = equal_frequency_edges(&[5.0, 5.0, 5.0, 5.0], 3).unwrap();
        assert_eq!(e.edges, vec![5.0, 5.0]);
        let s = quantise(&[5.0, 5.0, 5.0, 5.0], &e);
        assert!(s.symbols.iter().all(|&v| v == 0));
    }

    #[test]
    fn edges_uniform_draws_balanced() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let x: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let e = equal_frequency_edges(&x, 4).unwrap();
        let s = quantise(&x, &e);
        let mut counts = [0i64; 4];
        for &sym in &s.symbols {
            counts[sym as usize] += 1;
        }
        for &c in &counts {
            assert!((c - 250).abs() <= 1, "bin counts {counts:?}");
        }
    }

    #[test]
    fn quantise_basic_and_tie_rule() {
        let e = BinEdges { edges: vec![3.0, 6.0] };
        assert_eq!(quantise(&[1.0, 4.0, 7.0], &e).symbols, vec![0, 1, 2]);
        // boundary values fall in the lower bin
        assert_eq!(quantise(&[3.0, 6.0], &e).symbols, vec![0, 1]);
    }

    #[test]
    fn quantise_matches_linear_scan_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let e = equal_frequency_edges(&x, 5).unwrap();
        let s = quantise(&x, &e);
        // independent oracle: linear scan over bins [lo, hi]
        for (i, &v) in x.iter().enumerate() {
            let mut bin = 0usize;
            while bin < e.edges.len() && v > e.edges[bin] {
                bin += 1;
            }
            assert_eq!(s.symbols[i] as usize, bin, "value {v}");
        }
    }

    proptest! {
        // equal-frequency binning depends only on ranks, so quantisation is
        // invariant under strictly monotone transforms
        #[test]
        fn monotone_transform_invariance(xs in proptest::collection::vec(-100.0f64..100.0, 10..80)) {
            let e1 = equal_frequency_edges(&xs, 4).unwrap();
            let s1 = quantise(&xs, &e1);
            let tx: Vec<f64> = xs.iter().map(|v| (v / 50.0).exp()).collect();
            let e2 = equal_frequency_edges(&tx, 4).unwrap();
            let s2 = quantise(&tx, &e2);
            prop_assert_eq!(s1.symbols, s2.symbols);
        }

        #[test]
        fn scaling_commutes_with_downsample(
            xs in proptest::collection::vec(-100.0f64..100.0, 16..64),
            scale in 0.01f64..100.0,
        ) {
            let d1 = downsample(&xs, 2).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|v| v * scale).collect();
            let d2 = downsample(&scaled, 2).unwrap();
            let s1 = quantise(&d1, &equal_frequency_edges(&d1, 3).unwrap());
            let s2 = quantise(&d2, &equal_frequency_edges(&d2, 3).unwrap());
            prop_assert_eq!(s1.symbols, s2.symbols);
        }

        #[test]
        fn symbol_distribution_near_uniform(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = 600usize;
            let lambda = 4usize;
            let xs: Vec<f64> = (0..t).map(|_| rng.gen::<f64>()).collect();
            let e = equal_frequency_edges(&xs, lambda).unwrap();
            let s = quantise(&xs, &e);
            let mut counts = vec![0f64; lambda];
            for &sym in &s.symbols {
                counts[sym as usize] += 1.0;
            }
            let tv: f64 = counts
                .iter()
                .map(|c| (c / t as f64 - 1.0 / lambda as f64).abs())
                .sum::<f64>()
                / 2.0;
            prop_assert!(tv <= lambda as f64 / t as f64);
        }
    }
}
