//! Performance statistics: Kendall tau-b, Spearman rho, balanced accuracy,
//! MAE/RMSE, and seeded bootstrap standard errors / percentile intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("paired sample length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("paired sample needs at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("statistic undefined: {0}")]
    Undefined(&'static str),
    #[error("confusion matrix row {0} is empty")]
    EmptyRow(usize),
    #[error("expected a five-point input, got {0} classes")]
    NotFivePoint(usize),
    #[error("bootstrap needs B >= 100, got {0}")]
    TooFewResamples(usize),
    #[error("statistic undefined on more than half of bootstrap resamples")]
    DegenerateBootstrap,
}

/// Predictions paired with annotations.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub q: Vec<f64>,
    pub o: Vec<f64>,
}

impl PairedSample {
    pub fn new(q: Vec<f64>, o: Vec<f64>) -> Result<Self, MetricsError> {
        if q.len() != o.len() {
            return Err(MetricsError::LengthMismatch(q.len(), o.len()));
        }
        if q.len() < 2 {
            return Err(MetricsError::TooShort(q.len()));
        }
        Ok(PairedSample { q, o })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Kendall's tau-b: (Mc - Md) / sqrt((Mp - Mq)(Mp - Mo)), with pairs tied in
/// both sequences counted in both tie terms. Quadratic enumeration below
/// `KNIGHT_THRESHOLD` observations, Knight's O(M log M) algorithm above;
/// the two are cross-validated in tests.
pub fn kendall_tau_b(s: &PairedSample) -> Result<f64, MetricsError> {
    if s.len() > KNIGHT_THRESHOLD {
        kendall_tau_b_knight(s)
    } else {
        kendall_tau_b_quadratic(s)
    }
}

const KNIGHT_THRESHOLD: usize = 5000;

pub fn kendall_tau_b_quadratic(s: &PairedSample) -> Result<f64, MetricsError> {
    let m = s.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut tied_q = 0i64;
    let mut tied_o = 0i64;
    for i in 0..m {
        for j in (i + 1)..m {
            let dq = s.q[i] - s.q[j];
            let dobs = s.o[i] - s.o[j];
            if dq == 0.0 {
                tied_q += 1;
            }
            if dobs == 0.0 {
                tied_o += 1;
            }
            if dq != 0.0 && dobs != 0.0 {
                if dq.signum() == dobs.signum() {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let pairs = (m * (m - 1) / 2) as i64;
    let denom = ((pairs - tied_q) as f64 * (pairs - tied_o) as f64).sqrt();
    if denom == 0.0 {
        return Err(MetricsError::Undefined("tau_b with an all-tied sequence"));
    }
    Ok((concordant - discordant) as f64 / denom)
}

pub fn kendall_tau_b_knight(s: &PairedSample) -> Result<f64, MetricsError> {
    let m = s.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| {
        s.q[a]
            .partial_cmp(&s.q[b])
            .unwrap()
            .then(s.o[a].partial_cmp(&s.o[b]).unwrap())
    });
    // tie counts from runs, as pair counts t*(t-1)/2
    let run_pairs = |vals: &mut dyn Iterator<Item = f64>| -> i64 {
        let mut total = 0i64;
        let mut prev = f64::NAN;
        let mut run = 0i64;
        for v in vals {
            if v == prev {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
                prev = v;
            }
        }
        total + run * (run - 1) / 2
    };
    let tied_q = run_pairs(&mut idx.iter().map(|&i| s.q[i]));
    let joint = {
        let mut total = 0i64;
        let mut run = 0i64;
        let mut prev = (f64::NAN, f64::NAN);
        for &i in &idx {
            let cur = (s.q[i], s.o[i]);
            if cur == prev {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
                prev = cur;
            }
        }
        total + run * (run - 1) / 2
    };
    let mut sorted_o: Vec<f64> = s.o.clone();
    sorted_o.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tied_o = run_pairs(&mut sorted_o.iter().copied());

    // merge sort on o (in q order) counting exchanges = discordant pairs
    let mut ys: Vec<f64> = idx.iter().map(|&i| s.o[i]).collect();
    let mut buf = ys.clone();
    let discordant = merge_count(&mut ys, &mut buf) as i64;

    let pairs = (m as i64) * (m as i64 - 1) / 2;
    // pairs untied in q and o: concordant + discordant
    let untied_both = pairs - tied_q - tied_o + joint;
    let concordant = untied_both - discordant;
    let denom = ((pairs - tied_q) as f64 * (pairs - tied_o) as f64).sqrt();
    if denom == 0.0 {
        return Err(MetricsError::Undefined("tau_b with an all-tied sequence"));
    }
    Ok((concordant - discordant) as f64 / denom)
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut inv = merge_count(left, &mut buf[..mid]) + merge_count(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[k] = left[i];
            i += 1;
        } else {
            buf[k] = right[j];
            inv += (left.len() - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < left.len() {
        buf[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        buf[k] = right[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&buf[..n]);
    inv
}

/// Midranks: average rank across tied values, 1-based.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of midranked sequences.
pub fn spearman_rho(s: &PairedSample) -> Result<f64, MetricsError> {
    let rq = midranks(&s.q);
    let ro = midranks(&s.o);
    pearson(&rq, &ro).ok_or(MetricsError::Undefined("rho_s with zero rank variance"))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Mean per-class recall of a confusion matrix with rows as true classes.
pub fn balanced_accuracy(confusion: &[Vec<u64>]) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for (i, row) in confusion.iter().enumerate() {
        let row_sum: u64 = row.iter().sum();
        if row_sum == 0 {
            return Err(MetricsError::EmptyRow(i));
        }
        total += row[i] as f64 / row_sum as f64;
    }
    Ok(total / confusion.len() as f64)
}

/// Builds a K x K confusion matrix from 1-based class labels; rows
/// correspond to observed (true) classes, columns to predictions.
pub fn build_confusion(pred: &[usize], obs: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &o) in pred.iter().zip(obs) {
        m[o - 1][p - 1] += 1;
    }
    m
}

pub fn mae_rmse(pred: &[f64], obs: &[f64]) -> Result<(f64, f64), MetricsError> {
    if pred.len() != obs.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), obs.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::TooShort(0));
    }
    let n = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, o) in pred.iter().zip(obs) {
        let e = p - o;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// Merges the five-point scale to four points: scores 1 and 2 collapse into
/// one class, 3/4/5 shift down. Requires a five-point input.
pub fn merge_scores_four_point(scores: &[usize], k: usize) -> Result<Vec<usize>, MetricsError> {
    if k != 5 {
        return Err(MetricsError::NotFivePoint(k));
    }
    Ok(scores
        .iter()
        .map(|&s| match s {
            1 | 2 => 1,
            other => other - 1,
        })
        .collect())
}

/// Merges a 5x5 confusion matrix to 4x4 by summing the first two rows and
/// the first two columns.
pub fn merge_confusion_four_point(confusion: &[Vec<u64>]) -> Result<Vec<Vec<u64>>, MetricsError> {
    if confusion.len() != 5 || confusion.iter().any(|r| r.len() != 5) {
        return Err(MetricsError::NotFivePoint(confusion.len()));
    }
    let mut out = vec![vec![0u64; 4]; 4];
    for i in 0..5 {
        for j in 0..5 {
            let oi = if i < 2 { 0 } else { i - 1 };
            let oj = if j < 2 { 0 } else { j - 1 };
            out[oi][oj] += confusion[i][j];
        }
    }
    Ok(out)
}

/// Class labels on the merged scale.
pub fn four_point_labels() -> Vec<String> {
    vec!["1;2".into(), "3".into(), "4".into(), "5".into()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    TauB,
    RhoS,
    Mae,
    Rmse,
    BalancedAccuracy,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::TauB => "tau_b",
            Statistic::RhoS => "rho_s",
            Statistic::Mae => "mae",
            Statistic::Rmse => "rmse",
            Statistic::BalancedAccuracy => "ba",
        }
    }

    pub fn evaluate(&self, s: &PairedSample) -> Result<f64, MetricsError> {
        match self {
            Statistic::TauB => kendall_tau_b(s),
            Statistic::RhoS => spearman_rho(s),
            Statistic::Mae => mae_rmse(&s.q, &s.o).map(|(mae, _)| mae),
            Statistic::Rmse => mae_rmse(&s.q, &s.o).map(|(_, rmse)| rmse),
            Statistic::BalancedAccuracy => {
                let k = s
                    .o
                    .iter()
                    .chain(s.q.iter())
                    .fold(0usize, |acc, &v| acc.max(v as usize));
                let pred: Vec<usize> = s.q.iter().map(|&v| v as usize).collect();
                let obs: Vec<usize> = s.o.iter().map(|&v| v as usize).collect();
                balanced_accuracy(&build_confusion(&pred, &obs, k))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub statistic: Statistic,
    pub point: f64,
    pub standard_error: f64,
    pub level: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub resamples: usize,
    pub seed: u64,
    pub redraws: usize,
}

/// Percentile bootstrap over index pairs resampled with replacement. Each
/// resample draws from an RNG seeded by (seed, resample index), so results
/// do not depend on evaluation order. Resamples on which the statistic is
/// undefined are redrawn; more than 50% undefined is an error.
pub fn bootstrap(
    stat: Statistic,
    s: &PairedSample,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult, MetricsError> {
    if b < 100 {
        return Err(MetricsError::TooFewResamples(b));
    }
    let point = stat.evaluate(s)?;
    let m = s.len();
    let mut stats = Vec::with_capacity(b);
    let mut redraws = 0usize;
    for rep in 0..b {
        let mut attempt = 0u64;
        let value = loop {
            let mix = (rep as u64)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(attempt.wrapping_mul(0x2545_F491_4F6C_DD1D));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix);
            let mut q = Vec::with_capacity(m);
            let mut o = Vec::with_capacity(m);
            for _ in 0..m {
                let i = rng.gen_range(0..m);
                q.push(s.q[i]);
                o.push(s.o[i]);
            }
            let resample = PairedSample { q, o };
            match stat.evaluate(&resample) {
                Ok(v) => break v,
                Err(_) => {
                    redraws += 1;
                    if redraws > b / 2 {
                        return Err(MetricsError::DegenerateBootstrap);
                    }
                    attempt += 1;
                }
            }
        };
        stats.push(value);
    }
    let mean = stats.iter().sum::<f64>() / b as f64;
    let var = stats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    let se = var.sqrt();
    let mut sorted = stats;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |p: f64| -> f64 {
        let idx = ((p * b as f64).ceil() as usize).clamp(1, b);
        sorted[idx - 1]
    };
    let alpha = 1.0 - level;
    Ok(BootstrapResult {
        statistic: stat,
        point,
        standard_error: se,
        level,
        ci_lo: quantile(alpha / 2.0),
        ci_hi: quantile(1.0 - alpha / 2.0),
        resamples: b,
        seed,
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Paper's web-sourced (rows) versus controlled-condition (columns)
    /// similarity-rating confusion matrix.
    pub fn rating_agreement_confusion() -> Vec<Vec<u64>> {
        vec![
            vec![64, 34, 17, 10, 0],
            vec![55, 44, 18, 14, 4],
            vec![26, 41, 26, 25, 5],
            vec![16, 30, 16, 24, 7],
            vec![6, 9, 5, 8, 5],
        ]
    }

    fn sample(q: Vec<f64>, o: Vec<f64>) -> PairedSample {
        PairedSample::new(q, o).unwrap()
    }

    #[test]
    fn tau_perfect_concordance_and_discordance() {
        assert_eq!(kendall_tau_b(&sample(vec![1., 2., 3.], vec![1., 2., 3.])).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&sample(vec![1., 2., 3.], vec![3., 2., 1.])).unwrap(), -1.0);
    }

    #[test]
    fn tau_hand_case_with_ties() {
        // Mc=4, Md=0, Mq=1, Mo=1 -> 4/5
        let t = kendall_tau_b(&sample(vec![1., 2., 2., 3.], vec![1., 2., 3., 3.])).unwrap();
        assert!((t - 0.8).abs() < 1e-15, "tau {t}");
    }

    #[test]
    fn tau_all_tied_is_undefined() {
        assert!(kendall_tau_b(&sample(vec![1., 1., 1.], vec![1., 2., 3.])).is_err());
    }

    /// Exhaustive O(M^2) oracle written directly from the pair definitions.
    fn tau_oracle(q: &[f64], o: &[f64]) -> f64 {
        let m = q.len();
        let (mut mc, mut md, mut mq, mut mo) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..m {
            for j in (i + 1)..m {
                if q[i] == q[j] {
                    mq += 1.0;
                }
                if o[i] == o[j] {
                    mo += 1.0;
                }
                if (q[i] > q[j] && o[i] > o[j]) || (q[i] < q[j] && o[i] < o[j]) {
                    mc += 1.0;
                } else if (q[i] > q[j] && o[i] < o[j]) || (q[i] < q[j] && o[i] > o[j]) {
                    md += 1.0;
                }
            }
        }
        let mp = (m * (m - 1)) as f64 / 2.0;
        (mc - md) / ((mp - mq) * (mp - mo)).sqrt()
    }

    #[test]
    fn tau_matches_oracle_on_random_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.gen_range(5..200);
            let q: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=5) as f64).collect();
            let o: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=5) as f64).collect();
            let s = sample(q.clone(), o.clone());
            let got = kendall_tau_b(&s).unwrap();
            assert!((got - tau_oracle(&q, &o)).abs() < 1e-12);
        }
    }

    #[test]
    fn knight_matches_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let m = rng.gen_range(10..400);
            let q: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=7) as f64).collect();
            let o: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let s = sample(q, o);
            let a = kendall_tau_b_quadratic(&s).unwrap();
            let b = kendall_tau_b_knight(&s).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman_rho(&sample(vec![1., 2., 3.], vec![1., 2., 3.])).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&sample(vec![1., 2., 3.], vec![6., 5., 4.])).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_tied_fixture_matches_hand_computation() {
        // midranks: q=(1,2.5,2.5,4), o=(1,3,2,4); Pearson of those
        let got = spearman_rho(&sample(vec![1., 2., 2., 4.], vec![1., 3., 2., 4.])).unwrap();
        let rq = [1.0, 2.5, 2.5, 4.0];
        let ro = [1.0, 3.0, 2.0, 4.0];
        let expect = super::pearson(&rq, &ro).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q: Vec<f64> = (0..60).map(|_| rng.gen_range(1..=5) as f64).collect();
        let o: Vec<f64> = (0..60).map(|_| rng.gen_range(1..=5) as f64).collect();
        let q_t: Vec<f64> = q.iter().map(|v| v.exp()).collect();
        let s1 = sample(q.clone(), o.clone());
        let s2 = sample(q_t, o);
        assert!((kendall_tau_b(&s1).unwrap() - kendall_tau_b(&s2).unwrap()).abs() < 1e-12);
        assert!((spearman_rho(&s1).unwrap() - spearman_rho(&s2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ba_paper_confusion_five_point() {
        let ba = balanced_accuracy(&rating_agreement_confusion()).unwrap();
        assert!((ba - 0.292).abs() <= 0.001, "BA {ba}");
    }

    #[test]
    fn ba_paper_confusion_merged_four_point() {
        let merged = merge_confusion_four_point(&rating_agreement_confusion()).unwrap();
        let ba = balanced_accuracy(&merged).unwrap();
        assert!((ba - 0.345).abs() <= 0.001, "BA {ba}");
    }

    #[test]
    fn ba_identity_matrix() {
        let m: Vec<Vec<u64>> = (0..4).map(|i| (0..4).map(|j| u64::from(i == j) * 7).collect()).collect();
        assert_eq!(balanced_accuracy(&m).unwrap(), 1.0);
    }

    #[test]
    fn merge_scores_and_contract() {
        assert_eq!(merge_scores_four_point(&[1, 2, 3], 5).unwrap(), vec![1, 1, 2]);
        assert!(merge_scores_four_point(&[1, 2], 4).is_err());
        let merged = merge_confusion_four_point(&rating_agreement_confusion()).unwrap();
        assert!(merge_confusion_four_point(&merged).is_err());
    }

    #[test]
    fn mae_rmse_cases() {
        assert_eq!(mae_rmse(&[1., 2.], &[1., 2.]).unwrap(), (0.0, 0.0));
        assert_eq!(mae_rmse(&[0., 0.], &[3., -3.]).unwrap(), (3.0, 3.0));
        let (mae, rmse) = mae_rmse(&[1., 2., 2., 5.], &[0., 0., 0., 0.]).unwrap();
        assert!((mae - 2.5).abs() < 1e-15);
        assert!((rmse - (34.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_constant_errors_zero_se() {
        let s = sample(vec![2.0; 50], vec![1.0; 50]);
        let r = bootstrap(Statistic::Mae, &s, 200, 0.95, 1).unwrap();
        assert_eq!(r.standard_error, 0.0);
        assert_eq!(r.point, 1.0);
    }

    #[test]
    fn bootstrap_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q: Vec<f64> = (0..100).map(|_| rng.gen_range(1..=5) as f64).collect();
        let o: Vec<f64> = (0..100).map(|_| rng.gen_range(1..=5) as f64).collect();
        let s = sample(q, o);
        let a = bootstrap(Statistic::TauB, &s, 2000, 0.95, 77).unwrap();
        let b = bootstrap(Statistic::TauB, &s, 2000, 0.95, 77).unwrap();
        assert_eq!(a.point.to_bits(), b.point.to_bits());
        assert_eq!(a.standard_error.to_bits(), b.standard_error.to_bits());
        assert_eq!(a.ci_lo.to_bits(), b.ci_lo.to_bits());
        assert_eq!(a.ci_hi.to_bits(), b.ci_hi.to_bits());
    }

    #[test]
    fn bootstrap_se_close_to_monte_carlo_truth() {
        // ground truth: SE of tau_b across 50 fresh samples from the same process
        let gen_sample = |seed: u64| -> PairedSample {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut q = Vec::new();
            let mut o = Vec::new();
            for _ in 0..500 {
                let latent: f64 = rng.gen_range(0.0..1.0);
                let noise: f64 = rng.gen_range(-0.35..0.35);
                q.push((latent * 5.0).ceil().clamp(1.0, 5.0));
                o.push((((latent + noise) * 5.0).ceil()).clamp(1.0, 5.0));
            }
            sample(q, o)
        };
        let fresh: Vec<f64> = (0..50)
            .map(|i| kendall_tau_b(&gen_sample(1000 + i)).unwrap())
            .collect();
        let mean = fresh.iter().sum::<f64>() / fresh.len() as f64;
        let truth =
            (fresh.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (fresh.len() as f64 - 1.0)).sqrt();
        let r = bootstrap(Statistic::TauB, &gen_sample(42), 2000, 0.95, 9).unwrap();
        assert!(
            (r.standard_error - truth).abs() / truth < 0.15,
            "bootstrap SE {} vs MC truth {truth}",
            r.standard_error
        );
    }

    proptest! {
        #[test]
        fn tau_and_rho_in_range(
            q in proptest::collection::vec(1.0f64..6.0, 5..60),
            o in proptest::collection::vec(1.0f64..6.0, 5..60),
        ) {
            let m = q.len().min(o.len());
            let q: Vec<f64> = q[..m].iter().map(|v| v.floor()).collect();
            let o: Vec<f64> = o[..m].iter().map(|v| v.floor()).collect();
            let s = PairedSample::new(q, o).unwrap();
            if let Ok(t) = kendall_tau_b(&s) {
                prop_assert!((-1.0..=1.0).contains(&t));
            }
            if let Ok(r) = spearman_rho(&s) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }

        #[test]
        fn rmse_at_least_mae(
            pred in proptest::collection::vec(-10.0f64..10.0, 2..50),
            obs in proptest::collection::vec(-10.0f64..10.0, 2..50),
        ) {
            let m = pred.len().min(obs.len());
            let (mae, rmse) = mae_rmse(&pred[..m], &obs[..m]).unwrap();
            prop_assert!(rmse >= mae - 1e-12);
        }

        // no-ties case reduces to (Mc - Md) / Mp
        #[test]
        fn tau_no_ties_simple_form(perm in Just(()).prop_flat_map(|_| {
            proptest::collection::vec(0.0f64..1.0, 8..40)
        })) {
            let n = perm.len();
            let o: Vec<f64> = (0..n).map(|i| i as f64).collect();
            // distinct values with overwhelming probability
            let s = PairedSample::new(perm.clone(), o.clone()).unwrap();
            let tau = kendall_tau_b(&s).unwrap();
            let mut diff = 0i64;
            for i in 0..n {
                for j in (i+1)..n {
                    let c = (perm[i] - perm[j]) * (o[i] - o[j]);
                    diff += if c > 0.0 { 1 } else if c < 0.0 { -1 } else { 0 };
                }
            }
            let mp = (n * (n - 1) / 2) as f64;
            prop_assert!((tau - diff as f64 / mp).abs() < 1e-12);
        }
    }
}
