//! End-to-end experiment commands backing the CLI: descriptor extraction,
//! the similarity-rating experiment, the year-prediction experiment, and
//! synthetic corpus generation.
//!
//! Each command has an in-memory core (`run_*`) that the file-writing
//! `cmd_*` wrapper composes with dataset loading and report serialisation,
//! so large experiments can be driven programmatically without touching
//! disk. All file outputs are byte-deterministic for a fixed config and
//! seed; wall-clock runtime is reported on stderr only.

use crate::data::{self, DataError, Dataset};
use crate::descriptors::{self, DescriptorError, DescriptorVector};
use crate::distances::{self, DescriptorStore, DistanceError, DistanceOptions, DistanceTable, KldLog};
use crate::metrics::{self, BootstrapResult, MetricsError, PairedSample, Statistic};
use crate::regress::{
    self, FitKind, LinearModel, MultinomialModel, Protocol, Provenance, RegressError, ScaleMode, TuneCriterion, TuneTrace,
};
use crate::synth::{self, SynthError, SynthParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("similarity experiment needs at least {need} ratings, got {got}")]
    InsufficientRatings { need: usize, got: usize },
    #[error("year experiment needs at least {need} usable tracks, got {got}")]
    InsufficientTracks { need: usize, got: usize },
}

impl PipelineError {
    /// CLI exit code: 2 for convergence failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Regress(RegressError::NonConvergence { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingScale {
    Five,
    Four,
}

impl RatingScale {
    pub fn k(self) -> usize {
        match self {
            RatingScale::Five => 5,
            RatingScale::Four => 4,
        }
    }
}

/// Which descriptor families feed the year regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorSubset {
    Fcd,
    Fmd,
    Both,
}

impl DescriptorSubset {
    fn admits(self, name: &str) -> bool {
        match self {
            DescriptorSubset::Fcd => name.starts_with("fcd:"),
            DescriptorSubset::Fmd => name.starts_with("fmd:"),
            DescriptorSubset::Both => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads for descriptor/distance fan-out; 0 = rayon default.
    pub jobs: usize,
    /// Distance set 1-6.
    pub set: u8,
    pub lambdas: Vec<usize>,
    pub factors: Vec<usize>,
    pub order: usize,
    pub scale: RatingScale,
    pub statistic: Statistic,
    pub train_fraction: f64,
    /// Inner holdout train share used when tuning eta for similarity.
    pub inner_train_fraction: f64,
    pub nu_grid: Vec<f64>,
    pub kfolds: usize,
    pub bootstrap_b: usize,
    pub bootstrap_level: f64,
    pub window_days: i64,
    pub year_descriptors: DescriptorSubset,
    /// Prediction clamp range; None = observed train-year range.
    pub clamp: Option<(f64, f64)>,
    pub impute_k: usize,
    pub embed_dim: usize,
    pub kld_log: KldLog,
    pub symmetrise: bool,
    pub synth: SynthParams,
    /// Raw key=value pairs echoed into reports.
    pub echo: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            jobs: 0,
            set: 6,
            lambdas: descriptors::DEFAULT_LAMBDAS.to_vec(),
            factors: descriptors::DEFAULT_FACTORS.to_vec(),
            order: descriptors::DEFAULT_PPM_ORDER,
            scale: RatingScale::Five,
            statistic: Statistic::TauB,
            train_fraction: 0.6,
            inner_train_fraction: 0.6,
            nu_grid: vec![0.5],
            kfolds: 5,
            bootstrap_b: 1000,
            bootstrap_level: 0.95,
            window_days: 0,
            year_descriptors: DescriptorSubset::Both,
            clamp: None,
            impute_k: 5,
            embed_dim: distances::DEFAULT_EMBED_DIM,
            kld_log: KldLog::Plus1,
            symmetrise: false,
            synth: SynthParams::default(),
            echo: BTreeMap::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| PipelineError::Config(format!("{key}: bad value '{value}': {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v)).collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = ExperimentConfig::default();
        let base = path.parent().unwrap_or(Path::new("."));
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            cfg.apply(key.trim(), value.trim(), base)?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str, base: &Path) -> Result<(), PipelineError> {
        // the output directory names the report's own location and would
        // make otherwise-identical runs into different directories differ
        if key != "out" {
            self.echo.insert(key.to_string(), value.to_string());
        }
        match key {
            "manifest" => self.manifest = Some(base.join(value)),
            "out" => self.out_dir = base.join(value),
            "seed" => self.seed = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "set" => self.set = parse(key, value)?,
            "lambdas" => self.lambdas = parse_list(key, value)?,
            "factors" => self.factors = parse_list(key, value)?,
            "order" => self.order = parse(key, value)?,
            "scale" => {
                self.scale = match value {
                    "five" => RatingScale::Five,
                    "four" => RatingScale::Four,
                    other => {
                        return Err(PipelineError::Config(format!("scale: unknown '{other}'")))
                    }
                }
            }
            "statistic" => {
                self.statistic = match value {
                    "tau_b" => Statistic::TauB,
                    "rho_s" => Statistic::RhoS,
                    "ba" => Statistic::BalancedAccuracy,
                    other => {
                        return Err(PipelineError::Config(format!("statistic: unknown '{other}'")))
                    }
                }
            }
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "inner_train_fraction" => self.inner_train_fraction = parse(key, value)?,
            "nu" => self.nu_grid = vec![parse(key, value)?],
            "nu_grid" => self.nu_grid = parse_list(key, value)?,
            "kfolds" => self.kfolds = parse(key, value)?,
            "bootstrap" => self.bootstrap_b = parse(key, value)?,
            "bootstrap_level" => self.bootstrap_level = parse(key, value)?,
            "window_days" => self.window_days = parse(key, value)?,
            "year_descriptors" => {
                self.year_descriptors = match value {
                    "fcd" => DescriptorSubset::Fcd,
                    "fmd" => DescriptorSubset::Fmd,
                    "both" => DescriptorSubset::Both,
                    other => {
                        return Err(PipelineError::Config(format!(
                            "year_descriptors: unknown '{other}'"
                        )))
                    }
                }
            }
            "clamp" => {
                let parts: Vec<f64> = parse_list(key, value)?;
                if parts.len() != 2 || parts[0] >= parts[1] {
                    return Err(PipelineError::Config("clamp: expected lo,hi".into()));
                }
                self.clamp = Some((parts[0], parts[1]));
            }
            "impute_k" => self.impute_k = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "kld_log" => {
                self.kld_log = match value {
                    "plain" => KldLog::Plain,
                    "plus1" => KldLog::Plus1,
                    other => {
                        return Err(PipelineError::Config(format!("kld_log: unknown '{other}'")))
                    }
                }
            }
            "symmetrise" => self.symmetrise = parse(key, value)?,
            "synth.n_tracks" => self.synth.n_tracks = parse(key, value)?,
            "synth.frames" => self.synth.frames = parse(key, value)?,
            "synth.frame_rate" => self.synth.frame_rate = parse(key, value)?,
            "synth.n_ratings" => self.synth.n_ratings = parse(key, value)?,
            "synth.n_artists" => self.synth.n_artists = parse(key, value)?,
            "synth.correlation" => self.synth.correlation = parse(key, value)?,
            "synth.style_amp" => self.synth.style_amp = parse(key, value)?,
            "synth.year_amp" => self.synth.year_amp = parse(key, value)?,
            "synth.moment_style" => self.synth.moment_style = parse(key, value)?,
            "synth.moment_year" => self.synth.moment_year = parse(key, value)?,
            "synth.latent_noise" => self.synth.latent_noise = parse(key, value)?,
            "synth.rating_noise" => self.synth.rating_noise = parse(key, value)?,
            "synth.year_lo" => self.synth.year_lo = parse(key, value)?,
            "synth.year_hi" => self.synth.year_hi = parse(key, value)?,
            other => return Err(PipelineError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(1..=6).contains(&self.set) {
            return Err(PipelineError::Config(format!("set must be 1-6, got {}", self.set)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(PipelineError::Config("train_fraction must be in (0,1)".into()));
        }
        if self.nu_grid.is_empty() || self.nu_grid.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(PipelineError::Config("nu values must lie in [0,1]".into()));
        }
        if self.lambdas.is_empty() || self.factors.is_empty() {
            return Err(PipelineError::Config("lambdas and factors must be non-empty".into()));
        }
        Ok(())
    }

    fn distance_options(&self) -> DistanceOptions {
        DistanceOptions {
            factors: self.factors.clone(),
            embed_dim: self.embed_dim,
            kld_log: self.kld_log,
            symmetrise: self.symmetrise,
        }
    }

    fn require_manifest(&self) -> Result<&Path, PipelineError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| PipelineError::Config("manifest is required for this command".into()))
    }
}

/// Builds a rayon pool with `jobs` threads (0 = default) and runs `f` in it.
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(f)
}

// ---------------------------------------------------------------------------
// descriptors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SkippedTrack {
    pub track_id: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct DescriptorRun {
    pub vectors: Vec<DescriptorVector>,
    pub skipped: Vec<SkippedTrack>,
    /// (feature, factor) names unavailable for some track (too short).
    pub missing: Vec<(String, String)>,
}

/// Computes FCD and FMD vectors for every track, in sorted track order.
/// A failing track is skipped and reported rather than aborting the corpus.
pub fn compute_descriptors(ds: &Dataset, cfg: &ExperimentConfig) -> DescriptorRun {
    let mut ids = ds.track_ids();
    ids.sort();
    let per_track: Vec<(String, Result<(descriptors::FcdOutput, Vec<DescriptorVector>), DescriptorError>)> =
        ids.par_iter()
            .map(|id| {
                let r = descriptors::compute_fcd(id, ds, &cfg.lambdas, &cfg.factors, cfg.order)
                    .and_then(|fcd| descriptors::compute_fmd(id, ds).map(|fmd| (fcd, fmd)));
                (id.clone(), r)
            })
            .collect();
    let mut run = DescriptorRun::default();
    for (id, result) in per_track {
        match result {
            Ok((fcd, fmd)) => {
                for name in fcd.missing {
                    run.missing.push((id.clone(), name));
                }
                run.vectors.extend(fcd.vectors);
                run.vectors.extend(fmd);
            }
            Err(e) => run.skipped.push(SkippedTrack { track_id: id, reason: e.to_string() }),
        }
    }
    run
}

/// CSV rendering: one row per descriptor component, 9 significant digits.
pub fn descriptors_csv(vectors: &[DescriptorVector]) -> String {
    let mut out = String::from("track_id,name,component,value\n");
    for v in vectors {
        for (c, value) in v.values.iter().enumerate() {
            out.push_str(&format!("{},{},{},{:.9e}\n", v.track_id, v.name, c, value));
        }
    }
    out
}

fn write_out(path: &Path, body: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, body).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let body = serde_json::to_string_pretty(value).expect("serialisable report");
    write_out(path, &(body + "\n"))
}

pub fn cmd_descriptors(cfg: &ExperimentConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let (ds, _report) = data::load_dataset(cfg.require_manifest()?)?;
    let run = with_pool(cfg.jobs, || compute_descriptors(&ds, cfg));
    let path = cfg.out_dir.join("descriptors.csv");
    write_out(&path, &descriptors_csv(&run.vectors))?;
    #[derive(Serialize)]
    struct DescriptorsReport<'a> {
        config: &'a BTreeMap<String, String>,
        tracks: usize,
        vectors: usize,
        skipped: &'a [SkippedTrack],
        missing: &'a [(String, String)],
    }
    write_json(
        &cfg.out_dir.join("report.json"),
        &DescriptorsReport {
            config: &cfg.echo,
            tracks: ds.tracks.len(),
            vectors: run.vectors.len(),
            skipped: &run.skipped,
            missing: &run.missing,
        },
    )?;
    for s in &run.skipped {
        eprintln!("skipped track {}: {}", s.track_id, s.reason);
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// similarity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct StatRow {
    pub name: &'static str,
    pub value: f64,
    pub standard_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl From<BootstrapResult> for StatRow {
    fn from(b: BootstrapResult) -> Self {
        StatRow {
            name: b.statistic.name(),
            value: b.point,
            standard_error: b.standard_error,
            ci_lo: b.ci_lo,
            ci_hi: b.ci_hi,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    /// Normalised magnitude; the column sums to one.
    pub weight: f64,
}

/// Sums |coefficients| across the K class rows and normalises to sum 1.
/// An all-zero model yields uniform weights.
pub fn normalised_coefficients(names: &[String], beta_rows: &[Vec<f64>]) -> Vec<CoefficientRow> {
    let p = names.len();
    let mut mags = vec![0.0f64; p];
    for row in beta_rows {
        for (m, b) in mags.iter_mut().zip(row) {
            *m += b.abs();
        }
    }
    let total: f64 = mags.iter().sum();
    if total <= 0.0 {
        mags = vec![1.0 / p as f64; p];
    } else {
        for m in &mut mags {
            *m /= total;
        }
    }
    names
        .iter()
        .zip(mags)
        .map(|(n, w)| CoefficientRow { name: n.clone(), weight: w })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct SimilarityReport {
    pub config: BTreeMap<String, String>,
    pub set: u8,
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub statistics: Vec<StatRow>,
    pub confusion: Vec<Vec<u64>>,
    pub labels: Vec<String>,
    pub coefficients: Vec<CoefficientRow>,
    pub tune: TuneTrace,
    pub nu: f64,
}

pub struct SimilarityOutcome {
    pub report: SimilarityReport,
    pub model: MultinomialModel,
    pub train_table: DistanceTable,
    pub test_table: DistanceTable,
    pub predictions: Vec<usize>,
    pub observed: Vec<usize>,
}

fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let cut = cut.clamp(1, n - 1);
    let (tr, te) = idx.split_at(cut);
    (tr.to_vec(), te.to_vec())
}

/// Picks the best (nu, eta) pair over the configured nu grid; each nu is
/// tuned along its own eta path and the winners are compared on the same
/// validation criterion. Ties break toward the earlier nu.
fn tune_over_nu(
    kind: FitKind,
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &ExperimentConfig,
    protocol: Protocol,
    criterion: TuneCriterion,
) -> Result<(f64, TuneTrace), PipelineError> {
    let mut best: Option<(f64, TuneTrace)> = None;
    for &nu in &cfg.nu_grid {
        let eta_max = match kind {
            FitKind::Multinomial { k } => {
                let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
                regress::eta_max_multinomial(x, &labels, k, nu)
            }
            FitKind::Linear => regress::eta_max_linear(x, y, nu),
        };
        let grid = regress::eta_grid(eta_max);
        let trace = regress::tune(kind, x, y, nu, &grid, protocol, criterion, cfg.seed)?;
        let score = trace.scores[trace.chosen_index];
        let better = match &best {
            None => true,
            Some((_, b)) => match criterion {
                TuneCriterion::Maximise(_) => score > b.scores[b.chosen_index],
                TuneCriterion::MinimiseMse => score < b.scores[b.chosen_index],
            },
        };
        if better {
            best = Some((nu, trace));
        }
    }
    Ok(best.expect("non-empty nu grid"))
}

/// The similarity-rating experiment on an in-memory dataset and descriptor
/// store: seeded 60/40 rating split, distance-set features, train-side
/// standardisation, eta/nu tuning by inner holdout, multinomial elastic-net
/// fit, and test-set evaluation with bootstrap standard errors.
pub fn run_similarity(
    ds: &Dataset,
    store: &DescriptorStore,
    cfg: &ExperimentConfig,
) -> Result<SimilarityOutcome, PipelineError> {
    cfg.validate()?;
    let k = cfg.scale.k();
    let need = 10 * k;
    if ds.ratings.len() < need {
        return Err(PipelineError::InsufficientRatings { need, got: ds.ratings.len() });
    }
    let scores: Vec<usize> = match cfg.scale {
        RatingScale::Five => ds.ratings.iter().map(|r| r.score).collect(),
        RatingScale::Four => {
            let raw: Vec<usize> = ds.ratings.iter().map(|r| r.score).collect();
            metrics::merge_scores_four_point(&raw, 5)?
        }
    };
    let (tr, te) = split_indices(ds.ratings.len(), cfg.train_fraction, cfg.seed);
    let pair_of = |i: usize| {
        (
            ds.ratings[i].track_i.clone(),
            ds.ratings[i].track_j.clone(),
        )
    };
    let train_pairs: Vec<(String, String)> = tr.iter().map(|&i| pair_of(i)).collect();
    let test_pairs: Vec<(String, String)> = te.iter().map(|&i| pair_of(i)).collect();
    let opts = cfg.distance_options();
    let train_table = distances::distance_table(ds, store, &train_pairs, cfg.set, &opts)?;
    let test_table = distances::distance_table(ds, store, &test_pairs, cfg.set, &opts)?;

    let stats = regress::standardise_fit(&train_table.rows, ScaleMode::Std, Provenance::Train);
    let x_tr = regress::standardise_apply(&train_table.rows, &stats);
    let y_tr_labels: Vec<usize> = tr.iter().map(|&i| scores[i]).collect();
    let y_tr: Vec<f64> = y_tr_labels.iter().map(|&v| v as f64).collect();

    let (nu, trace) = tune_over_nu(
        FitKind::Multinomial { k },
        &x_tr,
        &y_tr,
        cfg,
        Protocol::Holdout { train_fraction: cfg.inner_train_fraction },
        TuneCriterion::Maximise(cfg.statistic),
    )?;
    let mut model = regress::fit_multinomial_enr(&x_tr, &y_tr_labels, k, trace.chosen_eta, nu, None)?;
    model.stats = Some(stats);

    let predictions: Vec<usize> = test_table
        .rows
        .iter()
        .map(|row| regress::predict_rating(&model, row))
        .collect::<Result<_, _>>()?;
    let observed: Vec<usize> = te.iter().map(|&i| scores[i]).collect();
    let sample = PairedSample::new(
        predictions.iter().map(|&v| v as f64).collect(),
        observed.iter().map(|&v| v as f64).collect(),
    )?;
    let statistics: Vec<StatRow> = [Statistic::TauB, Statistic::RhoS, Statistic::BalancedAccuracy]
        .into_iter()
        .map(|stat| {
            metrics::bootstrap(stat, &sample, cfg.bootstrap_b, cfg.bootstrap_level, cfg.seed)
                .map(StatRow::from)
        })
        .collect::<Result<_, _>>()?;
    let confusion = metrics::build_confusion(&predictions, &observed, k);
    let labels = match cfg.scale {
        RatingScale::Five => (1..=5).map(|v| v.to_string()).collect(),
        RatingScale::Four => metrics::four_point_labels(),
    };
    let coefficients = normalised_coefficients(&train_table.columns, &model.beta);
    let report = SimilarityReport {
        config: cfg.echo.clone(),
        set: cfg.set,
        k,
        n_train: train_pairs.len(),
        n_test: test_pairs.len(),
        statistics,
        confusion,
        labels,
        coefficients,
        tune: trace,
        nu,
    };
    Ok(SimilarityOutcome { report, model, train_table, test_table, predictions, observed })
}

fn distances_csv(train: &DistanceTable, test: &DistanceTable) -> String {
    let mut out = String::from("track_i,track_j,split,");
    out.push_str(&train.columns.join(","));
    out.push('\n');
    for (split, table) in [("train", train), ("test", test)] {
        for ((i, j), row) in table.pairs.iter().zip(&table.rows) {
            out.push_str(&format!("{i},{j},{split}"));
            for v in row {
                out.push_str(&format!(",{v:.9e}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn cmd_similarity(cfg: &ExperimentConfig) -> Result<SimilarityReport, PipelineError> {
    cfg.validate()?;
    let (ds, _report) = data::load_dataset(cfg.require_manifest()?)?;
    let outcome = with_pool(cfg.jobs, || -> Result<SimilarityOutcome, PipelineError> {
        let run = compute_descriptors(&ds, cfg);
        let store = DescriptorStore::from_vectors(run.vectors);
        run_similarity(&ds, &store, cfg)
    })?;
    write_out(
        &cfg.out_dir.join("distances.csv"),
        &distances_csv(&outcome.train_table, &outcome.test_table),
    )?;
    write_json(&cfg.out_dir.join("model.json"), &outcome.model)?;
    #[derive(Serialize)]
    struct MetricsOut<'a> {
        statistics: &'a [StatRow],
        confusion: &'a [Vec<u64>],
        labels: &'a [String],
    }
    write_json(
        &cfg.out_dir.join("metrics.json"),
        &MetricsOut {
            statistics: &outcome.report.statistics,
            confusion: &outcome.report.confusion,
            labels: &outcome.report.labels,
        },
    )?;
    write_json(&cfg.out_dir.join("report.json"), &outcome.report)?;
    Ok(outcome.report)
}

// ---------------------------------------------------------------------------
// year prediction
// ---------------------------------------------------------------------------

/// Per-track descriptor design matrix: rows follow `track_ids` order,
/// columns are the admitted descriptor components sorted by name. Tracks
/// missing any column are dropped (reported in the second return).
pub fn descriptor_matrix(
    vectors: &[DescriptorVector],
    track_ids: &[String],
    subset: DescriptorSubset,
) -> (Vec<String>, Vec<Vec<f64>>, Vec<String>, Vec<String>) {
    let mut by_track: BTreeMap<&str, BTreeMap<&str, &DescriptorVector>> = BTreeMap::new();
    for v in vectors {
        if subset.admits(&v.name) {
            by_track.entry(&v.track_id).or_default().insert(&v.name, v);
        }
    }
    // column layout: union of descriptor names over all tracks
    let mut col_names: BTreeMap<&str, usize> = BTreeMap::new();
    for descs in by_track.values() {
        for (&name, v) in descs {
            let e = col_names.entry(name).or_insert(v.values.len());
            *e = (*e).max(v.values.len());
        }
    }
    let mut columns = Vec::new();
    for (&name, &len) in &col_names {
        for c in 0..len {
            columns.push(format!("{name}:{c}"));
        }
    }
    let mut kept = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    'tracks: for id in track_ids {
        let Some(descs) = by_track.get(id.as_str()) else {
            dropped.push(id.clone());
            continue;
        };
        let mut row = Vec::with_capacity(columns.len());
        for (&name, &len) in &col_names {
            match descs.get(name) {
                Some(v) if v.values.len() == len => row.extend(&v.values),
                _ => {
                    dropped.push(id.clone());
                    continue 'tracks;
                }
            }
        }
        kept.push(id.clone());
        rows.push(row);
    }
    (kept, rows, columns, dropped)
}

#[derive(Debug, Serialize)]
pub struct YearReport {
    pub config: BTreeMap<String, String>,
    pub descriptors: DescriptorSubset,
    pub n_train: usize,
    pub n_test: usize,
    pub window_days: i64,
    pub statistics: Vec<StatRow>,
    /// MAE of always predicting the training-mean year.
    pub baseline_mae: f64,
    pub coefficients: Vec<CoefficientRow>,
    pub tune: TuneTrace,
    pub nu: f64,
    pub clamp: (f64, f64),
    pub dropped_tracks: Vec<String>,
}

pub struct YearOutcome {
    pub report: YearReport,
    pub model: LinearModel,
    pub predictions: Vec<f64>,
    pub observed: Vec<f64>,
}

/// The year-prediction experiment on prebuilt design matrices: train-side
/// outlier imputation and standardisation, optional window averaging, eta/nu
/// tuning by k-fold cross-validated MSE, linear elastic-net fit, clamped
/// predictions, and MAE/RMSE with bootstrap standard errors.
pub fn run_year_from_matrices(
    x_train: &[Vec<f64>],
    dates_train: &[f64],
    x_test: &[Vec<f64>],
    dates_test: &[f64],
    columns: &[String],
    cfg: &ExperimentConfig,
    dropped: Vec<String>,
) -> Result<YearOutcome, PipelineError> {
    cfg.validate()?;
    if x_train.len() < 2 * cfg.kfolds || x_test.is_empty() {
        return Err(PipelineError::InsufficientTracks {
            need: 2 * cfg.kfolds,
            got: x_train.len().min(x_test.len()),
        });
    }
    let imputed = data::impute_outliers(x_train, cfg.impute_k)?;
    let (train_rows, train_y) = if cfg.window_days > 0 {
        regress::window_group(dates_train, &imputed.matrix, cfg.window_days)?
    } else {
        (imputed.matrix, dates_train.to_vec())
    };
    let (test_rows, test_y) = if cfg.window_days > 0 {
        regress::window_group(dates_test, x_test, cfg.window_days)?
    } else {
        (x_test.to_vec(), dates_test.to_vec())
    };

    let stats = regress::standardise_fit(&train_rows, ScaleMode::Std, Provenance::Train);
    let x_tr = regress::standardise_apply(&train_rows, &stats);
    let (nu, trace) = tune_over_nu(
        FitKind::Linear,
        &x_tr,
        &train_y,
        cfg,
        Protocol::KFold { folds: cfg.kfolds },
        TuneCriterion::MinimiseMse,
    )?;
    let mut model = regress::fit_linear_enr(&x_tr, &train_y, trace.chosen_eta, nu, None)?;
    model.stats = Some(stats);
    model.clamp = cfg.clamp.unwrap_or_else(|| {
        let lo = train_y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = train_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });

    let predictions: Vec<f64> = test_rows
        .iter()
        .map(|row| regress::predict_year(&model, row))
        .collect::<Result<_, _>>()?;
    let sample = PairedSample::new(predictions.clone(), test_y.clone())?;
    let statistics: Vec<StatRow> = [Statistic::Mae, Statistic::Rmse]
        .into_iter()
        .map(|stat| {
            metrics::bootstrap(stat, &sample, cfg.bootstrap_b, cfg.bootstrap_level, cfg.seed)
                .map(StatRow::from)
        })
        .collect::<Result<_, _>>()?;
    let mean_year = train_y.iter().sum::<f64>() / train_y.len() as f64;
    let baseline_mae =
        test_y.iter().map(|y| (y - mean_year).abs()).sum::<f64>() / test_y.len() as f64;
    let coefficients =
        normalised_coefficients(columns, std::slice::from_ref(&model.theta));
    let report = YearReport {
        config: cfg.echo.clone(),
        descriptors: cfg.year_descriptors,
        n_train: train_rows.len(),
        n_test: test_rows.len(),
        window_days: cfg.window_days,
        statistics,
        baseline_mae,
        coefficients,
        tune: trace,
        nu,
        clamp: model.clamp,
        dropped_tracks: dropped,
    };
    Ok(YearOutcome { report, model, predictions, observed: test_y })
}

/// Dataset-level wrapper: deduplicating artist/title-disjoint split, then
/// descriptor matrices, then [`run_year_from_matrices`].
pub fn run_year(ds: &Dataset, cfg: &ExperimentConfig) -> Result<YearOutcome, PipelineError> {
    cfg.validate()?;
    if ds.tracks.len() < 4 * cfg.kfolds {
        return Err(PipelineError::InsufficientTracks { need: 4 * cfg.kfolds, got: ds.tracks.len() });
    }
    let (train_ds, test_ds) = data::dedup_split(ds, cfg.train_fraction, cfg.seed)?;
    let run = compute_descriptors(ds, cfg);
    let date_of = |d: &Dataset, id: &str| d.track(id).map(|t| t.chart_entry_date);
    let mut train_ids = train_ds.track_ids();
    train_ids.sort();
    let mut test_ids = test_ds.track_ids();
    test_ids.sort();
    let (kept_tr, x_tr, columns, mut dropped) =
        descriptor_matrix(&run.vectors, &train_ids, cfg.year_descriptors);
    let (kept_te, x_te, _, dropped_te) =
        descriptor_matrix(&run.vectors, &test_ids, cfg.year_descriptors);
    dropped.extend(dropped_te);
    let dates_tr: Vec<f64> = kept_tr.iter().map(|id| date_of(&train_ds, id).unwrap()).collect();
    let dates_te: Vec<f64> = kept_te.iter().map(|id| date_of(&test_ds, id).unwrap()).collect();
    run_year_from_matrices(&x_tr, &dates_tr, &x_te, &dates_te, &columns, cfg, dropped)
}

pub fn cmd_year(cfg: &ExperimentConfig) -> Result<YearReport, PipelineError> {
    cfg.validate()?;
    let (ds, _report) = data::load_dataset(cfg.require_manifest()?)?;
    let outcome = with_pool(cfg.jobs, || run_year(&ds, cfg))?;
    write_json(&cfg.out_dir.join("model.json"), &outcome.model)?;
    #[derive(Serialize)]
    struct MetricsOut<'a> {
        statistics: &'a [StatRow],
        baseline_mae: f64,
    }
    write_json(
        &cfg.out_dir.join("metrics.json"),
        &MetricsOut {
            statistics: &outcome.report.statistics,
            baseline_mae: outcome.report.baseline_mae,
        },
    )?;
    write_json(&cfg.out_dir.join("report.json"), &outcome.report)?;
    Ok(outcome.report)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<synth::SynthSummary, PipelineError> {
    Ok(synth::write_corpus(&cfg.synth, cfg.seed, &cfg.out_dir)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.txt");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn config_parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "set=3\nlambdas=3,4\nscale=four\nstatistic=rho_s\nnu_grid=0.2,0.8\nwindow_days=30\nsynth.n_tracks=12\n",
        );
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.set, 3);
        assert_eq!(cfg.lambdas, vec![3, 4]);
        assert_eq!(cfg.scale, RatingScale::Four);
        assert_eq!(cfg.statistic, Statistic::RhoS);
        assert_eq!(cfg.nu_grid, vec![0.2, 0.8]);
        assert_eq!(cfg.window_days, 30);
        assert_eq!(cfg.synth.n_tracks, 12);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        for body in ["bogus=1\n", "set=9\n", "scale=six\n", "clamp=5\n"] {
            let path = write_config(dir.path(), body);
            let r = ExperimentConfig::from_file(&path).and_then(|c| c.validate().map(|_| c));
            assert!(r.is_err(), "accepted {body:?}");
        }
    }

    #[test]
    fn descriptors_csv_deterministic_and_counted() {
        let params = SynthParams { n_tracks: 2, frames: 120, ..SynthParams::default() };
        let ds = synth::generate_dataset(&params, 3).unwrap();
        let cfg = ExperimentConfig::default();
        let a = compute_descriptors(&ds, &cfg);
        let b = compute_descriptors(&ds, &cfg);
        assert!(a.skipped.is_empty());
        // per track: 25 features x 4 factors FCD vectors + 25 FMD vectors
        assert_eq!(a.vectors.len(), 2 * (25 * 4 + 25));
        let fcd_scalars: usize = a
            .vectors
            .iter()
            .filter(|v| v.name.starts_with("fcd:") && v.track_id == "t00000")
            .map(|v| v.values.len())
            .sum();
        assert_eq!(fcd_scalars, 300);
        let fmd_scalars: usize = a
            .vectors
            .iter()
            .filter(|v| v.name.starts_with("fmd:") && v.track_id == "t00000")
            .map(|v| v.values.len())
            .sum();
        assert_eq!(fmd_scalars, 138);
        assert_eq!(descriptors_csv(&a.vectors), descriptors_csv(&b.vectors));
    }

    #[test]
    fn short_track_skips_factor_eight_only() {
        // factor 8 on 36 frames -> 4 symbols, too short to quantise at
        // lambda 5; the (feature, factor) pair is reported, not fatal
        let params = SynthParams { n_tracks: 1, frames: 36, ..SynthParams::default() };
        let ds = synth::generate_dataset(&params, 3).unwrap();
        let cfg = ExperimentConfig::default();
        let run = compute_descriptors(&ds, &cfg);
        assert!(run.skipped.is_empty());
        assert_eq!(run.missing.len(), 25);
        assert!(run.missing.iter().all(|(_, name)| name.ends_with(":8")));
    }

    fn similarity_fixture(n_tracks: usize, n_ratings: usize) -> (Dataset, DescriptorStore) {
        let params = SynthParams {
            n_tracks,
            frames: 200,
            n_ratings,
            rating_noise: 0.1,
            ..SynthParams::default()
        };
        let ds = synth::generate_dataset(&params, 21).unwrap();
        let cfg = ExperimentConfig::default();
        let run = compute_descriptors(&ds, &cfg);
        (ds, DescriptorStore::from_vectors(run.vectors))
    }

    #[test]
    fn similarity_end_to_end_small() {
        let (ds, store) = similarity_fixture(40, 120);
        let cfg = ExperimentConfig {
            bootstrap_b: 200,
            set: 3,
            ..ExperimentConfig::default()
        };
        let out = run_similarity(&ds, &store, &cfg).unwrap();
        assert_eq!(out.report.n_train + out.report.n_test, 120);
        assert_eq!(out.report.confusion.len(), 5);
        let coef_sum: f64 = out.report.coefficients.iter().map(|c| c.weight).sum();
        assert!((coef_sum - 1.0).abs() < 1e-9);
        assert!(out.report.coefficients.iter().all(|c| c.weight >= 0.0));
        let tau = out.report.statistics.iter().find(|s| s.name == "tau_b").unwrap();
        assert!(tau.value > 0.15, "tau_b {}", tau.value);
    }

    #[test]
    fn similarity_four_point_scale() {
        let (ds, store) = similarity_fixture(40, 120);
        let cfg = ExperimentConfig {
            bootstrap_b: 200,
            set: 3,
            scale: RatingScale::Four,
            ..ExperimentConfig::default()
        };
        let out = run_similarity(&ds, &store, &cfg).unwrap();
        assert_eq!(out.report.k, 4);
        assert_eq!(out.report.confusion.len(), 4);
        assert_eq!(out.report.labels[0], "1;2");
        assert!(out.observed.iter().all(|&s| (1..=4).contains(&s)));
    }

    #[test]
    fn similarity_requires_enough_ratings() {
        let (mut ds, store) = similarity_fixture(20, 60);
        ds.ratings.truncate(30);
        let cfg = ExperimentConfig { set: 3, ..ExperimentConfig::default() };
        assert!(matches!(
            run_similarity(&ds, &store, &cfg),
            Err(PipelineError::InsufficientRatings { need: 50, got: 30 })
        ));
    }

    #[test]
    fn similarity_deterministic() {
        let (ds, store) = similarity_fixture(30, 80);
        let cfg = ExperimentConfig { bootstrap_b: 150, set: 3, ..ExperimentConfig::default() };
        let a = run_similarity(&ds, &store, &cfg).unwrap();
        let b = run_similarity(&ds, &store, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn shuffled_labels_give_near_zero_tau() {
        let (mut ds, store) = similarity_fixture(60, 400);
        // break the rating-distance link by reassigning scores cyclically
        let scores: Vec<usize> = ds.ratings.iter().map(|r| r.score).collect();
        let n = scores.len();
        for (i, r) in ds.ratings.iter_mut().enumerate() {
            r.score = scores[(i + n / 2) % n];
        }
        let cfg = ExperimentConfig { bootstrap_b: 150, set: 3, ..ExperimentConfig::default() };
        let out = run_similarity(&ds, &store, &cfg).unwrap();
        let tau = out.report.statistics.iter().find(|s| s.name == "tau_b").unwrap();
        assert!(tau.value.abs() < 0.15, "tau_b {}", tau.value);
    }

    fn year_fixture(n_tracks: usize) -> (Dataset, ExperimentConfig) {
        let params = SynthParams { n_tracks, frames: 150, ..SynthParams::default() };
        let ds = synth::generate_dataset(&params, 17).unwrap();
        let cfg = ExperimentConfig { bootstrap_b: 200, ..ExperimentConfig::default() };
        (ds, cfg)
    }

    #[test]
    fn year_end_to_end_beats_baseline() {
        let (ds, cfg) = year_fixture(60);
        let out = run_year(&ds, &cfg).unwrap();
        let mae = out.report.statistics.iter().find(|s| s.name == "mae").unwrap();
        assert!(
            mae.value < out.report.baseline_mae,
            "mae {} baseline {}",
            mae.value,
            out.report.baseline_mae
        );
        let coef_sum: f64 = out.report.coefficients.iter().map(|c| c.weight).sum();
        assert!((coef_sum - 1.0).abs() < 1e-9);
        for p in &out.predictions {
            assert!(*p >= out.report.clamp.0 && *p <= out.report.clamp.1);
        }
    }

    #[test]
    fn year_constant_descriptors_predict_mean() {
        let cfg = ExperimentConfig { bootstrap_b: 200, ..ExperimentConfig::default() };
        let mut rows_tr = vec![vec![1.0, 2.0]; 40];
        let rows_te = vec![vec![1.0, 2.0]; 10];
        // outlier imputation needs distinct order statistics; keep columns
        // constant so the fitted model must fall back to the intercept
        for r in rows_tr.iter_mut() {
            r.push(0.0);
        }
        let dates_tr: Vec<f64> = (0..40).map(|i| 1960.0 + i as f64).collect();
        let dates_te: Vec<f64> = (0..10).map(|i| 1965.0 + i as f64).collect();
        let mut rows_te = rows_te;
        for r in rows_te.iter_mut() {
            r.push(0.0);
        }
        let columns = vec!["a".into(), "b".into(), "c".into()];
        let out = run_year_from_matrices(
            &rows_tr, &dates_tr, &rows_te, &dates_te, &columns, &cfg, vec![],
        )
        .unwrap();
        let mean = dates_tr.iter().sum::<f64>() / 40.0;
        for p in &out.predictions {
            assert!((p - mean.clamp(out.report.clamp.0, out.report.clamp.1)).abs() < 1e-6);
        }
    }

    #[test]
    fn year_windowing_reduces_rows() {
        let (ds, mut cfg) = year_fixture(60);
        cfg.window_days = 365;
        let out = run_year(&ds, &cfg).unwrap();
        assert!(out.report.n_train < 36, "windowed rows {}", out.report.n_train);
        assert_eq!(out.predictions.len(), out.report.n_test);
    }

    #[test]
    fn cmd_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        // small artist groups keep the deduplicating 60/40 split feasible
        let params = SynthParams {
            n_tracks: 24,
            frames: 120,
            n_ratings: 80,
            n_artists: 12,
            ..SynthParams::default()
        };
        synth::write_corpus(&params, 9, &corpus).unwrap();
        let cfg = ExperimentConfig {
            manifest: Some(corpus.join("manifest.txt")),
            out_dir: dir.path().join("out"),
            bootstrap_b: 150,
            set: 3,
            seed: 9,
            ..ExperimentConfig::default()
        };
        let path = cmd_descriptors(&cfg).unwrap();
        let first = std::fs::read(&path).unwrap();
        cmd_descriptors(&cfg).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let report = cmd_similarity(&cfg).unwrap();
        assert!(cfg.out_dir.join("distances.csv").exists());
        assert!(cfg.out_dir.join("model.json").exists());
        assert!(cfg.out_dir.join("metrics.json").exists());
        assert!(cfg.out_dir.join("report.json").exists());
        assert_eq!(report.n_train + report.n_test, 80);
        let year_report = cmd_year(&cfg).unwrap();
        assert!(year_report.n_test > 0);
    }
}
