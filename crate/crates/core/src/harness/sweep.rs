//! Grid execution.
//!
//! Every seed draws one data split (test holdout, public part, private part)
//! that is shared by all cells with that seed, so methods and `k` values are
//! compared on identical data. Training randomness comes from a stream keyed
//! by the seed and the hyperparameter point, again shared across methods and
//! `k` values.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{LabeledDataset, MapPoints, PrivacyBudget, PrivacyMode, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::mechanisms::calibrate_dpsgd_sigma;
use crate::optim::{LearningRate, NoisySgdConfig, SgdSchedule};
use crate::pipeline::{evaluate, fit_basis, pillar_fit_with_basis, DpsgdSettings, GdSettings, PillarParams, RunReport};
use crate::rng::Rng;
use crate::spectral::ProjectionBasis;
use crate::synth::sample_gmm_with;

use super::config::{DataSource, Method, SweepConfig};
use super::features::{read_feature_table, FeatureFormat, FeatureTable};
use super::jl::JlTransform;
use super::multiclass::{softmax_dp_sgd, MulticlassDataset};
use super::results::ResultRow;

const STREAM_DATA: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_JL: u64 = 0x4a4c;

/// One point of the grid, in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub epsilon: f64,
    pub method: Method,
    pub k: usize,
    /// `None` when the optimizer grid does not apply (ε = ∞ or noisy SGD).
    pub hyper: Option<Hyper>,
    /// Key of the shared training stream.
    train_key: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
}

/// Enumerates the grid: seed, labelled fraction, ε, hyperparameters, method, k.
/// `dpsgd-full` appears once per combination, with `k = dim`.
pub fn enumerate_cells(config: &SweepConfig, dim: usize) -> Vec<Cell> {
    let o = &config.optimizer;
    let mut hypers = Vec::new();
    for &learning_rate in &o.learning_rates {
        for &steps in &o.steps {
            for &batch_size in &o.batch_sizes {
                hypers.push(Hyper {
                    learning_rate,
                    steps,
                    batch_size,
                });
            }
        }
    }
    let mut cells = Vec::new();
    for &seed in &config.seeds {
        for (fi, &labeled_fraction) in config.labeled_fractions.iter().enumerate() {
            for (ei, &epsilon) in config.epsilon.iter().enumerate() {
                let grid_applies = epsilon.is_finite() && config.backend == PrivacyMode::RdpDpsgd;
                let points: Vec<Option<Hyper>> = if grid_applies {
                    hypers.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for (hi, hyper) in points.into_iter().enumerate() {
                    let train_key = ((fi as u64) << 40) | ((ei as u64) << 20) | hi as u64;
                    for &method in &config.methods {
                        let ks: Vec<usize> = match method {
                            Method::DpsgdFull => vec![dim],
                            _ => config.k.clone(),
                        };
                        for k in ks {
                            cells.push(Cell {
                                index: cells.len(),
                                seed,
                                labeled_fraction,
                                epsilon,
                                method,
                                k,
                                hyper,
                                train_key,
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

/// Index sets of one seed's split.
struct Split {
    test: Vec<usize>,
    public: Vec<usize>,
    /// Private indices in a random order; a labelled fraction keeps a prefix.
    private: Vec<usize>,
}

fn split_indices(keys: &[i64], config: &SweepConfig, rng: &Rng) -> Result<Split> {
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_class.entry(*k).or_default().push(i);
    }
    let mut hold_rng = rng.fork(1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for idx in by_class.values() {
        let perm = hold_rng.permutation(idx.len());
        let n_test = (config.test_fraction * idx.len() as f64).round() as usize;
        for (j, &p) in perm.iter().enumerate() {
            if j < n_test {
                test.push(idx[p]);
            } else {
                train.push(idx[p]);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    let n_public = (config.public_fraction * train.len() as f64).floor() as usize;
    if test.is_empty() || n_public == 0 || n_public >= train.len() {
        return Err(Error::BadFraction {
            fraction: config.public_fraction,
            n: train.len(),
        });
    }
    let perm = rng.fork(2).permutation(train.len());
    let mut public: Vec<usize> = perm[..n_public].iter().map(|&p| train[p]).collect();
    public.sort_unstable();
    let private = perm[n_public..].iter().map(|&p| train[p]).collect();
    Ok(Split { test, public, private })
}

fn labeled_prefix(private: &[usize], fraction: f64) -> Vec<usize> {
    let n = ((fraction * private.len() as f64).round() as usize).clamp(1, private.len().max(1));
    let mut idx = private[..n.min(private.len())].to_vec();
    idx.sort_unstable();
    idx
}

/// Binary data of one seed.
struct BinaryPrep {
    pool: LabeledDataset,
    split: Split,
    reference: Option<Vec<f64>>,
    /// Top eigenvectors of the public sample, truncated per cell.
    basis: Option<ProjectionBasis>,
}

enum Source {
    Gmm,
    Binary(LabeledDataset),
    Multiclass(MulticlassDataset),
}

fn load_source(config: &SweepConfig) -> Result<(Source, usize)> {
    match &config.data {
        DataSource::Gmm { d, .. } => Ok((Source::Gmm, *d)),
        DataSource::Features { path, format, classes } => {
            let format = format.unwrap_or_else(|| FeatureFormat::from_path(path));
            let table: FeatureTable = read_feature_table(path, format)?;
            let dim = table.dim;
            if config.multiclass {
                return Ok((Source::Multiclass(MulticlassDataset::from_table(&table)?), dim));
            }
            let data = match classes {
                Some([a, b]) => table.one_vs_one(*a, *b)?,
                None => table.to_labeled()?,
            };
            Ok((Source::Binary(data), dim))
        }
    }
}

fn prepare_binary(config: &SweepConfig, source: &Source, seed: u64, master: u64) -> Result<BinaryPrep> {
    let rng = Rng::new(master).fork(STREAM_DATA).fork(seed);
    let (pool, reference) = match source {
        Source::Gmm => {
            let spec = config.data.gmm_spec()?.expect("gmm source");
            let DataSource::Gmm { n, normalization, .. } = &config.data else {
                unreachable!("gmm source");
            };
            let sample = sample_gmm_with(&spec, *n, *normalization, &mut rng.fork(0))?;
            (sample.data, Some(spec.mu))
        }
        Source::Binary(data) => (data.clone(), None),
        Source::Multiclass(_) => unreachable!("multiclass data takes its own path"),
    };
    let keys: Vec<i64> = pool.labels().iter().map(|l| l.value() as i64).collect();
    let split = split_indices(&keys, config, &rng)?;
    let max_k = pillar_max_k(config);
    let basis = match max_k {
        Some(k) => Some(fit_basis(&pool.subset(&split.public).unlabeled(), k)?),
        None => None,
    };
    Ok(BinaryPrep {
        pool,
        split,
        reference,
        basis,
    })
}

fn pillar_max_k(config: &SweepConfig) -> Option<usize> {
    if config.methods.contains(&Method::Pillar) {
        config.k.iter().copied().max()
    } else {
        None
    }
}

fn identity_basis(dim: usize) -> Result<ProjectionBasis> {
    ProjectionBasis::from_columns(DMatrix::identity(dim, dim), vec![1.0; dim])
}

fn budget_for(config: &SweepConfig, epsilon: f64) -> Result<PrivacyBudget> {
    if epsilon.is_finite() {
        PrivacyBudget::new(epsilon, config.delta, config.backend)
    } else {
        Ok(PrivacyBudget::non_private())
    }
}

fn params_for(config: &SweepConfig, cell: &Cell, budget: PrivacyBudget, reference: Option<Vec<f64>>) -> PillarParams {
    let o = &config.optimizer;
    let mut p = PillarParams::new(cell.k, config.gamma0, config.xi0, budget);
    p.beta = config.beta;
    p.noisy_sgd = NoisySgdConfig {
        formula_variant: o.formula_variant,
        budget_split: o.budget_split.to_split(),
        step_cap: o.step_cap,
        ..NoisySgdConfig::default()
    };
    if let Some(h) = cell.hyper {
        p.dpsgd = DpsgdSettings {
            schedule: SgdSchedule {
                steps: h.steps,
                learning_rate: LearningRate::Constant(h.learning_rate),
                batch_size: h.batch_size,
                clip_norm: o.clip_norm,
                sampling: o.sampling,
            },
            loss: o.loss,
        };
    }
    p.gd = GdSettings {
        steps: o.gd_steps,
        learning_rate: o.gd_learning_rate,
    };
    p.reference = reference;
    p
}

struct Outcome {
    test_error: f64,
    train_error: f64,
    report: Option<RunReport>,
    n_labeled: usize,
    n_public: usize,
}

fn run_binary_cell(config: &SweepConfig, cell: &Cell, prep: &BinaryPrep, master: u64) -> Result<Outcome> {
    let labeled = prep.pool.subset(&labeled_prefix(&prep.split.private, cell.labeled_fraction));
    let test = prep.pool.subset(&prep.split.test);
    let budget = budget_for(config, cell.epsilon)?;
    let train_rng = Rng::new(master).fork(STREAM_TRAIN).fork(cell.seed).fork(cell.train_key);
    let mut rng = train_rng.clone();
    let (model, report, train, test) = match cell.method {
        Method::Pillar => {
            let basis = prep
                .basis
                .as_ref()
                .expect("basis fitted when pillar is requested")
                .truncate(cell.k)?;
            let params = params_for(config, cell, budget, prep.reference.clone());
            let (m, r) = pillar_fit_with_basis(&labeled, &basis, &params, &mut rng)?;
            (m, Some(r), labeled, test)
        }
        Method::DpsgdFull => {
            let params = params_for(config, cell, budget, None);
            let (m, r) = pillar_fit_with_basis(&labeled, &identity_basis(labeled.dim())?, &params, &mut rng)?;
            (m, Some(strip_spectral(r)), labeled, test)
        }
        Method::JlDpsgd => {
            let jl = JlTransform::new(labeled.dim(), cell.k, &mut train_rng.fork(STREAM_JL))?;
            let train = labeled.map_points(cell.k, |x, out| jl.apply(x, out))?;
            let test = test.map_points(cell.k, |x, out| jl.apply(x, out))?;
            let params = params_for(config, cell, budget, None);
            let (m, r) = pillar_fit_with_basis(&train, &identity_basis(cell.k)?, &params, &mut rng)?;
            (m, Some(strip_spectral(r)), train, test)
        }
    };
    Ok(Outcome {
        test_error: evaluate(&model, &test)?,
        train_error: evaluate(&model, &train)?,
        report,
        n_labeled: train.len(),
        n_public: prep.split.public.len(),
    })
}

fn strip_spectral(mut r: RunReport) -> RunReport {
    r.delta_k_hat = None;
    r.xi_hat = None;
    r
}

struct MulticlassPrep {
    split: Split,
    basis: Option<ProjectionBasis>,
}

fn prepare_multiclass(config: &SweepConfig, data: &MulticlassDataset, seed: u64, master: u64) -> Result<MulticlassPrep> {
    let rng = Rng::new(master).fork(STREAM_DATA).fork(seed);
    let keys: Vec<i64> = data.labels.iter().map(|&l| l as i64).collect();
    let split = split_indices(&keys, config, &rng)?;
    let basis = match pillar_max_k(config) {
        Some(k) => {
            let public = data.subset(&split.public);
            fit_basis(&UnlabeledDataset::from_flat(public.dim, public.values)?, k).map(Some)?
        }
        None => None,
    };
    Ok(MulticlassPrep { split, basis })
}

fn run_multiclass_cell(
    config: &SweepConfig,
    cell: &Cell,
    data: &MulticlassDataset,
    prep: &MulticlassPrep,
    master: u64,
) -> Result<Outcome> {
    let mut train = data.subset(&labeled_prefix(&prep.split.private, cell.labeled_fraction));
    let mut test = data.subset(&prep.split.test);
    if cell.method == Method::Pillar {
        let basis = prep.basis.as_ref().expect("basis fitted").truncate(cell.k)?;
        train = train.project(&basis)?;
        test = test.project(&basis)?;
    }
    let o = &config.optimizer;
    let h = cell.hyper.unwrap_or(Hyper {
        learning_rate: o.learning_rates[0],
        steps: o.steps[0],
        batch_size: o.batch_sizes[0],
    });
    let schedule = SgdSchedule {
        steps: h.steps,
        learning_rate: LearningRate::Constant(h.learning_rate),
        batch_size: h.batch_size.min(train.len()),
        clip_norm: o.clip_norm,
        sampling: o.sampling,
    };
    let sigma = if cell.epsilon.is_finite() {
        calibrate_dpsgd_sigma(cell.epsilon, config.delta, schedule.steps, schedule.sampling_rate(train.len()))?
    } else {
        0.0
    };
    let mut rng = Rng::new(master).fork(STREAM_TRAIN).fork(cell.seed).fork(cell.train_key);
    let model = softmax_dp_sgd(&train, &schedule, sigma, &mut rng)?;
    Ok(Outcome {
        test_error: model.error_rate(&test),
        train_error: model.error_rate(&train),
        report: Some(RunReport {
            mode: if cell.epsilon.is_finite() {
                PrivacyMode::RdpDpsgd
            } else {
                PrivacyMode::NonPrivate
            },
            k: train.dim,
            zeta: 1.0,
            delta_k_hat: None,
            xi_hat: None,
            noise_multiplier: Some(sigma),
            sigma_squared: None,
            steps: schedule.steps,
            steps_capped: false,
            batch_size: Some(schedule.batch_size),
            budget_split: None,
            formula_variant: None,
            noisy_sgd: None,
        }),
        n_labeled: train.len(),
        n_public: prep.split.public.len(),
    })
}

fn base_row(config: &SweepConfig, cell: &Cell) -> ResultRow {
    let mode = if cell.epsilon.is_finite() {
        config.backend
    } else {
        PrivacyMode::NonPrivate
    };
    ResultRow {
        dataset: config.dataset_id(),
        method: cell.method.as_str().into(),
        backend: mode.as_str().into(),
        k: cell.k,
        epsilon: cell.epsilon,
        delta: if cell.epsilon.is_finite() { config.delta } else { 0.0 },
        seed: cell.seed,
        formula_variant: "none".into(),
        budget_split: "none".into(),
        learning_rate: cell.hyper.map(|h| h.learning_rate),
        steps: cell.hyper.map(|h| h.steps),
        batch_size: cell.hyper.map(|h| h.batch_size),
        ..ResultRow::default()
    }
}

fn fill_row(row: &mut ResultRow, config: &SweepConfig, out: Outcome) {
    row.test_error = Some(out.test_error);
    row.train_error = Some(out.train_error);
    row.n_labeled = out.n_labeled;
    row.n_public = out.n_public;
    let Some(r) = out.report else { return };
    row.k = r.k;
    row.steps = Some(r.steps);
    row.batch_size = r.batch_size;
    row.sigma = r.noise_multiplier.or(r.sigma_squared);
    row.xi_hat = r.xi_hat;
    row.delta_k_hat = r.delta_k_hat;
    if let Some(f) = r.formula_variant {
        row.formula_variant = f.as_str().into();
    }
    if let Some(s) = r.budget_split {
        row.budget_split = s;
    }
    if r.mode == PrivacyMode::NonPrivate && !config.multiclass {
        row.learning_rate = Some(config.optimizer.gd_learning_rate);
    }
}

/// Runs every cell of the grid. Only configuration problems are errors;
/// a failing cell yields a row carrying `error_tag`.
pub fn run_sweep(config: &SweepConfig, master_seed: u64) -> Result<Vec<ResultRow>> {
    config.validate()?;
    if config.multiclass && (config.methods.contains(&Method::JlDpsgd) || config.backend != PrivacyMode::RdpDpsgd) {
        return Err(Error::Config(
            "multiclass runs support the pillar and dpsgd-full methods with the rdp-dpsgd backend".into(),
        ));
    }
    let (source, dim) = load_source(config).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Config(format!("loading data: {other}")),
    })?;
    if let Some(k) = config.k.iter().find(|k| **k > dim) {
        return Err(Error::Config(format!("k = {k} exceeds the data dimension {dim}")));
    }
    let cells = enumerate_cells(config, dim);
    let rows = match &source {
        Source::Multiclass(data) => {
            let preps: BTreeMap<u64, Result<MulticlassPrep>> = config
                .seeds
                .par_iter()
                .map(|&s| (s, prepare_multiclass(config, data, s, master_seed)))
                .collect();
            cells
                .par_iter()
                .map(|cell| {
                    execute(config, cell, || match &preps[&cell.seed] {
                        Ok(p) => run_multiclass_cell(config, cell, data, p, master_seed),
                        Err(e) => Err(Error::InvalidData(format!("data preparation failed: {e}"))),
                    })
                })
                .collect()
        }
        _ => {
            let preps: BTreeMap<u64, Result<BinaryPrep>> = config
                .seeds
                .par_iter()
                .map(|&s| (s, prepare_binary(config, &source, s, master_seed)))
                .collect();
            cells
                .par_iter()
                .map(|cell| {
                    execute(config, cell, || match &preps[&cell.seed] {
                        Ok(p) => run_binary_cell(config, cell, p, master_seed),
                        Err(e) => Err(Error::InvalidData(format!("data preparation failed: {e}"))),
                    })
                })
                .collect()
        }
    };
    Ok(rows)
}

fn execute(config: &SweepConfig, cell: &Cell, run: impl FnOnce() -> Result<Outcome>) -> ResultRow {
    let mut row = base_row(config, cell);
    let start = Instant::now();
    match run() {
        Ok(out) => fill_row(&mut row, config, out),
        Err(e) => {
            log::warn!("cell {} (seed {}, k {}, eps {}) failed: {e}", cell.index, cell.seed, cell.k, cell.epsilon);
            row.error_tag = Some(e.to_string());
        }
    }
    if config.record_wall_time {
        row.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    row
}

/// Mean test error per key over rows that completed.
pub fn mean_test_error<K: Ord>(rows: &[ResultRow], key: impl Fn(&ResultRow) -> K) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(e) = r.test_error {
            let slot = acc.entry(key(r)).or_insert((0.0, 0));
            slot.0 += e;
            slot.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}
