//! Two-source separation of heart and lung sounds.
//!
//! The mixture is a 2 x T matrix of channels (a mono recording is repeated
//! into both rows). It is rescaled so its most negative sample is -1, moved
//! into the non-negative cone by an affine map, and factorized at rank 2 by
//! two independently configured multilayer blocks. The heart block keeps the activation row
//! with the shorter autocorrelation period and the lung block the row with
//! the longer one; a row without periodic peaks counts as infinitely long.
//!
//! The guided variant runs the same blocks while an advisor supplies target
//! fundamentals every few iterations. The penalized cost only drives the
//! stopping rule and the choice among restarts; the updates are unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advisor::{Advisor, AdvisorRequest, AdvisorResponse, CandidateFeatures};
use crate::error::{Error, Result};
use crate::json::extended_f64;
use crate::matrix::NonNegMatrix;
use crate::multilayer::{multilayer_factorize_monitored, LayerInit, LayerStack};
use crate::nmf::{alpha_divergence, AlphaNmfConfig, DivergenceOnly, IterationMonitor};
use crate::rng;
use crate::spectral::{
    extract_features, fundamental_frequency, period_of, power_spectral_density, psd_peaks, AudioSegment,
    PeriodConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl AffineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(Error::Config(format!(
                "affine parameters need lambda1 > 0 and finite values, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }

    /// Smallest offset that makes `lambda1 * rows + lambda2` non-negative.
    pub fn minimal_shift(rows: &[Vec<f64>], lambda1: f64) -> AffineParams {
        let min = rows.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        AffineParams {
            lambda1,
            lambda2: (-lambda1 * min).max(0.0),
        }
    }
}

fn row_shape(rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension("rows must be non-empty and of equal length".into()));
    }
    Ok((rows.len(), cols))
}

/// `lambda1 * Y + lambda2`, after checking `lambda1 * min(Y) + lambda2 >= 0`.
pub fn affine_transform(rows: &[Vec<f64>], params: &AffineParams) -> Result<NonNegMatrix> {
    params.validate()?;
    let (r, c) = row_shape(rows)?;
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mixture contains NaN or infinity".into()));
    }
    let min = rows.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if params.lambda1 * min + params.lambda2 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "affine map is infeasible: {} * {min} + {} < 0",
            params.lambda1, params.lambda2
        )));
    }
    // The check above holds exactly; rounding in individual entries is clipped.
    NonNegMatrix::from_fn(r, c, |i, j| (params.lambda1 * rows[i][j] + params.lambda2).max(0.0))
}

/// `(X - lambda2) / lambda1`.
pub fn inverse_affine(x: &NonNegMatrix, params: &AffineParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    Ok((0..x.rows())
        .map(|i| x.row(i).iter().map(|v| (v - params.lambda2) / params.lambda1).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub affine: AffineParams,
    pub alpha: f64,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    pub heart: BlockConfig,
    pub lung: BlockConfig,
    /// Iteration settings and master seed; `rank` and `alpha` are set per block.
    pub nmf: AlphaNmfConfig,
    pub period: PeriodConfig,
    pub restarts: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            heart: BlockConfig {
                affine: AffineParams {
                    lambda1: 1.0,
                    lambda2: 1.0,
                },
                alpha: 1.0,
                layers: 2,
            },
            lung: BlockConfig {
                affine: AffineParams {
                    lambda1: 0.5,
                    lambda2: 0.5,
                },
                alpha: 1.0,
                layers: 1,
            },
            nmf: AlphaNmfConfig {
                max_iter: 1000,
                rel_tol: 1e-7,
                ..AlphaNmfConfig::default()
            },
            period: PeriodConfig::default(),
            restarts: 4,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        self.heart.affine.validate()?;
        self.lung.affine.validate()?;
        if self.heart.affine.lambda1 < 1.0 {
            return Err(Error::Config(format!(
                "heart lambda1 must be >= 1, got {}",
                self.heart.affine.lambda1
            )));
        }
        if !(self.lung.affine.lambda1 > 0.0 && self.lung.affine.lambda1 < 1.0) {
            return Err(Error::Config(format!(
                "lung lambda1 must lie in (0, 1), got {}",
                self.lung.affine.lambda1
            )));
        }
        if self.heart.layers == 0 || self.lung.layers == 0 {
            return Err(Error::Config("each block needs at least one layer".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        self.period.validate()?;
        for alpha in [self.heart.alpha, self.lung.alpha] {
            AlphaNmfConfig {
                alpha,
                rank: 2,
                ..self.nmf.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Heart,
    Lung,
}

impl Source {
    fn index(self) -> u64 {
        match self {
            Source::Heart => 0,
            Source::Lung => 1,
        }
    }
}

/// Estimated period of each activation row in samples; `None` means no
/// periodic peaks were found.
pub type RowPeriods = [Option<f64>; 2];

fn period_key(p: Option<f64>) -> f64 {
    p.unwrap_or(f64::INFINITY)
}

/// Row chosen for `source` and whether the two periods tied. Ties go to
/// row 0 for the heart and row 1 for the lung.
pub fn select_row(periods: &RowPeriods, source: Source) -> Result<(usize, bool)> {
    if periods.iter().all(Option::is_none) {
        return Err(Error::NoPeaks { found: 0 });
    }
    let (p0, p1) = (period_key(periods[0]), period_key(periods[1]));
    let tie = p0 == p1;
    let row = match source {
        Source::Heart => usize::from(p1 < p0),
        Source::Lung => usize::from(p1 >= p0),
    };
    Ok((row, tie))
}

fn centered_segment(row: &[f64], sample_rate: f64) -> Result<AudioSegment> {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    AudioSegment::new(row.iter().map(|v| v - mean).collect(), sample_rate)
}

pub fn row_periods(x: &NonNegMatrix, sample_rate: f64, cfg: &PeriodConfig) -> Result<RowPeriods> {
    let mut out = [None, None];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = match period_of(&centered_segment(x.row(i), sample_rate)?, cfg) {
            Ok(p) => Some(p.period_samples),
            Err(Error::NoPeaks { .. }) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(out)
}

/// Mixture channels as a 2 x T row set scaled so that the most negative
/// sample is exactly -1 (or the largest is 1 for a non-negative mixture),
/// together with the scale. After this, `lambda2 = lambda1` is the smallest
/// feasible offset.
pub fn mixture_rows(channels: &[AudioSegment]) -> Result<(Vec<Vec<f64>>, f64)> {
    let rows: Vec<Vec<f64>> = match channels {
        [mono] => vec![mono.samples().to_vec(); 2],
        [a, b] => {
            if a.len() != b.len() || a.sample_rate() != b.sample_rate() {
                return Err(Error::Dimension("mixture channels differ in length or rate".into()));
            }
            vec![a.samples().to_vec(), b.samples().to_vec()]
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "mixture must have 1 or 2 channels, got {}",
                other.len()
            )))
        }
    };
    let min = rows.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let max = rows.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if min < 0.0 { -min } else { max };
    if scale == 0.0 {
        return Err(Error::Degenerate("mixture is silent".into()));
    }
    let rows = rows
        .into_iter()
        .map(|r| r.into_iter().map(|v| v / scale).collect())
        .collect();
    Ok((rows, scale))
}

/// Stopping and selection hook for one restart of one block.
pub trait BlockMonitor: IterationMonitor {
    /// Added to the reconstruction divergence when ranking restarts.
    fn final_penalty(&mut self, x: &NonNegMatrix) -> f64;
}

impl BlockMonitor for DivergenceOnly {
    fn final_penalty(&mut self, _: &NonNegMatrix) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub source: Source,
    pub config: BlockConfig,
    pub selected_row: usize,
    pub periods_samples: RowPeriods,
    pub period_tie: bool,
    pub restart: usize,
    /// Reconstruction divergence plus penalty for every restart.
    pub restart_scores: Vec<f64>,
    pub layer_costs: Vec<f64>,
    pub cost_traces: Vec<Vec<f64>>,
}

struct RestartOutcome<M> {
    stack: LayerStack,
    score: f64,
    periods: RowPeriods,
    monitor: M,
}

fn run_restart<M: BlockMonitor>(
    y: &NonNegMatrix,
    block: &BlockConfig,
    cfg: &SeparationConfig,
    sample_rate: f64,
    seed: u64,
    mut monitor: M,
) -> Result<RestartOutcome<M>> {
    let nmf = AlphaNmfConfig {
        alpha: block.alpha,
        rank: 2,
        seed,
        ..cfg.nmf.clone()
    };
    let ranks = vec![2; block.layers];
    let stack = multilayer_factorize_monitored(y, &ranks, &nmf, &LayerInit::Random, &mut monitor)?;
    let fit = alpha_divergence(y, &stack.a_total(), &stack.final_x, block.alpha, nmf.epsilon_floor)?;
    let score = fit + monitor.final_penalty(&stack.final_x);
    let periods = row_periods(&stack.final_x, sample_rate, &cfg.period)?;
    Ok(RestartOutcome {
        stack,
        score,
        periods,
        monitor,
    })
}

pub struct BlockOutcome<M> {
    pub report: BlockReport,
    pub signal: AudioSegment,
    pub stack: LayerStack,
    pub monitor: M,
}

/// Best restart by score among those with at least one periodic row,
/// lowest index on ties.
fn best_of<M>(outcomes: Vec<RestartOutcome<M>>) -> Result<(usize, Vec<f64>, RestartOutcome<M>)> {
    let scores: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
    let mut best: Option<usize> = None;
    for (r, o) in outcomes.iter().enumerate() {
        if o.periods.iter().all(Option::is_none) {
            continue;
        }
        if best.map_or(true, |b| o.score < scores[b]) {
            best = Some(r);
        }
    }
    let best = best.ok_or(Error::NoPeaks { found: 0 })?;
    let chosen = outcomes.into_iter().nth(best).expect("index from enumerate");
    Ok((best, scores, chosen))
}

/// Runs one block with `restarts` seeded restarts and extracts its source.
///
/// `make_monitor` builds the monitor of restart `r`. With `parallel` the
/// restarts run on the thread pool; results do not depend on the schedule.
#[allow(clippy::too_many_arguments)]
pub fn run_block<M, F>(
    rows: &[Vec<f64>],
    scale: f64,
    sample_rate: f64,
    source: Source,
    block: &BlockConfig,
    cfg: &SeparationConfig,
    make_monitor: F,
    parallel: bool,
) -> Result<BlockOutcome<M>>
where
    M: BlockMonitor + Send,
    F: Fn(usize) -> M + Sync,
{
    let y = affine_transform(rows, &block.affine)?;
    if y.is_all_zero() {
        return Err(Error::Degenerate("affine mixture is identically zero".into()));
    }
    let block_seed = rng::derive_seed(cfg.nmf.seed, &[source.index()]);
    let one = |r: usize| {
        run_restart(
            &y,
            block,
            cfg,
            sample_rate,
            rng::derive_seed(block_seed, &[r as u64]),
            make_monitor(r),
        )
    };
    let outcomes: Vec<RestartOutcome<M>> = if parallel {
        (0..cfg.restarts).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..cfg.restarts).map(one).collect::<Result<_>>()?
    };
    let (restart, restart_scores, chosen) = best_of(outcomes)?;
    let stack = chosen.stack;
    let periods = chosen.periods;
    let (row, tie) = select_row(&periods, source)?;
    let signal = source_signal(&stack, row, &block.affine, scale, sample_rate)?;
    Ok(BlockOutcome {
        report: BlockReport {
            source,
            config: block.clone(),
            selected_row: row,
            periods_samples: periods,
            period_tie: tie,
            restart,
            restart_scores,
            layer_costs: stack.layer_costs.clone(),
            cost_traces: stack.per_layer_traces.clone(),
        },
        signal,
        stack,
        monitor: chosen.monitor,
    })
}

/// Channel-0 contribution of activation row `row`, mapped back through the
/// affine transform and the mixture scaling. The offset is shared among
/// the components in proportion to their means, so the two components of a
/// block add up to its reconstruction of channel 0.
pub fn source_signal(
    stack: &LayerStack,
    row: usize,
    affine: &AffineParams,
    scale: f64,
    sample_rate: f64,
) -> Result<AudioSegment> {
    let a_tot = stack.a_total();
    let x = &stack.final_x;
    let contribution = |j: usize| -> Vec<f64> { x.row(j).iter().map(|v| a_tot.get(0, j) * v).collect() };
    let means: Vec<f64> = (0..x.rows())
        .map(|j| contribution(j).iter().sum::<f64>() / x.cols() as f64)
        .collect();
    let total: f64 = means.iter().sum();
    let share = if total > 0.0 { means[row] / total } else { 0.5 };
    let part = AffineParams {
        lambda1: affine.lambda1,
        lambda2: affine.lambda2 * share,
    };
    let c = contribution(row);
    let out = c.iter().map(|v| (v - part.lambda2) / part.lambda1 * scale).collect();
    AudioSegment::new(out, sample_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult {
    pub heart: AudioSegment,
    pub lung: AudioSegment,
    pub heart_block: BlockReport,
    pub lung_block: BlockReport,
    pub input_channels: usize,
    pub scale: f64,
    pub warnings: Vec<String>,
}

fn collect_warnings(channels: usize, blocks: [&BlockReport; 2]) -> Vec<String> {
    let mut warnings = Vec::new();
    if channels == 1 {
        warnings.push(
            "single-channel mixture repeated into both rows; the rows are identical and cannot be told apart"
                .to_string(),
        );
    }
    for b in blocks {
        if b.period_tie {
            warnings.push(format!(
                "{:?} block: both rows have the same period; row {} chosen by index",
                b.source, b.selected_row
            ));
        }
    }
    warnings
}

fn check_channels(channels: &[AudioSegment]) -> Result<f64> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidInput("mixture has no channels".into()))?;
    if first.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "mixture needs at least 8 samples, got {}",
            first.len()
        )));
    }
    Ok(first.sample_rate())
}

/// Dual-block periodicity-guided separation.
pub fn pl_nmf_separate(channels: &[AudioSegment], cfg: &SeparationConfig) -> Result<SeparationResult> {
    cfg.validate()?;
    let fs = check_channels(channels)?;
    let (rows, scale) = mixture_rows(channels)?;
    let (heart, lung) = rayon::join(
        || run_block(&rows, scale, fs, Source::Heart, &cfg.heart, cfg, |_| DivergenceOnly, true),
        || run_block(&rows, scale, fs, Source::Lung, &cfg.lung, cfg, |_| DivergenceOnly, true),
    );
    let (heart, lung) = (heart?, lung?);
    let warnings = collect_warnings(channels.len(), [&heart.report, &lung.report]);
    Ok(SeparationResult {
        heart: heart.signal,
        lung: lung.signal,
        heart_block: heart.report,
        lung_block: lung.report,
        input_channels: channels.len(),
        scale,
        warnings,
    })
}

/// Single-block, single-layer baseline: the minimal non-negative shift,
/// one factorization per restart, the shorter-period row as heart and the
/// other row as lung.
pub fn alpha_nmf_separate(channels: &[AudioSegment], cfg: &SeparationConfig) -> Result<SeparationResult> {
    cfg.validate()?;
    let fs = check_channels(channels)?;
    let (rows, scale) = mixture_rows(channels)?;
    let block = BlockConfig {
        affine: AffineParams::minimal_shift(&rows, 1.0),
        alpha: cfg.heart.alpha,
        layers: 1,
    };
    let outcome = run_block(&rows, scale, fs, Source::Heart, &block, cfg, |_| DivergenceOnly, true)?;
    let heart_report = outcome.report;
    let other = 1 - heart_report.selected_row;
    let lung_signal = source_signal(&outcome.stack, other, &block.affine, scale, fs)?;
    let lung_report = BlockReport {
        source: Source::Lung,
        selected_row: other,
        ..heart_report.clone()
    };
    let warnings = collect_warnings(channels.len(), [&heart_report, &lung_report]);
    Ok(SeparationResult {
        heart: outcome.signal,
        lung: lung_signal,
        heart_block: heart_report,
        lung_block: lung_report,
        input_channels: channels.len(),
        scale,
        warnings,
    })
}

/// `lambda_f * |f_hat - f_target|^2`.
pub fn frequency_penalty(f_hat: [f64; 2], f_target: [f64; 2], lambda_f: f64) -> f64 {
    let d0 = f_hat[0] - f_target[0];
    let d1 = f_hat[1] - f_target[1];
    lambda_f * (d0 * d0 + d1 * d1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LingoConfig {
    pub base: SeparationConfig,
    /// Penalty weight; `None` uses `0.1 * D_initial / |initial_f|^2` per run.
    pub lambda_f: Option<f64>,
    pub advisor_period: usize,
    pub initial_f: [f64; 2],
}

impl Default for LingoConfig {
    fn default() -> Self {
        LingoConfig {
            base: SeparationConfig::default(),
            lambda_f: None,
            advisor_period: 25,
            initial_f: [crate::advisor::DEFAULT_HEART_HZ, crate::advisor::DEFAULT_LUNG_HZ],
        }
    }
}

impl LingoConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if let Some(l) = self.lambda_f {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda_f must be >= 0, got {l}")));
            }
        }
        if self.advisor_period == 0 {
            return Err(Error::Config("advisor_period must be at least 1".into()));
        }
        if !self.initial_f.iter().all(|f| *f > 0.0 && f.is_finite()) {
            return Err(Error::Config("initial_f must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorLogEntry {
    pub source: Source,
    pub restart: usize,
    pub iteration: usize,
    pub request: AdvisorRequest,
    pub response: Option<AdvisorResponse>,
    /// Reply text exactly as received.
    pub raw: Option<String>,
    /// Why the reply was rejected and the previous targets kept.
    pub fallback: Option<String>,
    pub f_hat: [f64; 2],
    pub f_target: [f64; 2],
    #[serde(with = "extended_f64")]
    pub penalty: f64,
}

/// Candidate rows (heart first) and their fundamentals and features.
struct Candidates {
    f_hat: [f64; 2],
    features: CandidateFeatures,
    peaks: Vec<[f64; 2]>,
}

const PEAKS_PER_ROW: usize = 5;

fn candidates(x: &NonNegMatrix, sample_rate: f64, period: &PeriodConfig, fallback: [f64; 2]) -> Result<Candidates> {
    let periods = row_periods(x, sample_rate, period)?;
    let heart_row = match select_row(&periods, Source::Heart) {
        Ok((r, _)) => r,
        Err(Error::NoPeaks { .. }) => 0,
        Err(e) => return Err(e),
    };
    let order = [heart_row, 1 - heart_row];
    let mut f_hat = fallback;
    let mut feats = Vec::with_capacity(2);
    let mut peaks = Vec::new();
    for (k, &row) in order.iter().enumerate() {
        let seg = centered_segment(x.row(row), sample_rate)?;
        feats.push(extract_features(&seg));
        if seg.len() >= 8 {
            let (f, p) = power_spectral_density(&seg)?;
            if let Ok(ff) = fundamental_frequency(&f, &p) {
                f_hat[k] = ff;
            }
            peaks.extend(psd_peaks(&f, &p, PEAKS_PER_ROW).into_iter().map(|(hz, pw)| [hz, pw]));
        }
    }
    peaks.sort_by(|a, b| b[1].total_cmp(&a[1]).then(a[0].total_cmp(&b[0])));
    Ok(Candidates {
        f_hat,
        features: CandidateFeatures {
            heart: feats[0],
            lung: feats[1],
        },
        peaks,
    })
}

/// Queries the advisor every `period` iterations of the last layer and
/// reports `D_α + penalty` as the governing cost.
pub struct LingoMonitor<'a> {
    advisor: &'a dyn Advisor,
    source: Source,
    restart: usize,
    sample_rate: f64,
    period_cfg: PeriodConfig,
    advisor_period: usize,
    lambda_f: Option<f64>,
    f_target: [f64; 2],
    initial_f: [f64; 2],
    penalty: f64,
    pub log: Vec<AdvisorLogEntry>,
    pub penalized_trace: Vec<f64>,
    pub error: Option<Error>,
}

impl<'a> LingoMonitor<'a> {
    fn new(advisor: &'a dyn Advisor, cfg: &LingoConfig, source: Source, restart: usize, sample_rate: f64) -> Self {
        LingoMonitor {
            advisor,
            source,
            restart,
            sample_rate,
            period_cfg: cfg.base.period,
            advisor_period: cfg.advisor_period,
            lambda_f: cfg.lambda_f,
            f_target: cfg.initial_f,
            initial_f: cfg.initial_f,
            penalty: 0.0,
            log: Vec::new(),
            penalized_trace: Vec::new(),
            error: None,
        }
    }

    fn lambda_f(&mut self, initial_divergence: f64) -> f64 {
        *self.lambda_f.get_or_insert_with(|| {
            let norm = self.initial_f[0] * self.initial_f[0] + self.initial_f[1] * self.initial_f[1];
            0.1 * initial_divergence / norm
        })
    }

    fn consult(&mut self, iteration: usize, x: &NonNegMatrix, lambda_f: f64) -> Result<()> {
        let c = candidates(x, self.sample_rate, &self.period_cfg, self.f_target)?;
        let request = AdvisorRequest {
            features: c.features,
            psd_peaks: c.peaks,
            prior_f: self.f_target,
        };
        let (response, raw, fallback) = match self.advisor.advise(&request) {
            Ok(reply) => match reply.response.validate() {
                Ok(()) => {
                    self.f_target = [reply.response.f_heart, reply.response.f_lung];
                    (Some(reply.response), Some(reply.raw), None)
                }
                Err(e) => (Some(reply.response), Some(reply.raw), Some(e.to_string())),
            },
            Err(e) => (None, None, Some(e.to_string())),
        };
        self.penalty = frequency_penalty(c.f_hat, self.f_target, lambda_f);
        self.log.push(AdvisorLogEntry {
            source: self.source,
            restart: self.restart,
            iteration,
            request,
            response,
            raw,
            fallback,
            f_hat: c.f_hat,
            f_target: self.f_target,
            penalty: self.penalty,
        });
        Ok(())
    }
}

impl IterationMonitor for LingoMonitor<'_> {
    fn observe(&mut self, iteration: usize, _: &NonNegMatrix, x: &NonNegMatrix, divergence: f64) -> f64 {
        let lambda_f = if iteration == 0 {
            self.lambda_f(divergence)
        } else {
            self.lambda_f.unwrap_or(0.0)
        };
        if iteration % self.advisor_period == 0 && self.error.is_none() {
            if let Err(e) = self.consult(iteration, x, lambda_f) {
                self.error = Some(e);
            }
        }
        let governing = divergence + self.penalty;
        self.penalized_trace.push(governing);
        governing
    }
}

impl BlockMonitor for LingoMonitor<'_> {
    fn final_penalty(&mut self, x: &NonNegMatrix) -> f64 {
        let lambda_f = self.lambda_f.unwrap_or(0.0);
        match candidates(x, self.sample_rate, &self.period_cfg, self.f_target) {
            Ok(c) => frequency_penalty(c.f_hat, self.f_target, lambda_f),
            Err(_) => self.penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LingoResult {
    pub separation: SeparationResult,
    pub advisor: String,
    pub lambda_f: [Option<f64>; 2],
    pub advisor_log: Vec<AdvisorLogEntry>,
    /// `D_α + penalty` over the last layer of the selected restart, per block.
    pub penalized_cost_trace: [Vec<f64>; 2],
}

/// Advisor-guided separation. Blocks and restarts run one after another so
/// that advisor calls happen in a fixed order.
pub fn lingo_nmf_separate(channels: &[AudioSegment], cfg: &LingoConfig, advisor: &dyn Advisor) -> Result<LingoResult> {
    cfg.validate()?;
    let fs = check_channels(channels)?;
    let (rows, scale) = mixture_rows(channels)?;
    let mut log = Vec::new();
    let mut blocks = Vec::with_capacity(2);
    let mut traces: [Vec<f64>; 2] = Default::default();
    let mut lambdas = [None, None];
    for (k, (source, block)) in [(Source::Heart, &cfg.base.heart), (Source::Lung, &cfg.base.lung)]
        .into_iter()
        .enumerate()
    {
        let outcome = run_block(
            &rows,
            scale,
            fs,
            source,
            block,
            &cfg.base,
            |r| LingoMonitor::new(advisor, cfg, source, r, fs),
            false,
        )?;
        if let Some(e) = outcome.monitor.error {
            return Err(e);
        }
        // Only the selected restart's log is kept.
        log.extend(outcome.monitor.log);
        traces[k] = outcome.monitor.penalized_trace;
        lambdas[k] = outcome.monitor.lambda_f;
        blocks.push((outcome.report, outcome.signal));
    }
    let (lung_report, lung) = blocks.pop().expect("two blocks");
    let (heart_report, heart) = blocks.pop().expect("two blocks");
    let warnings = collect_warnings(channels.len(), [&heart_report, &lung_report]);
    Ok(LingoResult {
        separation: SeparationResult {
            heart,
            lung,
            heart_block: heart_report,
            lung_block: lung_report,
            input_channels: channels.len(),
            scale,
            warnings,
        },
        advisor: advisor.name(),
        lambda_f: lambdas,
        advisor_log: log,
        penalized_cost_trace: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisor::{EchoAdvisor, ExternalAdvisor};
    use crate::audio::{synth_mixture, SynthMixSpec};

    fn small_mixture(seed: u64) -> Vec<AudioSegment> {
        let spec = SynthMixSpec {
            heart_period_s: 0.1,
            lung_period_s: 0.5,
            heart_band: (20.0, 150.0),
            heart_tone_hz: Some(60.0),
            lung_band: (150.0, 400.0),
            duration_s: 1.5,
            sample_rate: 1000.0,
            seed,
            ..SynthMixSpec::default()
        };
        synth_mixture(&spec).unwrap().channels
    }

    fn small_config() -> SeparationConfig {
        let mut cfg = SeparationConfig::default();
        cfg.nmf.max_iter = 200;
        cfg.restarts = 2;
        cfg
    }

    #[test]
    fn affine_round_trip_and_feasibility() {
        let rows = vec![vec![-1.0, 0.0, 2.0], vec![0.5, -0.25, 1.0]];
        let p = AffineParams::minimal_shift(&rows, 2.0);
        assert_eq!(p.lambda2, 2.0);
        let y = affine_transform(&rows, &p).unwrap();
        assert_eq!(y.row(0), &[0.0, 2.0, 6.0]);
        assert_eq!(inverse_affine(&y, &p).unwrap(), rows);
        let tight = AffineParams { lambda1: 2.0, lambda2: 1.999 };
        assert!(matches!(affine_transform(&rows, &tight), Err(Error::InvalidInput(_))));
        let bad = AffineParams { lambda1: 0.0, lambda2: 1.0 };
        assert!(matches!(affine_transform(&rows, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn penalty_example() {
        assert_eq!(frequency_penalty([2.0, 0.0], [1.0, 2.0], 2.0), 10.0);
        assert_eq!(frequency_penalty([5.0, 7.0], [5.0, 7.0], 3.0), 0.0);
    }

    #[test]
    fn row_selection_rules() {
        assert_eq!(select_row(&[Some(10.0), Some(40.0)], Source::Heart).unwrap(), (0, false));
        assert_eq!(select_row(&[Some(10.0), Some(40.0)], Source::Lung).unwrap(), (1, false));
        assert_eq!(select_row(&[Some(40.0), Some(10.0)], Source::Heart).unwrap(), (1, false));
        assert_eq!(select_row(&[Some(7.0), Some(7.0)], Source::Heart).unwrap(), (0, true));
        assert_eq!(select_row(&[Some(7.0), Some(7.0)], Source::Lung).unwrap(), (1, true));
        assert_eq!(select_row(&[None, Some(7.0)], Source::Lung).unwrap(), (0, false));
        assert!(matches!(select_row(&[None, None], Source::Heart), Err(Error::NoPeaks { .. })));
    }

    #[test]
    fn mixture_scaling() {
        let a = AudioSegment::new(vec![0.5, -2.0, 1.0, 0.0], 100.0).unwrap();
        let (rows, scale) = mixture_rows(std::slice::from_ref(&a)).unwrap();
        assert_eq!(scale, 2.0);
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[0], vec![0.25, -1.0, 0.5, 0.0]);
        let silent = AudioSegment::new(vec![0.0; 4], 100.0).unwrap();
        assert!(matches!(mixture_rows(&[silent]), Err(Error::Degenerate(_))));
        let short = AudioSegment::new(vec![1.0; 3], 100.0).unwrap();
        assert!(matches!(mixture_rows(&[a, short]), Err(Error::Dimension(_))));
    }

    #[test]
    fn gain_does_not_change_assignment() {
        let ch = small_mixture(1);
        let cfg = small_config();
        let r1 = pl_nmf_separate(&ch, &cfg).unwrap();
        let loud: Vec<AudioSegment> = ch
            .iter()
            .map(|c| AudioSegment::new(c.samples().iter().map(|v| 8.0 * v).collect(), c.sample_rate()).unwrap())
            .collect();
        let r2 = pl_nmf_separate(&loud, &cfg).unwrap();
        assert_eq!(r1.heart_block.selected_row, r2.heart_block.selected_row);
        assert_eq!(r1.lung_block.selected_row, r2.lung_block.selected_row);
        for (a, b) in r1.heart.samples().iter().zip(r2.heart.samples()) {
            assert!((8.0 * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn inert_advisor_without_penalty_matches_pl() {
        let ch = small_mixture(2);
        let base = small_config();
        let pl = pl_nmf_separate(&ch, &base).unwrap();
        let cfg = LingoConfig {
            base,
            lambda_f: Some(0.0),
            ..LingoConfig::default()
        };
        let lingo = lingo_nmf_separate(&ch, &cfg, &EchoAdvisor).unwrap();
        assert_eq!(lingo.separation, pl);
        assert!(!lingo.advisor_log.is_empty());
    }

    #[test]
    fn failing_advisor_falls_back() {
        let ch = small_mixture(3);
        let cfg = LingoConfig {
            base: small_config(),
            ..LingoConfig::default()
        };
        let advisor = ExternalAdvisor::new("exit 3");
        let r = lingo_nmf_separate(&ch, &cfg, &advisor).unwrap();
        assert!(!r.advisor_log.is_empty());
        assert!(r.advisor_log.iter().all(|e| e.fallback.is_some()));
        assert_eq!(r.advisor_log[0].f_target, cfg.initial_f);
    }

    #[test]
    fn config_checks() {
        let mut cfg = SeparationConfig::default();
        cfg.lung.affine.lambda1 = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SeparationConfig::default();
        cfg.restarts = 0;
        assert!(cfg.validate().is_err());
        assert!(SeparationConfig::default().validate().is_ok());
    }
}
