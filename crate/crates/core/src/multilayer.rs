//! Multilayer NMF cascade `Y ≈ A⁽¹⁾A⁽²⁾⋯A⁽ᴸ⁾X`, bounding-factor
//! initialization of the deeper bases, and the restart harness that measures
//! escape and survival probabilities across layers.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;
use crate::nmf::{self, AlphaNmfConfig, DivergenceOnly, IterationMonitor};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChemInitConfig {
    pub bounding_factor: f64,
    /// Inverse temperature of the escape model.
    pub beta: f64,
    pub partition_z: f64,
}

impl Default for ChemInitConfig {
    fn default() -> Self {
        ChemInitConfig {
            bounding_factor: 0.5,
            beta: 1.0,
            partition_z: 1.0,
        }
    }
}

impl ChemInitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bounding_factor) {
            return Err(Error::Config(format!(
                "bounding_factor must lie in [0, 1], got {}",
                self.bounding_factor
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.partition_z > 0.0 && self.partition_z.is_finite()) {
            return Err(Error::Config(format!(
                "partition_z must be positive, got {}",
                self.partition_z
            )));
        }
        Ok(())
    }
}

/// How the basis of every layer after the first is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerInit {
    /// Plain seeded random basis (the α-NMF baseline).
    Random,
    /// Random basis blended toward the mean of the previous layer's basis.
    Chem(ChemInitConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layer_a: Vec<NonNegMatrix>,
    pub final_x: NonNegMatrix,
    pub ranks: Vec<usize>,
    /// Final divergence of each layer, `D_l = D_α(X⁽ˡ⁻¹⁾ ‖ A⁽ˡ⁾X⁽ˡ⁾)`.
    pub layer_costs: Vec<f64>,
    pub per_layer_traces: Vec<Vec<f64>>,
}

impl LayerStack {
    /// `A_tot = A⁽¹⁾⋯A⁽ᴸ⁾`, of shape I×R_L.
    pub fn a_total(&self) -> NonNegMatrix {
        let mut acc = self.layer_a[0].clone();
        for a in &self.layer_a[1..] {
            acc = acc.matmul_unchecked(a);
        }
        acc
    }

    pub fn reconstruction(&self) -> NonNegMatrix {
        self.a_total().matmul_unchecked(&self.final_x)
    }

    pub fn depth(&self) -> usize {
        self.ranks.len()
    }
}

/// Blends a seeded random `R_{ℓ−1}×rank` basis with the constant matrix
/// filled with `mean(prev_a)`: `(1−bf)·A_rand + bf·A_base`.
pub fn chem_init(prev_a: &NonNegMatrix, rank: usize, bounding_factor: f64, seed: u64) -> Result<NonNegMatrix> {
    if !(0.0..=1.0).contains(&bounding_factor) {
        return Err(Error::Config(format!(
            "bounding_factor must lie in [0, 1], got {bounding_factor}"
        )));
    }
    if rank == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    let random = random_basis(prev_a.cols(), rank, seed);
    let base = prev_a.mean();
    let blended = random
        .data()
        .iter()
        .map(|&r| (1.0 - bounding_factor) * r + bounding_factor * base)
        .collect();
    NonNegMatrix::new(prev_a.cols(), rank, blended)
}

fn random_basis(rows: usize, rank: usize, seed: u64) -> NonNegMatrix {
    nmf::random_block(&mut rng::stream(seed), rows, rank, 1.0)
}

fn layer_seed(base: u64, layer: usize, part: u64) -> u64 {
    rng::derive_seed(base, &[layer as u64, part])
}

fn validate_ranks(y: &NonNegMatrix, ranks: &[usize]) -> Result<()> {
    let Some(&first) = ranks.first() else {
        return Err(Error::Config("rank schedule is empty".into()));
    };
    if ranks.contains(&0) {
        return Err(Error::Config("every layer rank must be at least 1".into()));
    }
    if first > y.rows().min(y.cols()) {
        return Err(Error::Config(format!(
            "first layer rank {first} exceeds min({}, {})",
            y.rows(),
            y.cols()
        )));
    }
    if let Some(w) = ranks.windows(2).find(|w| w[1] > w[0]) {
        return Err(Error::Config(format!(
            "rank schedule must be non-increasing, found {} after {}",
            w[1], w[0]
        )));
    }
    Ok(())
}

pub fn multilayer_factorize(
    y: &NonNegMatrix,
    ranks: &[usize],
    nmf_config: &AlphaNmfConfig,
    init: &LayerInit,
) -> Result<LayerStack> {
    multilayer_factorize_monitored(y, ranks, nmf_config, init, &mut DivergenceOnly)
}

/// As [`multilayer_factorize`], with `last_layer` observing the iterations of
/// the final layer.
pub fn multilayer_factorize_monitored(
    y: &NonNegMatrix,
    ranks: &[usize],
    nmf_config: &AlphaNmfConfig,
    init: &LayerInit,
    last_layer: &mut dyn IterationMonitor,
) -> Result<LayerStack> {
    nmf_config.validate()?;
    if let LayerInit::Chem(chem) = init {
        chem.validate()?;
    }
    validate_ranks(y, ranks)?;

    let depth = ranks.len();
    let mut layer_a = Vec::with_capacity(depth);
    let mut layer_costs = Vec::with_capacity(depth);
    let mut per_layer_traces = Vec::with_capacity(depth);
    let mut input = y.clone();

    for (layer, &rank) in ranks.iter().enumerate() {
        let (a0, x0) = if layer == 0 {
            nmf::initial_factors(&input, rank, nmf_config.seed)
        } else {
            let prev_a: &NonNegMatrix = &layer_a[layer - 1];
            let a_seed = layer_seed(nmf_config.seed, layer, 0);
            let a0 = match init {
                LayerInit::Random => random_basis(prev_a.cols(), rank, a_seed),
                LayerInit::Chem(chem) => chem_init(prev_a, rank, chem.bounding_factor, a_seed)?,
            };
            let mut x_stream = rng::stream(layer_seed(nmf_config.seed, layer, 1));
            let x0 = nmf::random_block(&mut x_stream, rank, input.cols(), input.mean() / rank as f64);
            (a0, x0)
        };

        let cfg = AlphaNmfConfig {
            rank,
            ..nmf_config.clone()
        };
        let result = if layer + 1 == depth {
            nmf::factorize_from(&input, a0, x0, &cfg, last_layer)?
        } else {
            nmf::factorize_from(&input, a0, x0, &cfg, &mut DivergenceOnly)?
        };
        layer_costs.push(result.final_cost());
        per_layer_traces.push(result.cost_trace);
        layer_a.push(result.a);
        input = result.x;
    }

    Ok(LayerStack {
        layer_a,
        final_x: input,
        ranks: ranks.to_vec(),
        layer_costs,
        per_layer_traces,
    })
}

/// Highest cost along `cost_trace` minus `global_min_estimate`.
pub fn energy_barrier(cost_trace: &[f64], global_min_estimate: f64) -> Result<f64> {
    let Some(min) = cost_trace.iter().copied().reduce(f64::min) else {
        return Err(Error::InvalidInput("cost trace is empty".into()));
    };
    if global_min_estimate > min {
        return Err(Error::InvalidInput(format!(
            "global minimum estimate {global_min_estimate} exceeds the trace minimum {min}"
        )));
    }
    let max = cost_trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max - global_min_estimate)
}

/// `(1/Z)·exp(−β·ξ)`.
pub fn boltzmann_escape_probability(barrier: f64, beta: f64, partition_z: f64) -> Result<f64> {
    if !(barrier >= 0.0) {
        return Err(Error::InvalidInput(format!("barrier must be non-negative, got {barrier}")));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    if !(partition_z >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "partition_z must be at least 1, got {partition_z}"
        )));
    }
    Ok((-beta * barrier).exp() / partition_z)
}

/// Cumulative products `Π_{l≤n}(1 − P_l)`.
pub fn survival_probability(escape_probs: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = escape_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("escape probability {p} outside [0, 1]")));
    }
    Ok(escape_probs
        .iter()
        .scan(1.0, |acc, p| {
            *acc *= 1.0 - p;
            Some(*acc)
        })
        .collect())
}

/// Tolerance for counting a restart as having reached the best solution.
pub fn escape_tolerance(best: f64) -> f64 {
    1e-3 * (1.0 + best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub trials: usize,
    pub ranks: Vec<usize>,
    /// Fraction of restarts whose layer-l divergence lands within tolerance of
    /// the best layer-l divergence seen in the experiment.
    pub per_layer_escape_estimates: Vec<f64>,
    /// `Π_{l≤n}(1 − P̂_l)` for the multilayer cascade.
    pub survival_curve: Vec<f64>,
    /// `(1 − P̂_1)^n`: the same number of attempts confined to the first layer.
    pub single_layer_survival: Vec<f64>,
    /// Mean over restarts of the energy barrier at each layer.
    pub barrier_estimates: Vec<f64>,
    /// Mean over restarts of the highest cost along each layer's path.
    pub path_max_costs: Vec<f64>,
    /// Boltzmann escape probability of each mean barrier.
    pub boltzmann_escape: Vec<f64>,
    pub layer_best: Vec<f64>,
    /// `trial_layer_costs[trial][layer]`.
    pub trial_layer_costs: Vec<Vec<f64>>,
    pub beta: f64,
    pub partition_z: f64,
    pub base_seed: u64,
}

impl EscapeReport {
    /// Whether restart `trial` escaped at `layer`.
    pub fn escaped(&self, trial: usize, layer: usize) -> bool {
        let best = self.layer_best[layer];
        self.trial_layer_costs[trial][layer] <= best + escape_tolerance(best)
    }

    /// Survival gap `single − multi` at `depth` (1-based) recomputed on a
    /// resample of the trials.
    fn survival_gap_on(&self, sample: &[usize], depth: usize) -> f64 {
        let n = sample.len() as f64;
        let probs: Vec<f64> = (0..depth)
            .map(|l| sample.iter().filter(|&&t| self.escaped(t, l)).count() as f64 / n)
            .collect();
        let multi: f64 = probs.iter().map(|p| 1.0 - p).product();
        let single = (1.0 - probs[0]).powi(depth as i32);
        single - multi
    }

    /// Bootstrap lower quantile of `single_survival − multi_survival` at
    /// `depth`. A positive value means the cascade survives less often at the
    /// given one-sided confidence.
    pub fn bootstrap_survival_gap(&self, depth: usize, resamples: usize, confidence: f64, seed: u64) -> Result<f64> {
        if depth == 0 || depth > self.ranks.len() {
            return Err(Error::InvalidInput(format!(
                "depth {depth} outside 1..={}",
                self.ranks.len()
            )));
        }
        if resamples == 0 || !(0.0..1.0).contains(&confidence) {
            return Err(Error::InvalidInput("need resamples ≥ 1 and confidence in [0, 1)".into()));
        }
        use rand::Rng;
        let mut stream = rng::stream(seed);
        let mut gaps: Vec<f64> = (0..resamples)
            .map(|_| {
                let sample: Vec<usize> = (0..self.trials).map(|_| stream.gen_range(0..self.trials)).collect();
                self.survival_gap_on(&sample, depth)
            })
            .collect();
        gaps.sort_by(f64::total_cmp);
        let idx = (((1.0 - confidence) * resamples as f64).floor() as usize).min(resamples - 1);
        Ok(gaps[idx])
    }
}

fn uniform_block(g: &mut rng::SeededRng, rows: usize, cols: usize) -> Result<NonNegMatrix> {
    NonNegMatrix::from_fn(rows, cols, |_, _| g.gen::<f64>())
}

fn half_loaded_basis(
    g: &mut rng::SeededRng,
    rows: usize,
    rank: usize,
    half: usize,
    upper: bool,
) -> Result<NonNegMatrix> {
    NonNegMatrix::from_fn(rows, rank, |i, _| {
        let v: f64 = g.gen();
        if (i < half) == upper {
            v
        } else {
            0.05 * v
        }
    })
}

/// Sum of two planted rank-`rank` factorizations whose bases load on
/// complementary halves of the rows (off-half entries shrunk to 5%), the
/// second weighted 0.7. Each planted model is a distinct basin for a
/// rank-`rank` fit.
pub fn multi_basin_instance(rows: usize, cols: usize, rank: usize, seed: u64) -> Result<NonNegMatrix> {
    if rows < 2 || cols == 0 || rank == 0 {
        return Err(Error::Config(format!(
            "multi-basin instance needs rows >= 2, cols >= 1, rank >= 1; got {rows}x{cols}, rank {rank}"
        )));
    }
    let mut g = rng::stream(seed);
    let half = rows / 2;
    let a1 = half_loaded_basis(&mut g, rows, rank, half, true)?;
    let x1 = uniform_block(&mut g, rank, cols)?;
    let a2 = half_loaded_basis(&mut g, rows, rank, half, false)?;
    let x2 = uniform_block(&mut g, rank, cols)?;
    let p1 = a1.matmul(&x1)?;
    let p2 = a2.matmul(&x2)?;
    NonNegMatrix::from_fn(rows, cols, |i, j| p1.get(i, j) + 0.7 * p2.get(i, j))
}

/// Runs `trials` seeded restarts of the cascade and estimates per-layer
/// escape probabilities, barriers and survival curves.
pub fn escape_experiment(
    y: &NonNegMatrix,
    ranks: &[usize],
    nmf_config: &AlphaNmfConfig,
    chem_config: &ChemInitConfig,
    trials: usize,
) -> Result<EscapeReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    chem_config.validate()?;
    let init = LayerInit::Chem(chem_config.clone());
    let stacks: Vec<LayerStack> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let cfg = AlphaNmfConfig {
                seed: rng::derive_seed(nmf_config.seed, &[trial as u64]),
                ..nmf_config.clone()
            };
            multilayer_factorize(y, ranks, &cfg, &init)
        })
        .collect::<Result<_>>()?;

    let depth = ranks.len();
    let trial_layer_costs: Vec<Vec<f64>> = stacks.iter().map(|s| s.layer_costs.clone()).collect();
    let layer_best: Vec<f64> = (0..depth)
        .map(|l| trial_layer_costs.iter().map(|c| c[l]).fold(f64::INFINITY, f64::min))
        .collect();

    let n = trials as f64;
    let per_layer_escape_estimates: Vec<f64> = (0..depth)
        .map(|l| {
            let best = layer_best[l];
            trial_layer_costs
                .iter()
                .filter(|c| c[l] <= best + escape_tolerance(best))
                .count() as f64
                / n
        })
        .collect();

    let mut barrier_estimates = Vec::with_capacity(depth);
    let mut path_max_costs = Vec::with_capacity(depth);
    let mut boltzmann_escape = Vec::with_capacity(depth);
    for l in 0..depth {
        let mut barrier_sum = 0.0;
        let mut max_sum = 0.0;
        for stack in &stacks {
            let trace = &stack.per_layer_traces[l];
            barrier_sum += energy_barrier(trace, layer_best[l])?;
            max_sum += trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let barrier = barrier_sum / n;
        barrier_estimates.push(barrier);
        path_max_costs.push(max_sum / n);
        boltzmann_escape.push(boltzmann_escape_probability(
            barrier,
            chem_config.beta,
            chem_config.partition_z.max(1.0),
        )?);
    }

    let survival_curve = survival_probability(&per_layer_escape_estimates)?;
    let single_layer_survival = (1..=depth)
        .map(|k| (1.0 - per_layer_escape_estimates[0]).powi(k as i32))
        .collect();

    Ok(EscapeReport {
        trials,
        ranks: ranks.to_vec(),
        per_layer_escape_estimates,
        survival_curve,
        single_layer_survival,
        barrier_estimates,
        path_max_costs,
        boltzmann_escape,
        layer_best,
        trial_layer_costs,
        beta: chem_config.beta,
        partition_z: chem_config.partition_z,
        base_seed: nmf_config.seed,
    })
}
