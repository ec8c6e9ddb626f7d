//! Single-layer α-divergence NMF with multiplicative updates.
//!
//! The model is `Y ≈ A·X` with `Y` of shape I×T, `A` of shape I×J and `X` of
//! shape J×T. The cost is the α-divergence
//!
//! ```text
//! D_α(Y‖AX) = 1/(α(α−1)) Σ_it ( y^α ŷ^(1−α) − α y + (α−1) ŷ ),   ŷ = [AX]_it
//! ```
//!
//! with the Kullback–Leibler form `Σ y ln(y/ŷ) − y + ŷ` at α = 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaNmfConfig {
    pub alpha: f64,
    pub rank: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub epsilon_floor: f64,
    pub seed: u64,
}

impl Default for AlphaNmfConfig {
    fn default() -> Self {
        AlphaNmfConfig {
            alpha: 1.0,
            rank: 2,
            max_iter: 500,
            rel_tol: 1e-6,
            epsilon_floor: 1e-12,
            seed: 0,
        }
    }
}

impl AlphaNmfConfig {
    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Config(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon_floor must be positive, got {}",
                self.epsilon_floor
            )));
        }
        Ok(())
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationResult {
    pub a: NonNegMatrix,
    pub x: NonNegMatrix,
    /// Cost of the initial factors followed by the cost after every iteration.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FactorizationResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace holds the initial cost")
    }
}

/// Per-entry divergence `y·g(ln(ŷ/y))`, evaluated without the cancellation of
/// the direct formula so traces stay monotone at the last few ulps.
struct EntryDivergence {
    alpha: f64,
    // c_k / k! for k = 2..=SERIES_TERMS+1
    series: [f64; SERIES_TERMS],
}

const SERIES_TERMS: usize = 14;
const SERIES_RADIUS: f64 = 0.05;
const EXACT_FIT_RELATIVE: f64 = 1e-20;

impl EntryDivergence {
    fn new(alpha: f64) -> Self {
        let mut series = [0.0; SERIES_TERMS];
        let mut factorial = 1.0;
        let mut pow = 1.0; // (1−α)^(k−1)
        for (idx, slot) in series.iter_mut().enumerate() {
            let k = idx + 2;
            factorial *= k as f64;
            pow *= 1.0 - alpha;
            *slot = (1.0 - pow) / alpha / factorial;
        }
        EntryDivergence { alpha, series }
    }

    #[inline]
    fn eval(&self, y: f64, yhat: f64) -> f64 {
        if y == 0.0 {
            return yhat / self.alpha;
        }
        let u = (yhat / y).ln();
        if u.abs() < SERIES_RADIUS {
            let mut acc = 0.0;
            for c in self.series.iter().rev() {
                acc = (acc + c) * u;
            }
            return y * (acc * u).max(0.0);
        }
        let d = if self.alpha == 1.0 {
            yhat - y - y * u
        } else {
            let a = self.alpha;
            (y.powf(a) * yhat.powf(1.0 - a) - a * y + (a - 1.0) * yhat) / (a * (a - 1.0))
        };
        d.max(0.0)
    }
}

fn check_conformable(y: &NonNegMatrix, a: &NonNegMatrix, x: &NonNegMatrix) -> Result<()> {
    if a.rows() != y.rows() || x.cols() != y.cols() || a.cols() != x.rows() {
        return Err(Error::Dimension(format!(
            "Y is {}x{}, A is {}x{}, X is {}x{}",
            y.rows(),
            y.cols(),
            a.rows(),
            a.cols(),
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

fn floored_product(a: &NonNegMatrix, x: &NonNegMatrix, epsilon_floor: f64) -> NonNegMatrix {
    let mut yhat = a.matmul_unchecked(x);
    for v in yhat.data_mut() {
        *v = v.max(epsilon_floor);
    }
    yhat
}

pub(crate) fn divergence_to_estimate(y: &NonNegMatrix, yhat: &NonNegMatrix, alpha: f64) -> f64 {
    let entry = EntryDivergence::new(alpha);
    y.data()
        .iter()
        .zip(yhat.data())
        .map(|(&yv, &hv)| entry.eval(yv, hv))
        .sum()
}

/// α-divergence `D_α(Y‖AX)` with `AX` floored at `epsilon_floor`.
pub fn alpha_divergence(
    y: &NonNegMatrix,
    a: &NonNegMatrix,
    x: &NonNegMatrix,
    alpha: f64,
    epsilon_floor: f64,
) -> Result<f64> {
    validate_alpha(alpha)?;
    check_conformable(y, a, x)?;
    if !(epsilon_floor > 0.0) {
        return Err(Error::Config("epsilon_floor must be positive".into()));
    }
    let yhat = floored_product(a, x, epsilon_floor);
    let d = divergence_to_estimate(y, &yhat, alpha);
    if !d.is_finite() {
        return Err(Error::NonFinite("divergence overflowed".into()));
    }
    Ok(d)
}

/// `(Y ⊘ Ŷ)^α` elementwise.
fn ratio_power(y: &NonNegMatrix, yhat: &NonNegMatrix, alpha: f64) -> Vec<f64> {
    let pow: fn(f64, f64) -> f64 = if alpha == 1.0 {
        |r, _| r
    } else if alpha == 2.0 {
        |r, _| r * r
    } else if alpha == 0.5 {
        |r, _| r.sqrt()
    } else {
        f64::powf
    };
    y.data()
        .iter()
        .zip(yhat.data())
        .map(|(&yv, &hv)| pow(yv / hv, alpha))
        .collect()
}

#[inline]
fn root(v: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        v
    } else if alpha == 2.0 {
        v.sqrt()
    } else if alpha == 0.5 {
        v * v
    } else {
        v.powf(1.0 / alpha)
    }
}

fn update_x_in_place(y: &NonNegMatrix, a: &NonNegMatrix, x: &mut NonNegMatrix, alpha: f64, eps: f64) {
    let (i_dim, t_dim) = y.shape();
    let j_dim = a.cols();
    let yhat = floored_product(a, x, eps);
    let r = ratio_power(y, &yhat, alpha);
    let mut num = vec![0.0; j_dim * t_dim];
    let mut den = vec![0.0; j_dim];
    for i in 0..i_dim {
        let r_row = &r[i * t_dim..(i + 1) * t_dim];
        for j in 0..j_dim {
            let aij = a.get(i, j);
            den[j] += aij;
            if aij == 0.0 {
                continue;
            }
            for (n, &rv) in num[j * t_dim..(j + 1) * t_dim].iter_mut().zip(r_row) {
                *n += aij * rv;
            }
        }
    }
    let xd = x.data_mut();
    for j in 0..j_dim {
        if den[j] == 0.0 {
            continue;
        }
        for t in 0..t_dim {
            xd[j * t_dim + t] *= root(num[j * t_dim + t] / den[j], alpha);
        }
    }
}

fn update_a_in_place(y: &NonNegMatrix, a: &mut NonNegMatrix, x: &NonNegMatrix, alpha: f64, eps: f64) {
    let (i_dim, t_dim) = y.shape();
    let j_dim = x.rows();
    let yhat = floored_product(a, x, eps);
    let r = ratio_power(y, &yhat, alpha);
    let den: Vec<f64> = (0..j_dim).map(|j| x.row(j).iter().sum()).collect();
    let ad = a.data_mut();
    for i in 0..i_dim {
        let r_row = &r[i * t_dim..(i + 1) * t_dim];
        for j in 0..j_dim {
            if den[j] == 0.0 {
                continue;
            }
            let num: f64 = r_row.iter().zip(x.row(j)).map(|(rv, xv)| rv * xv).sum();
            ad[i * j_dim + j] *= root(num / den[j], alpha);
        }
    }
}

fn ensure_finite(m: &NonNegMatrix, what: &str) -> Result<()> {
    if m.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} update produced a non-finite entry; epsilon_floor may be too small"
        )))
    }
}

/// One multiplicative step: `X` first, then `A` against the updated `X`.
pub fn update_step(
    y: &NonNegMatrix,
    a: &NonNegMatrix,
    x: &NonNegMatrix,
    alpha: f64,
    epsilon_floor: f64,
) -> Result<(NonNegMatrix, NonNegMatrix)> {
    validate_alpha(alpha)?;
    check_conformable(y, a, x)?;
    let mut a = a.clone();
    let mut x = x.clone();
    step_in_place(y, &mut a, &mut x, alpha, epsilon_floor)?;
    Ok((a, x))
}

fn step_in_place(
    y: &NonNegMatrix,
    a: &mut NonNegMatrix,
    x: &mut NonNegMatrix,
    alpha: f64,
    eps: f64,
) -> Result<()> {
    update_x_in_place(y, a, x, alpha, eps);
    ensure_finite(x, "X")?;
    update_a_in_place(y, a, x, alpha, eps);
    ensure_finite(a, "A")
}

/// Rescales the columns of `A` to unit L1 norm and compensates in the rows
/// of `X`, leaving the product unchanged.
pub fn normalize_factors(a: &NonNegMatrix, x: &NonNegMatrix) -> Result<(NonNegMatrix, NonNegMatrix)> {
    if a.cols() != x.rows() {
        return Err(Error::Dimension(format!(
            "A has {} columns but X has {} rows",
            a.cols(),
            x.rows()
        )));
    }
    let sums = column_sums(a);
    if let Some(j) = sums.iter().position(|&s| s == 0.0) {
        return Err(Error::Degenerate(format!("column {j} of A is all zero")));
    }
    let mut a = a.clone();
    let mut x = x.clone();
    rescale(&mut a, &mut x, &sums);
    Ok((a, x))
}

fn column_sums(a: &NonNegMatrix) -> Vec<f64> {
    let mut sums = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        for (s, v) in sums.iter_mut().zip(a.row(i)) {
            *s += v;
        }
    }
    sums
}

fn rescale(a: &mut NonNegMatrix, x: &mut NonNegMatrix, sums: &[f64]) {
    let cols = a.cols();
    for (idx, v) in a.data_mut().iter_mut().enumerate() {
        let s = sums[idx % cols];
        if s > 0.0 {
            *v /= s;
        }
    }
    let t_dim = x.cols();
    for (idx, v) in x.data_mut().iter_mut().enumerate() {
        let s = sums[idx / t_dim];
        if s > 0.0 {
            *v *= s;
        }
    }
}

/// Seeded starting point: `A` uniform on (0,1], `X` uniform on (0,1] scaled
/// by `mean(Y)/rank`.
pub fn initial_factors(y: &NonNegMatrix, rank: usize, seed: u64) -> (NonNegMatrix, NonNegMatrix) {
    let mut stream = rng::stream(seed);
    let a = random_block(&mut stream, y.rows(), rank, 1.0);
    let x = random_block(&mut stream, rank, y.cols(), y.mean() / rank as f64);
    (a, x)
}

pub(crate) fn random_block(stream: &mut rng::SeededRng, rows: usize, cols: usize, scale: f64) -> NonNegMatrix {
    let data = (0..rows * cols)
        .map(|_| rng::unit_open_closed(stream) * scale)
        .collect();
    NonNegMatrix::from_raw(rows, cols, data)
}

/// Hook into the iteration loop. `observe` returns the cost that drives the
/// stopping rule; the plain factorization uses `D_α` itself.
pub trait IterationMonitor {
    fn observe(&mut self, iteration: usize, a: &NonNegMatrix, x: &NonNegMatrix, divergence: f64) -> f64;
}

pub struct DivergenceOnly;

impl IterationMonitor for DivergenceOnly {
    fn observe(&mut self, _: usize, _: &NonNegMatrix, _: &NonNegMatrix, divergence: f64) -> f64 {
        divergence
    }
}

fn check_input(y: &NonNegMatrix, config: &AlphaNmfConfig) -> Result<()> {
    config.validate()?;
    let (i_dim, t_dim) = y.shape();
    if config.rank > i_dim.min(t_dim) {
        return Err(Error::Config(format!(
            "rank {} exceeds min({i_dim}, {t_dim})",
            config.rank
        )));
    }
    if y.is_all_zero() {
        return Err(Error::Degenerate("Y is identically zero".into()));
    }
    Ok(())
}

/// Factorizes `Y` from the seeded random start in `config`.
pub fn factorize(y: &NonNegMatrix, config: &AlphaNmfConfig) -> Result<FactorizationResult> {
    check_input(y, config)?;
    let (a, x) = initial_factors(y, config.rank, config.seed);
    run_iterations(y, a, x, config, &mut DivergenceOnly)
}

/// Factorizes `Y` from the given starting factors.
pub fn factorize_from(
    y: &NonNegMatrix,
    a0: NonNegMatrix,
    x0: NonNegMatrix,
    config: &AlphaNmfConfig,
    monitor: &mut dyn IterationMonitor,
) -> Result<FactorizationResult> {
    check_input(y, config)?;
    check_conformable(y, &a0, &x0)?;
    if a0.cols() != config.rank {
        return Err(Error::Dimension(format!(
            "starting A has {} columns, config rank is {}",
            a0.cols(),
            config.rank
        )));
    }
    run_iterations(y, a0, x0, config, monitor)
}

fn run_iterations(
    y: &NonNegMatrix,
    mut a: NonNegMatrix,
    mut x: NonNegMatrix,
    config: &AlphaNmfConfig,
    monitor: &mut dyn IterationMonitor,
) -> Result<FactorizationResult> {
    let alpha = config.alpha;
    let eps = config.epsilon_floor;
    let entry_cost = |a: &NonNegMatrix, x: &NonNegMatrix| {
        divergence_to_estimate(y, &floored_product(a, x, eps), alpha)
    };

    // Below this the fit is exact to rounding and further steps only add noise.
    let exact_fit = EXACT_FIT_RELATIVE * y.sum();
    let mut cost = entry_cost(&a, &x);
    let mut governing = monitor.observe(0, &a, &x, cost);
    let mut cost_trace = Vec::with_capacity(config.max_iter.min(4096) + 1);
    cost_trace.push(cost);
    let mut converged = cost <= exact_fit;
    let mut iterations = 0;

    while !converged && iterations < config.max_iter {
        step_in_place(y, &mut a, &mut x, alpha, eps)?;
        let sums = column_sums(&a);
        rescale(&mut a, &mut x, &sums);
        iterations += 1;

        cost = entry_cost(&a, &x);
        if !cost.is_finite() {
            return Err(Error::NonFinite(format!("cost diverged at iteration {iterations}")));
        }
        cost_trace.push(cost);
        let next = monitor.observe(iterations, &a, &x, cost);
        let scale = governing.abs().max(f64::MIN_POSITIVE);
        converged = cost <= exact_fit || (governing - next).abs() / scale < config.rel_tol;
        governing = next;
    }

    Ok(FactorizationResult {
        a,
        x,
        cost_trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> NonNegMatrix {
        NonNegMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Direct evaluation of the defining sum, used as an oracle.
    fn naive_divergence(y: &NonNegMatrix, yhat: &NonNegMatrix, alpha: f64) -> f64 {
        y.data()
            .iter()
            .zip(yhat.data())
            .map(|(&yv, &hv)| {
                if alpha == 1.0 {
                    let l = if yv == 0.0 { 0.0 } else { yv * (yv / hv).ln() };
                    l - yv + hv
                } else {
                    (yv.powf(alpha) * hv.powf(1.0 - alpha) - alpha * yv + (alpha - 1.0) * hv)
                        / (alpha * (alpha - 1.0))
                }
            })
            .sum()
    }

    #[test]
    fn divergence_hand_values() {
        let y = m(&[&[1.0]]);
        let a = m(&[&[1.0]]);
        let x = m(&[&[2.0]]);
        let d2 = alpha_divergence(&y, &a, &x, 2.0, 1e-12).unwrap();
        assert!((d2 - 0.25).abs() < 1e-15);
        let d1 = alpha_divergence(&y, &a, &x, 1.0, 1e-12).unwrap();
        assert!((d1 - (0.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!((d1 - 0.30685).abs() < 1e-5);
    }

    #[test]
    fn divergence_zero_at_exact_fit() {
        let a = m(&[&[0.2, 0.7], &[0.8, 0.3]]);
        let x = m(&[&[1.0, 0.0, 2.0], &[0.5, 3.0, 0.0]]);
        let y = a.matmul(&x).unwrap();
        for alpha in [0.3, 0.5, 1.0, 1.5, 2.0] {
            assert_eq!(alpha_divergence(&y, &a, &x, alpha, 1e-12).unwrap(), 0.0);
        }
    }

    #[test]
    fn divergence_matches_naive_formula() {
        let y = m(&[&[0.0, 1.5, 2.0], &[0.3, 0.0, 4.0]]);
        let yhat = m(&[&[0.7, 1.2, 2.5], &[0.9, 0.4, 1.0]]);
        for alpha in [0.25, 0.5, 0.999, 1.0, 1.001, 1.5, 2.0] {
            let ours = divergence_to_estimate(&y, &yhat, alpha);
            let naive = naive_divergence(&y, &yhat, alpha);
            assert!((ours - naive).abs() < 1e-12 * naive.max(1.0), "alpha {alpha}: {ours} vs {naive}");
        }
        // Series branch near the fit.
        let close = m(&[&[1.0 + 1e-3, 1.5, 2.0 - 1e-3], &[0.3, 1e-9, 4.0]]);
        let y2 = m(&[&[1.0, 1.5 + 2e-3, 2.0], &[0.3 + 1e-4, 1e-9, 4.0 - 1e-2]]);
        for alpha in [0.5, 1.0, 1.7] {
            let ours = divergence_to_estimate(&y2, &close, alpha);
            let naive = naive_divergence(&y2, &close, alpha);
            assert!((ours - naive).abs() < 1e-9 * naive, "alpha {alpha}: {ours} vs {naive}");
        }
    }

    #[test]
    fn divergence_errors() {
        let y = m(&[&[1.0, 1.0]]);
        let a = m(&[&[1.0]]);
        let x = m(&[&[1.0]]);
        assert!(matches!(alpha_divergence(&y, &a, &x, 1.0, 1e-12), Err(Error::Dimension(_))));
        let x2 = m(&[&[1.0, 1.0]]);
        assert!(alpha_divergence(&y, &a, &x2, 0.0, 1e-12).is_err());
        assert!(alpha_divergence(&y, &a, &x2, 2.5, 1e-12).is_err());
    }

    #[test]
    fn kl_update_is_exact_for_scalar() {
        let y = m(&[&[2.0]]);
        let a = m(&[&[1.0]]);
        let x = m(&[&[1.0]]);
        let (_, x1) = update_step(&y, &a, &x, 1.0, 1e-12).unwrap();
        assert_eq!(x1.data(), &[2.0]);
    }

    #[test]
    fn fixed_point_is_preserved() {
        let a = m(&[&[0.25, 0.5], &[0.75, 0.5]]);
        let x = m(&[&[1.0, 2.0, 4.0], &[2.0, 0.5, 1.0]]);
        let y = a.matmul(&x).unwrap();
        for alpha in [0.5, 1.0, 2.0] {
            let (a1, x1) = update_step(&y, &a, &x, alpha, 1e-12).unwrap();
            assert!(a1.max_abs_diff(&a) < 1e-14, "alpha {alpha}");
            assert!(x1.max_abs_diff(&x) < 1e-14, "alpha {alpha}");
        }
    }

    #[test]
    fn normalize_examples() {
        let a = m(&[&[2.0], &[2.0]]);
        let x = m(&[&[3.0]]);
        let (an, xn) = normalize_factors(&a, &x).unwrap();
        assert_eq!(an.data(), &[0.5, 0.5]);
        assert_eq!(xn.data(), &[12.0]);

        let stochastic = m(&[&[0.25, 1.0], &[0.75, 0.0]]);
        let x = m(&[&[1.0], &[2.0]]);
        let (an, xn) = normalize_factors(&stochastic, &x).unwrap();
        assert_eq!(an, stochastic);
        assert_eq!(xn, x);

        let zero_col = m(&[&[0.0, 1.0], &[0.0, 1.0]]);
        assert!(matches!(normalize_factors(&zero_col, &x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn factorize_rejects_bad_input() {
        let y = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let cfg = AlphaNmfConfig { rank: 3, ..Default::default() };
        assert!(matches!(factorize(&y, &cfg), Err(Error::Config(_))));
        let zero = NonNegMatrix::filled(2, 2, 0.0).unwrap();
        assert!(matches!(
            factorize(&zero, &AlphaNmfConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let bad_tol = AlphaNmfConfig { rel_tol: 0.0, ..Default::default() };
        assert!(factorize(&y, &bad_tol).is_err());
    }

    #[test]
    fn factorize_is_deterministic() {
        let y = NonNegMatrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1).unwrap();
        let cfg = AlphaNmfConfig { seed: 11, ..Default::default() };
        let r1 = factorize(&y, &cfg).unwrap();
        let r2 = factorize(&y, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.cost_trace.len(), r1.iterations + 1);
    }
}
