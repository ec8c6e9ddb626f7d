//! Periodicity, spectra and waveform features.
//!
//! The autocorrelation here is the biased estimator: every lag is divided
//! by the full signal length, so it decays linearly for periodic input.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSegment {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl AudioSegment {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio segment is empty".into()));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {pos} is {}", samples[pos])));
        }
        Ok(AudioSegment {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Biased autocorrelation of a signal of length `T`.
///
/// `lags[k]` holds lag `k + 1`, so `lags` has length `T` and its last
/// entry (lag `T`, an empty sum) is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    pub zero_lag: f64,
    pub lags: Vec<f64>,
}

impl Autocorrelation {
    /// Value at lag `p`; `p == 0` is the signal power.
    pub fn at(&self, p: usize) -> f64 {
        if p == 0 {
            self.zero_lag
        } else {
            self.lags[p - 1]
        }
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeriodConfig {
    pub min_lag: usize,
    pub peak_threshold_ratio: f64,
}

impl Default for PeriodConfig {
    fn default() -> Self {
        PeriodConfig {
            min_lag: 2,
            peak_threshold_ratio: 0.3,
        }
    }
}

impl PeriodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_threshold_ratio > 0.0 && self.peak_threshold_ratio < 1.0) {
            return Err(Error::Config(format!(
                "peak_threshold_ratio must lie in (0, 1), got {}",
                self.peak_threshold_ratio
            )));
        }
        if self.min_lag == 0 {
            return Err(Error::Config("min_lag must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub period_samples: f64,
    pub peak_lags: Vec<usize>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub magnitudes: NonNegMatrix,
    pub sample_rate: f64,
    pub window_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes.cols()
    }

    pub fn bins(&self) -> usize {
        self.magnitudes.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub spectral_centroid: f64,
    pub rms_energy: f64,
    pub zero_crossing_rate: f64,
    pub variance: f64,
    pub mean_frequency: f64,
    pub max_amplitude: f64,
}

fn fft_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    fft.process(buf);
}

pub fn autocorrelation(x: &AudioSegment) -> Result<Autocorrelation> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "autocorrelation needs at least 2 samples, got {n}"
        )));
    }
    // Zero padding to 2n keeps the circular correlation free of wraparound.
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .samples()
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fft_in_place(&mut buf, false);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    fft_in_place(&mut buf, true);
    let scale = 1.0 / (size as f64 * n as f64);
    let zero_lag = buf[0].re * scale;
    let mut lags: Vec<f64> = (1..n).map(|p| buf[p].re * scale).collect();
    lags.push(0.0);
    Ok(Autocorrelation { zero_lag, lags })
}

/// Picks periodic peaks from an autocorrelation.
///
/// A peak is a local maximum at lag >= `min_lag` whose value reaches
/// `ratio` times the largest value at such lags. The input counts as
/// aperiodic (no peaks) when that largest value is itself below `ratio`
/// times the zero-lag power.
pub fn estimate_period(acf: &Autocorrelation, cfg: &PeriodConfig) -> Result<PeriodEstimate> {
    cfg.validate()?;
    let t = acf.max_lag();
    let ratio = cfg.peak_threshold_ratio;
    let lo = cfg.min_lag.max(1);
    if lo >= t {
        return Err(Error::NoPeaks { found: 0 });
    }
    let acf_max = (lo..=t).map(|p| acf.at(p)).fold(f64::NEG_INFINITY, f64::max);
    if !(acf_max > 0.0) || acf_max < ratio * acf.zero_lag {
        return Err(Error::NoPeaks { found: 0 });
    }
    let threshold = ratio * acf_max;
    let mut peaks = Vec::new();
    for p in lo..t {
        let v = acf.at(p);
        // Strict rise on the left and non-strict fall on the right takes the
        // first lag of a plateau.
        if v >= threshold && v > acf.at(p - 1) && v >= acf.at(p + 1) {
            peaks.push(p);
        }
    }
    if peaks.len() < 2 {
        return Err(Error::NoPeaks { found: peaks.len() });
    }
    let gaps: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let within = gaps
        .iter()
        .filter(|&&g| (g - mean).abs() <= 0.2 * mean)
        .count();
    Ok(PeriodEstimate {
        period_samples: mean,
        peak_lags: peaks,
        confidence: within as f64 / gaps.len() as f64,
    })
}

/// Autocorrelation followed by peak picking.
pub fn period_of(x: &AudioSegment, cfg: &PeriodConfig) -> Result<PeriodEstimate> {
    estimate_period(&autocorrelation(x)?, cfg)
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided Hann periodogram without a length check.
fn periodogram(samples: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let w = hann(n);
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .zip(&w)
        .map(|(&x, &wi)| Complex::new(x * wi, 0.0))
        .collect();
    fft_in_place(&mut buf, false);
    let half = n / 2;
    let freqs = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    let psd = (0..=half)
        .map(|k| {
            let p = if w_energy > 0.0 {
                buf[k].norm_sqr() / (fs * w_energy)
            } else {
                0.0
            };
            let edge = k == 0 || (n % 2 == 0 && k == half);
            if edge {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    (freqs, psd)
}

/// Single-window Hann periodogram in power per Hz.
///
/// Integrating `psd` over frequency with spacing `fs / N` returns the
/// Hann-weighted mean power of the signal.
pub fn power_spectral_density(x: &AudioSegment) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "power spectral density needs at least 8 samples, got {}",
            x.len()
        )));
    }
    Ok(periodogram(x.samples(), x.sample_rate()))
}

/// Frequency of the largest PSD value, DC excluded, lowest frequency on ties.
pub fn fundamental_frequency(freqs: &[f64], psd: &[f64]) -> Result<f64> {
    if psd.is_empty() || freqs.len() != psd.len() {
        return Err(Error::Dimension(format!(
            "{} frequencies for {} PSD values",
            freqs.len(),
            psd.len()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, &p) in psd.iter().enumerate().skip(1) {
        if best.map_or(true, |(_, b)| p > b) {
            best = Some((k, p));
        }
    }
    match best {
        Some((k, p)) if p > 0.0 => Ok(freqs[k]),
        _ => Err(Error::Degenerate("power spectrum is zero outside DC".into())),
    }
}

/// The `count` largest local maxima of a PSD (DC excluded), strongest first.
pub fn psd_peaks(freqs: &[f64], psd: &[f64], count: usize) -> Vec<(f64, f64)> {
    let n = psd.len();
    let mut peaks: Vec<(f64, f64)> = (1..n)
        .filter(|&k| {
            let left = psd[k - 1];
            let right = if k + 1 < n { psd[k + 1] } else { f64::NEG_INFINITY };
            psd[k] > 0.0 && psd[k] > left && psd[k] >= right
        })
        .map(|k| (freqs[k], psd[k]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    peaks.truncate(count);
    peaks
}

pub fn extract_features(x: &AudioSegment) -> FeatureVector {
    let s = x.samples();
    let n = s.len() as f64;
    let (freqs, psd) = periodogram(s, x.sample_rate());
    let total: f64 = psd.iter().sum();
    let centroid = if total > 0.0 {
        freqs.iter().zip(&psd).map(|(f, p)| f * p).sum::<f64>() / total
    } else {
        0.0
    };
    let mean = s.iter().sum::<f64>() / n;
    let variance = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rms = (s.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let crossings = s
        .windows(2)
        .filter(|w| (w[0] > 0.0 && w[1] < 0.0) || (w[0] < 0.0 && w[1] > 0.0))
        .count();
    let zcr = if s.len() > 1 {
        crossings as f64 / (n - 1.0)
    } else {
        0.0
    };
    FeatureVector {
        spectral_centroid: centroid,
        rms_energy: rms,
        zero_crossing_rate: zcr,
        variance,
        mean_frequency: centroid,
        max_amplitude: s.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
    }
}

/// Hann-windowed magnitude STFT; rows are frequency bins `0..=window_len/2`.
pub fn stft_spectrogram(x: &AudioSegment, window_len: usize, hop: usize) -> Result<Spectrogram> {
    let n = x.len();
    if window_len == 0 || window_len > n {
        return Err(Error::InvalidInput(format!(
            "window length {window_len} does not fit a signal of {n} samples"
        )));
    }
    if hop == 0 {
        return Err(Error::InvalidInput("hop must be at least 1".into()));
    }
    let frames = 1 + (n - window_len) / hop;
    let bins = window_len / 2 + 1;
    let w = hann(window_len);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(window_len);
    let mut data = vec![0.0; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    for f in 0..frames {
        let frame = &x.samples()[f * hop..f * hop + window_len];
        for ((b, &v), &wi) in buf.iter_mut().zip(frame).zip(&w) {
            *b = Complex::new(v * wi, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[k * frames + f] = buf[k].norm();
        }
    }
    Ok(Spectrogram {
        magnitudes: NonNegMatrix::new(bins, frames, data)?,
        sample_rate: x.sample_rate(),
        window_len,
        hop,
    })
}
