//! WAV input and output, resampling, framing, manifests and the synthetic
//! heart/lung mixture generator.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::AudioSegment;

fn malformed(path: &Path, reason: impl ToString) -> Error {
    Error::MalformedAudio {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => Error::io(path, io),
        hound::Error::Unsupported => {
            Error::UnsupportedCodec(format!("{}: only PCM and IEEE float WAV are read", path.display()))
        }
        other => malformed(path, other),
    }
}

/// Reads every channel of a PCM or float WAV file, normalized to [-1, 1].
pub fn read_wav_channels(path: &Path) -> Result<Vec<AudioSegment>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(malformed(path, "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Int, bits @ 8..=32) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (format, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{}: {bits}-bit {format:?} samples",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(malformed(path, "no samples"));
    }
    let frames = interleaved.len() / channels;
    let rate = f64::from(spec.sample_rate);
    (0..channels)
        .map(|c| {
            let samples = (0..frames).map(|f| interleaved[f * channels + c]).collect();
            AudioSegment::new(samples, rate).map_err(|e| malformed(path, e))
        })
        .collect()
}

/// Reads a WAV file as mono; multiple channels are averaged.
pub fn read_wav(path: &Path) -> Result<AudioSegment> {
    let channels = read_wav_channels(path)?;
    if channels.len() == 1 {
        return Ok(channels.into_iter().next().expect("one channel"));
    }
    let n = channels[0].len();
    let c = channels.len() as f64;
    let mono = (0..n)
        .map(|i| channels.iter().map(|ch| ch.samples()[i]).sum::<f64>() / c)
        .collect();
    AudioSegment::new(mono, channels[0].sample_rate())
}

fn to_pcm16(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes equal-length channels as 16-bit PCM. Samples are clipped to
/// [-1, 1); the sample rate is rounded to whole Hz.
pub fn write_wav_channels(path: &Path, channels: &[&AudioSegment]) -> Result<()> {
    let Some(first) = channels.first() else {
        return Err(Error::InvalidInput("no channels to write".into()));
    };
    if channels.iter().any(|c| c.len() != first.len() || c.sample_rate() != first.sample_rate()) {
        return Err(Error::Dimension("channels differ in length or rate".into()));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: first.sample_rate().round() as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => malformed(path, other),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for i in 0..first.len() {
        for c in channels {
            writer.write_sample(to_pcm16(c.samples()[i])).map_err(to_err)?;
        }
    }
    writer.finalize().map_err(to_err)
}

pub fn write_wav(path: &Path, x: &AudioSegment) -> Result<()> {
    write_wav_channels(path, &[x])
}

fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Zero crossings of the interpolation kernel on each side, at the
/// narrower of the two rates.
const RESAMPLE_ZEROS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

/// Kaiser-windowed sinc resampling. The kernel cutoff sits at the lower
/// Nyquist frequency; the output has `round(N * target / source)` samples.
pub fn resample(x: &AudioSegment, target_rate: f64) -> Result<AudioSegment> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    let source = x.sample_rate();
    if target_rate == source {
        return Ok(x.clone());
    }
    let n = x.len();
    let ratio = target_rate / source;
    let out_len = ((n as f64 * ratio).round() as usize).max(1);
    let cutoff = ratio.min(1.0);
    let half_width = RESAMPLE_ZEROS / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);
    let s = x.samples();
    let out = (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(n - 1);
            let mut acc = 0.0;
            for (k, &v) in s.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let u = d / half_width;
                let window = bessel_i0(KAISER_BETA * (1.0 - u * u).max(0.0).sqrt()) / i0_beta;
                let arg = PI * cutoff * d;
                let sinc = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
                acc += v * cutoff * sinc * window;
            }
            acc
        })
        .collect();
    AudioSegment::new(out, target_rate)
}

/// Consecutive non-overlapping frames of `frame_s` seconds; a trailing
/// partial frame is dropped.
pub fn segment(x: &AudioSegment, frame_s: f64) -> Result<Vec<AudioSegment>> {
    let len = (frame_s * x.sample_rate()).round() as usize;
    if !(frame_s > 0.0) || len == 0 {
        return Err(Error::InvalidInput(format!("frame length {frame_s} s is empty")));
    }
    x.samples()
        .chunks_exact(len)
        .map(|c| AudioSegment::new(c.to_vec(), x.sample_rate()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file_name: String,
    pub gender: Gender,
    pub sound_type: String,
    pub location: String,
    /// Columns beyond the required four, keyed by their header text.
    pub extra: BTreeMap<String, String>,
}

const MANIFEST_COLUMNS: [&str; 4] = ["file_name", "gender", "sound_type", "location"];

fn normalize_header(h: &str) -> String {
    h.trim().to_lowercase().replace([' ', '-'], "_")
}

/// Loads a dataset manifest. Headers match case-insensitively, with spaces
/// and dashes read as underscores, in any column order.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::MalformedRow {
                line: 1,
                reason: format!("{other:?}"),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let names: Vec<String> = headers.iter().map(normalize_header).collect();
    let mut index = [0usize; 4];
    for (slot, col) in index.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = names
            .iter()
            .position(|n| n == col)
            .ok_or_else(|| Error::MissingColumn(col.to_string()))?;
    }

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let file_name = field(index[0]);
        if file_name.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty file name".into(),
            });
        }
        let gender = match field(index[1]).to_lowercase().as_str() {
            "female" | "f" => Gender::Female,
            "male" | "m" => Gender::Male,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("unknown gender `{other}`"),
                })
            }
        };
        let extra = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !index.contains(i))
            .map(|(i, h)| (h.to_string(), record.get(i).unwrap_or("").to_string()))
            .collect();
        entries.push(ManifestEntry {
            file_name,
            gender,
            sound_type: field(index[2]),
            location: field(index[3]),
            extra,
        });
    }
    Ok(entries)
}

/// Checks that every manifest entry names an existing file under `root`.
pub fn validate_manifest_files(entries: &[ManifestEntry], root: &Path) -> Result<()> {
    for e in entries {
        let p = root.join(&e.file_name);
        if !p.is_file() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest"),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthMixSpec {
    pub heart_period_s: f64,
    pub lung_period_s: f64,
    pub heart_band: (f64, f64),
    /// With a tone, each beat rings at that frequency and decays with time
    /// constant `heart_decay_s`; without one, each beat is a unit impulse.
    pub heart_tone_hz: Option<f64>,
    pub heart_decay_s: f64,
    pub lung_band: (f64, f64),
    /// Heart-to-lung energy ratio of the first channel.
    pub snr_db: f64,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub seed: u64,
    /// Heart and lung gains of an optional second channel, relative to the
    /// first. `None` produces a single-channel mixture.
    pub second_channel: Option<(f64, f64)>,
}

impl Default for SynthMixSpec {
    fn default() -> Self {
        SynthMixSpec {
            heart_period_s: 0.25,
            lung_period_s: 2.0,
            heart_band: (20.0, 150.0),
            heart_tone_hz: None,
            heart_decay_s: 0.01,
            lung_band: (200.0, 800.0),
            snr_db: 0.0,
            duration_s: 4.0,
            sample_rate: 4000.0,
            seed: 0,
            second_channel: Some((0.3, 2.0)),
        }
    }
}

impl SynthMixSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.sample_rate) || !positive(self.heart_period_s) || !positive(self.lung_period_s) {
            return Err(Error::Config("sample rate and periods must be positive".into()));
        }
        if !(self.duration_s >= 2.0 * self.heart_period_s.max(self.lung_period_s)) {
            return Err(Error::Config(format!(
                "duration {} s is shorter than two periods",
                self.duration_s
            )));
        }
        for (name, (lo, hi)) in [("heart", self.heart_band), ("lung", self.lung_band)] {
            if !(lo >= 0.0 && lo < hi && hi <= nyquist) {
                return Err(Error::Config(format!(
                    "{name} band ({lo}, {hi}) Hz must satisfy 0 <= lo < hi <= {nyquist}"
                )));
            }
        }
        if let Some(tone) = self.heart_tone_hz {
            if !(positive(tone) && positive(self.heart_decay_s)) {
                return Err(Error::Config("heart tone and decay must be positive".into()));
            }
            if tone >= nyquist {
                return Err(Error::Config(format!(
                    "heart tone {tone} Hz is not below Nyquist {nyquist} Hz"
                )));
            }
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        if let Some((h, l)) = self.second_channel {
            if !(positive(h) && positive(l)) {
                return Err(Error::Config("second-channel gains must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMixture {
    /// First channel is `heart_ref + lung_gain * lung_ref`; a second channel
    /// uses the gains of `SynthMixSpec::second_channel` on the same sources.
    pub channels: Vec<AudioSegment>,
    pub heart_ref: AudioSegment,
    pub lung_ref: AudioSegment,
    pub lung_gain: f64,
}

impl SynthMixture {
    pub fn mixture(&self) -> &AudioSegment {
        &self.channels[0]
    }
}

/// Keeps only the FFT bins inside `[lo, hi]` Hz.
fn band_limit(x: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * fs / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Heart: a beat (unit impulse or decaying tone burst) at every heart
/// period, band-limited and scaled to a peak of 0.5. Lung: band-limited Gaussian noise at unit RMS under a
/// raised-cosine envelope with the lung period. The first channel mixes
/// them at `snr_db`.
pub fn synth_mixture(spec: &SynthMixSpec) -> Result<SynthMixture> {
    spec.validate()?;
    let fs = spec.sample_rate;
    let n = (spec.duration_s * fs).round() as usize;

    let ring: Vec<f64> = match spec.heart_tone_hz {
        None => vec![1.0],
        Some(tone) => {
            let len = ((8.0 * spec.heart_decay_s * fs).ceil() as usize).max(1);
            (0..len)
                .map(|k| {
                    let t = k as f64 / fs;
                    (-t / spec.heart_decay_s).exp() * (2.0 * PI * tone * t).sin()
                })
                .collect()
        }
    };
    let mut beats = vec![0.0; n];
    let step = spec.heart_period_s * fs;
    let mut k = 0usize;
    loop {
        let start = (k as f64 * step).round() as usize;
        if start >= n {
            break;
        }
        for (b, r) in beats[start..].iter_mut().zip(&ring) {
            *b += r;
        }
        k += 1;
    }
    let mut heart = band_limit(&beats, fs, spec.heart_band.0, spec.heart_band.1);
    let peak = heart.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::Config("heart band removes the whole beat train".into()));
    }
    heart.iter_mut().for_each(|v| *v *= 0.5 / peak);

    let mut stream = rng::stream(rng::derive_seed(spec.seed, &[0x10]));
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut stream)).collect();
    let mut lung = band_limit(&noise, fs, spec.lung_band.0, spec.lung_band.1);
    let r = rms(&lung);
    if r == 0.0 {
        return Err(Error::Config("lung band removes all noise energy".into()));
    }
    for (i, v) in lung.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v *= 0.5 * (1.0 - (2.0 * PI * t / spec.lung_period_s).cos()) / r;
    }

    let lung_gain = rms(&heart) / rms(&lung) * 10f64.powf(-spec.snr_db / 20.0);
    let mix = |hg: f64, lg: f64| -> Vec<f64> {
        heart.iter().zip(&lung).map(|(h, l)| hg * h + lg * lung_gain * l).collect()
    };
    let mut channels = vec![AudioSegment::new(mix(1.0, 1.0), fs)?];
    if let Some((hg, lg)) = spec.second_channel {
        channels.push(AudioSegment::new(mix(hg, lg), fs)?);
    }
    Ok(SynthMixture {
        channels,
        heart_ref: AudioSegment::new(heart, fs)?,
        lung_ref: AudioSegment::new(lung, fs)?,
        lung_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{period_of, power_spectral_density, fundamental_frequency, PeriodConfig};

    #[test]
    fn wav_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.37).sin() * 0.9).collect();
        let seg = AudioSegment::new(x.clone(), 8000.0).unwrap();
        write_wav(&p, &seg).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate(), 8000.0);
        for (a, b) in x.iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_opposites_average_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let l: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 0.5).collect();
        let r: Vec<f64> = l.iter().map(|v| -v).collect();
        let ls = AudioSegment::new(l, 1000.0).unwrap();
        let rs = AudioSegment::new(r, 1000.0).unwrap();
        write_wav_channels(&p, &[&ls, &rs]).unwrap();
        assert!(read_wav(&p).unwrap().samples().iter().all(|&v| v.abs() <= 1.0 / 32768.0));
        assert_eq!(read_wav_channels(&p).unwrap().len(), 2);
    }

    #[test]
    fn float_wav_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 2000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for v in [0.25f32, -0.5, 1.0] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.25, -0.5, 1.0]);
    }

    fn mulaw_file(path: &Path) {
        let data = [0xffu8; 16];
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(4 + 26 + 8 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&18u32.to_le_bytes());
        b.extend_from_slice(&7u16.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&8u16.to_le_bytes());
        b.extend_from_slice(&0u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(&data);
        std::fs::write(path, b).unwrap();
    }

    #[test]
    fn mulaw_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mu.wav");
        mulaw_file(&p);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedCodec(_))));
    }

    #[test]
    fn truncated_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        std::fs::write(&p, b"RIFF\x10\x00\x00\x00WAVE").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::MalformedAudio { .. })));
        assert!(matches!(read_wav(&dir.path().join("none.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn resample_lengths_and_tone() {
        let x = AudioSegment::new(vec![0.1; 441], 44100.0).unwrap();
        assert_eq!(resample(&x, 44100.0).unwrap(), x);
        let half = resample(&x, 22050.0).unwrap();
        assert!((half.len() as i64 - 220).abs() <= 1);

        let fs = 8000.0;
        let tone: Vec<f64> = (0..8000).map(|i| (2.0 * PI * 100.0 * i as f64 / fs).sin()).collect();
        let down = resample(&AudioSegment::new(tone, fs).unwrap(), 4000.0).unwrap();
        assert_eq!(down.len(), 4000);
        let (f, p) = power_spectral_density(&down).unwrap();
        assert!((fundamental_frequency(&f, &p).unwrap() - 100.0).abs() <= 1.0);
    }

    #[test]
    fn segments_drop_partial_frame() {
        let x = AudioSegment::new(vec![0.0; 2500], 1000.0).unwrap();
        let frames = segment(&x, 1.0).unwrap();
        assert_eq!(frames.len(), 2);
        assert!(frames.iter().all(|f| f.len() == 1000));
    }

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(
            &p,
            "Location,File Name,Gender,Sound Type,Notes\nRUSB,H1.wav,Female,Normal,x\nLLSB,H2.wav,male,S3,\n",
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].file_name, "H1.wav");
        assert_eq!(m[1].gender, Gender::Male);
        assert_eq!(m[0].extra["Notes"], "x");

        std::fs::write(&p, "file_name,sound_type,location\na.wav,N,X\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::MissingColumn(c)) if c == "gender"));

        std::fs::write(&p, "file_name,gender,sound_type,location\na.wav,other,N,X\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn synth_is_additive_and_periodic() {
        let spec = SynthMixSpec::default();
        let m = synth_mixture(&spec).unwrap();
        for i in 0..m.mixture().len() {
            let r = m.mixture().samples()[i] - m.heart_ref.samples()[i] - m.lung_gain * m.lung_ref.samples()[i];
            assert!(r.abs() <= 1e-15);
        }
        assert_eq!(synth_mixture(&spec).unwrap(), m);
        let want = spec.heart_period_s * spec.sample_rate;
        for tone in [None, Some(60.0)] {
            let m = synth_mixture(&SynthMixSpec { heart_tone_hz: tone, ..spec.clone() }).unwrap();
            let est = period_of(&m.heart_ref, &PeriodConfig::default()).unwrap();
            assert!((est.period_samples - want).abs() <= 0.1 * want);
            if let Some(hz) = tone {
                let (f, p) = power_spectral_density(&m.heart_ref).unwrap();
                // Beat harmonics are 1 / heart_period_s apart.
                assert!((fundamental_frequency(&f, &p).unwrap() - hz).abs() <= 1.0 / spec.heart_period_s);
            }
        }
        let louder = synth_mixture(&SynthMixSpec { snr_db: 6.0, ..spec.clone() }).unwrap();
        assert_eq!(louder.heart_ref, m.heart_ref);
        assert_eq!(louder.lung_ref, m.lung_ref);
        assert!(louder.lung_gain < m.lung_gain);
    }

    #[test]
    fn synth_rejects_bad_specs() {
        let bad_band = SynthMixSpec {
            lung_band: (200.0, 5000.0),
            ..Default::default()
        };
        assert!(synth_mixture(&bad_band).is_err());
        let short = SynthMixSpec {
            duration_s: 3.0,
            ..Default::default()
        };
        assert!(synth_mixture(&short).is_err());
    }
}
