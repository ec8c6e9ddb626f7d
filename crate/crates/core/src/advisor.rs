//! Frequency advisors for the guided separation loop.
//!
//! An advisor receives the features of the current heart and lung
//! candidates plus their strongest spectral peaks and answers with target
//! fundamentals. Any process speaking the line-delimited JSON protocol can
//! act as one through [`ExternalAdvisor`].

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::FeatureVector;

pub const HEART_BAND_HZ: (f64, f64) = (20.0, 200.0);
pub const LUNG_BAND_HZ: (f64, f64) = (100.0, 1000.0);
pub const DEFAULT_HEART_HZ: f64 = 100.0;
pub const DEFAULT_LUNG_HZ: f64 = 300.0;
pub const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub heart: FeatureVector,
    pub lung: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorRequest {
    pub features: CandidateFeatures,
    /// `[hz, power]` pairs, strongest first.
    pub psd_peaks: Vec<[f64; 2]>,
    pub prior_f: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorResponse {
    pub f_heart: f64,
    pub f_lung: f64,
    #[serde(default)]
    pub observations: String,
    #[serde(default)]
    pub diagnosis: String,
}

impl AdvisorResponse {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f.is_finite();
        if ok(self.f_heart) && ok(self.f_lung) {
            Ok(())
        } else {
            Err(Error::Advisor(format!(
                "frequencies must be positive and finite, got ({}, {})",
                self.f_heart, self.f_lung
            )))
        }
    }
}

/// Reply of one advisor call: the parsed response plus the exact text it
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvisorReply {
    pub response: AdvisorResponse,
    pub raw: String,
}

pub trait Advisor: Send + Sync {
    fn name(&self) -> String;

    fn advise(&self, request: &AdvisorRequest) -> Result<AdvisorReply>;
}

fn reply_of(response: AdvisorResponse) -> Result<AdvisorReply> {
    let raw = serde_json::to_string(&response)?;
    Ok(AdvisorReply { response, raw })
}

fn strongest_in(peaks: &[[f64; 2]], band: (f64, f64)) -> Option<f64> {
    peaks
        .iter()
        .filter(|p| p[0] >= band.0 && p[0] <= band.1 && p[1] > 0.0)
        .fold(None, |best: Option<[f64; 2]>, p| match best {
            Some(b) if b[1] >= p[1] => Some(b),
            _ => Some(*p),
        })
        .map(|p| p[0])
}

/// Rule-based stand-in for a language-model advisor.
///
/// Each fundamental is the strongest peak inside its band; without one,
/// the strongest peak overall is clamped into the band. With no usable
/// peak at all the band defaults (100 Hz, 300 Hz) are returned.
pub fn heuristic_advisor(features: &CandidateFeatures, psd_peaks: &[[f64; 2]]) -> AdvisorResponse {
    let everywhere = (f64::NEG_INFINITY, f64::INFINITY);
    let strongest = strongest_in(psd_peaks, everywhere);
    let pick = |band: (f64, f64), default: f64| {
        strongest_in(psd_peaks, band)
            .or_else(|| strongest.map(|f| f.clamp(band.0, band.1)))
            .unwrap_or(default)
    };
    let f_heart = pick(HEART_BAND_HZ, DEFAULT_HEART_HZ);
    let f_lung = pick(LUNG_BAND_HZ, DEFAULT_LUNG_HZ);
    let h = &features.heart;
    let l = &features.lung;
    let observations = format!(
        "heart candidate: centroid {:.1} Hz, rms {:.4}, zcr {:.4}, peak {:.4}; \
         lung candidate: centroid {:.1} Hz, rms {:.4}, zcr {:.4}, peak {:.4}",
        h.spectral_centroid,
        h.rms_energy,
        h.zero_crossing_rate,
        h.max_amplitude,
        l.spectral_centroid,
        l.rms_energy,
        l.zero_crossing_rate,
        l.max_amplitude
    );
    let diagnosis = if h.spectral_centroid < l.spectral_centroid {
        "heart candidate is lower in frequency than lung candidate, as expected".to_string()
    } else {
        "heart candidate is not lower in frequency than lung candidate".to_string()
    };
    AdvisorResponse {
        f_heart,
        f_lung,
        observations,
        diagnosis,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAdvisor;

impl Advisor for HeuristicAdvisor {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn advise(&self, request: &AdvisorRequest) -> Result<AdvisorReply> {
        reply_of(heuristic_advisor(&request.features, &request.psd_peaks))
    }
}

/// Always answers with the same fundamentals, e.g. known ground truth.
#[derive(Debug, Clone, Copy)]
pub struct FixedAdvisor {
    pub f_heart: f64,
    pub f_lung: f64,
}

impl Advisor for FixedAdvisor {
    fn name(&self) -> String {
        format!("fixed:{}:{}", self.f_heart, self.f_lung)
    }

    fn advise(&self, _: &AdvisorRequest) -> Result<AdvisorReply> {
        reply_of(AdvisorResponse {
            f_heart: self.f_heart,
            f_lung: self.f_lung,
            observations: String::new(),
            diagnosis: String::new(),
        })
    }
}

/// Echoes the prior back, leaving the targets untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoAdvisor;

impl Advisor for EchoAdvisor {
    fn name(&self) -> String {
        "echo".into()
    }

    fn advise(&self, request: &AdvisorRequest) -> Result<AdvisorReply> {
        reply_of(AdvisorResponse {
            f_heart: request.prior_f[0],
            f_lung: request.prior_f[1],
            observations: String::new(),
            diagnosis: String::new(),
        })
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Advisor backed by a shell command that reads one JSON request per line
/// on stdin and writes one JSON response per line on stdout.
///
/// The process starts on first use and is shared by all calls; calls are
/// serialized. A timeout or a dead process drops the session so the next
/// call starts a fresh one.
pub struct ExternalAdvisor {
    command: String,
    timeout: Duration,
    session: Mutex<Option<Session>>,
}

impl ExternalAdvisor {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalAdvisor::with_timeout(command, EXTERNAL_TIMEOUT)
    }

    pub fn with_timeout(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalAdvisor {
            command: command.into(),
            timeout,
            session: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<Session> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Advisor(format!("cannot start `{}`: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Session {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exchange(&self, session: &mut Session, request: &str) -> Result<String> {
        writeln!(session.stdin, "{request}")
            .and_then(|_| session.stdin.flush())
            .map_err(|e| Error::Advisor(format!("write failed: {e}")))?;
        match session.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Advisor(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Advisor(format!(
                "no response within {} s",
                self.timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Advisor("advisor exited".into())),
        }
    }
}

impl Advisor for ExternalAdvisor {
    fn name(&self) -> String {
        format!("external:{}", self.command)
    }

    fn advise(&self, request: &AdvisorRequest) -> Result<AdvisorReply> {
        let line = serde_json::to_string(request)?;
        let mut guard = self.session.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let session = guard.as_mut().expect("session just set");
        let raw = match self.exchange(session, &line) {
            Ok(raw) => raw,
            Err(e) => {
                *guard = None;
                return Err(e);
            }
        };
        let response: AdvisorResponse = serde_json::from_str(raw.trim())
            .map_err(|e| Error::Advisor(format!("unparseable response: {e}")))?;
        response.validate()?;
        Ok(AdvisorReply { response, raw })
    }
}
