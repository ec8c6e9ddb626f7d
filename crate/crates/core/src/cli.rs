//! Command-line front end: configuration resolution and the subcommands.
//!
//! Configuration starts from built-in defaults, then a JSON file, then
//! `--set key=value` pairs, then dedicated flags; later sources win. Keys are
//! dotted paths into [`RunConfig`] (`separate.heart.affine.lambda2`), and a
//! file may use either dotted keys or nested objects. Unknown keys are
//! configuration errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::advisor::{Advisor, ExternalAdvisor, HeuristicAdvisor};
use crate::audio::{self, SynthMixSpec};
use crate::bss::{self, BssScores};
use crate::cluster::{self, ClusterScores};
use crate::error::{Error, Result};
use crate::json;
use crate::matrix::NonNegMatrix;
use crate::multilayer::{self, ChemInitConfig, EscapeReport};
use crate::nmf::AlphaNmfConfig;
use crate::separation::{
    self, AdvisorLogEntry, BlockConfig, BlockReport, LingoConfig, SeparationConfig, SeparationResult,
};
use crate::spectral::{self, AudioSegment, PeriodConfig};

#[derive(Parser, Debug)]
#[command(name = "cardiosep", version, about = "Heart/lung sound separation and spectrogram clustering")]
pub struct Cli {
    /// JSON configuration file (dotted keys or nested objects).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
    /// Advisor for the guided separation: `heuristic` or `external:CMD`.
    /// Giving this flag selects the guided method.
    #[arg(long, global = true, value_name = "SPEC")]
    pub advisor: Option<String>,
    /// Configuration override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic two-channel mixture and its source references.
    Synth,
    /// Separate a mixture WAV (mono or two-channel) into heart and lung.
    Separate { mixture: PathBuf },
    /// Score separated signals against references.
    Evaluate {
        #[arg(long)]
        heart: PathBuf,
        #[arg(long)]
        lung: PathBuf,
        #[arg(long)]
        heart_ref: PathBuf,
        #[arg(long)]
        lung_ref: PathBuf,
    },
    /// Cluster spectrogram frames of recordings by multilayer NMF.
    Cluster {
        /// WAV files; ignored when --manifest is given.
        files: Vec<PathBuf>,
        /// Manifest CSV; files are resolved relative to its directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the restart escape experiment and write its report.
    ConvergenceReport {
        /// Matrix JSON (`{"rows", "cols", "data"}`); default is the
        /// built-in two-basin instance.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pl,
    Lingo,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateSettings {
    pub method: Method,
    pub advisor: String,
    pub heart: BlockConfig,
    pub lung: BlockConfig,
    pub nmf: AlphaNmfConfig,
    pub period: PeriodConfig,
    pub restarts: usize,
    pub lambda_f: Option<f64>,
    pub advisor_period: usize,
    pub initial_f: [f64; 2],
}

impl Default for SeparateSettings {
    fn default() -> Self {
        let l = LingoConfig::default();
        SeparateSettings {
            method: Method::Pl,
            advisor: "heuristic".into(),
            heart: l.base.heart,
            lung: l.base.lung,
            nmf: l.base.nmf,
            period: l.base.period,
            restarts: l.base.restarts,
            lambda_f: l.lambda_f,
            advisor_period: l.advisor_period,
            initial_f: l.initial_f,
        }
    }
}

impl SeparateSettings {
    pub fn lingo_config(&self, seed: u64) -> LingoConfig {
        LingoConfig {
            base: SeparationConfig {
                heart: self.heart.clone(),
                lung: self.lung.clone(),
                nmf: AlphaNmfConfig {
                    seed,
                    ..self.nmf.clone()
                },
                period: self.period,
                restarts: self.restarts,
            },
            lambda_f: self.lambda_f,
            advisor_period: self.advisor_period,
            initial_f: self.initial_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSettings {
    pub ranks: Vec<usize>,
    pub k: usize,
    pub nmf: AlphaNmfConfig,
    pub chem: ChemInitConfig,
    /// Common rate for all recordings; `None` uses the first file's rate.
    pub sample_rate: Option<f64>,
    pub frame_s: f64,
    pub window_len: usize,
    pub hop: usize,
    /// Manifest column holding ground-truth classes.
    pub truth_column: Option<String>,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings {
            ranks: vec![4, 2],
            k: 2,
            nmf: AlphaNmfConfig {
                max_iter: 300,
                ..AlphaNmfConfig::default()
            },
            chem: ChemInitConfig::default(),
            sample_rate: None,
            frame_s: 1.0,
            window_len: 256,
            hop: 128,
            truth_column: Some("sound_type".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub ranks: Vec<usize>,
    pub trials: usize,
    pub nmf: AlphaNmfConfig,
    pub chem: ChemInitConfig,
    /// Shape and planted rank of the built-in instance.
    pub instance_rows: usize,
    pub instance_cols: usize,
    pub instance_rank: usize,
    pub instance_seed: u64,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        ConvergenceSettings {
            ranks: vec![3; 5],
            trials: 200,
            nmf: AlphaNmfConfig {
                max_iter: 1000,
                rel_tol: 1e-8,
                ..AlphaNmfConfig::default()
            },
            chem: ChemInitConfig::default(),
            instance_rows: 16,
            instance_cols: 40,
            instance_rank: 2,
            instance_seed: 42,
            bootstrap_resamples: 2000,
            confidence: 0.95,
        }
    }
}

/// Fully resolved configuration; embedded in every report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into every section's seed after resolution.
    pub seed: u64,
    pub separate: SeparateSettings,
    pub synth: SynthMixSpec,
    pub cluster: ClusterSettings,
    pub convergence: ConvergenceSettings,
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(Error::Config("empty configuration key".into()))
}

/// Applies a file object: nested objects descend into sections, anything
/// else replaces the value at its (possibly dotted) key.
fn apply_object(root: &mut Value, prefix: &str, obj: &Map<String, Value>) -> Result<()> {
    for (k, v) in obj {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let target_is_section = key
            .split('.')
            .try_fold(&*root, |node, part| node.get(part))
            .is_some_and(Value::is_object);
        match v {
            Value::Object(inner) if target_is_section => apply_object(root, &key, inner)?,
            _ => set_path(root, &key, v.clone())?,
        }
    }
    Ok(())
}

/// `--set` values are JSON when they parse as JSON and strings otherwise.
fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut root = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        let obj = file
            .as_object()
            .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
        apply_object(&mut root, "", obj)?;
    }
    for s in &cli.overrides {
        let (k, v) = parse_override(s)?;
        set_path(&mut root, &k, v)?;
    }
    if let Some(seed) = cli.seed {
        set_path(&mut root, "seed", Value::from(seed))?;
    }
    if let Some(a) = &cli.advisor {
        set_path(&mut root, "separate.advisor", Value::String(a.clone()))?;
        set_path(&mut root, "separate.method", serde_json::to_value(Method::Lingo)?)?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(root).map_err(|e| Error::Config(format!("configuration does not parse: {e}")))?;
    let seed = cfg.seed;
    cfg.separate.nmf.seed = seed;
    cfg.synth.seed = seed;
    cfg.cluster.nmf.seed = seed;
    cfg.convergence.nmf.seed = seed;
    Ok(cfg)
}

pub fn build_advisor(spec: &str) -> Result<Box<dyn Advisor>> {
    match spec {
        "heuristic" => Ok(Box::new(HeuristicAdvisor)),
        s => match s.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(Box::new(ExternalAdvisor::new(cmd))),
            _ => Err(Error::Config(format!(
                "advisor must be `heuristic` or `external:CMD`, got `{spec}`"
            ))),
        },
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct SynthReport<'a> {
    config: &'a RunConfig,
    lung_gain: f64,
    /// Common factor applied to every written signal to keep it in [-1, 1].
    output_scale: f64,
    sample_rate: f64,
    samples: usize,
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mix = audio::synth_mixture(&cfg.synth)?;
    let lung_component: Vec<f64> = mix.lung_ref.samples().iter().map(|v| mix.lung_gain * v).collect();
    let peak = mix
        .channels
        .iter()
        .flat_map(|c| c.samples())
        .chain(mix.heart_ref.samples())
        .chain(&lung_component)
        .fold(0.0, |m: f64, v| m.max(v.abs()));
    let output_scale = if peak > 0.99 { 0.99 / peak } else { 1.0 };
    let fs = cfg.synth.sample_rate;
    let scaled = |x: &[f64]| AudioSegment::new(x.iter().map(|v| v * output_scale).collect(), fs);
    let channels: Vec<AudioSegment> = mix
        .channels
        .iter()
        .map(|c| scaled(c.samples()))
        .collect::<Result<_>>()?;
    let paths = [
        out.join("mixture.wav"),
        out.join("heart_ref.wav"),
        out.join("lung_ref.wav"),
        out.join("synth.json"),
    ];
    audio::write_wav_channels(&paths[0], &channels.iter().collect::<Vec<_>>())?;
    audio::write_wav(&paths[1], &scaled(mix.heart_ref.samples())?)?;
    audio::write_wav(&paths[2], &scaled(&lung_component)?)?;
    let report = SynthReport {
        config: cfg,
        lung_gain: mix.lung_gain,
        output_scale,
        sample_rate: fs,
        samples: mix.heart_ref.len(),
    };
    write_text(&paths[3], &json::to_string(&report)?)?;
    Ok(paths.to_vec())
}

#[derive(Serialize)]
struct SeparateReport<'a> {
    config: &'a RunConfig,
    input: String,
    method: Method,
    advisor: Option<String>,
    sample_rate: f64,
    samples: usize,
    input_channels: usize,
    scale: f64,
    heart_block: &'a BlockReport,
    lung_block: &'a BlockReport,
    warnings: &'a [String],
    lambda_f: [Option<f64>; 2],
    advisor_log: &'a [AdvisorLogEntry],
    penalized_cost_trace: &'a [Vec<f64>; 2],
}

fn cmd_separate(cfg: &RunConfig, mixture: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let s = &cfg.separate;
    let advisor = match s.method {
        Method::Lingo => Some(build_advisor(&s.advisor)?),
        _ => None,
    };
    let channels = audio::read_wav_channels(mixture)?;
    let lingo = s.lingo_config(cfg.seed);
    let (result, advisor_name, lambda_f, log, traces): (SeparationResult, _, _, _, [Vec<f64>; 2]) = match s.method {
        Method::Pl => (
            separation::pl_nmf_separate(&channels, &lingo.base)?,
            None,
            [None, None],
            Vec::new(),
            Default::default(),
        ),
        Method::Baseline => (
            separation::alpha_nmf_separate(&channels, &lingo.base)?,
            None,
            [None, None],
            Vec::new(),
            Default::default(),
        ),
        Method::Lingo => {
            let advisor = advisor.expect("built above for the guided method");
            let r = separation::lingo_nmf_separate(&channels, &lingo, advisor.as_ref())?;
            (r.separation, Some(r.advisor), r.lambda_f, r.advisor_log, r.penalized_cost_trace)
        }
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let paths = [out.join("heart.wav"), out.join("lung.wav"), out.join("report.json")];
    audio::write_wav(&paths[0], &result.heart)?;
    audio::write_wav(&paths[1], &result.lung)?;
    let report = SeparateReport {
        config: cfg,
        input: file_name(mixture),
        method: s.method,
        advisor: advisor_name,
        sample_rate: result.heart.sample_rate(),
        samples: result.heart.len(),
        input_channels: result.input_channels,
        scale: result.scale,
        heart_block: &result.heart_block,
        lung_block: &result.lung_block,
        warnings: &result.warnings,
        lambda_f,
        advisor_log: &log,
        penalized_cost_trace: &traces,
    };
    write_text(&paths[2], &json::to_string(&report)?)?;
    Ok(paths.to_vec())
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    config: &'a RunConfig,
    inputs: [String; 4],
    heart: BssScores,
    lung: BssScores,
}

fn csv_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn cmd_evaluate(cfg: &RunConfig, est: [&Path; 2], refs: [&Path; 2], out: &Path) -> Result<Vec<PathBuf>> {
    let load = |p: &Path| audio::read_wav(p);
    let (h, l) = (load(est[0])?, load(est[1])?);
    let (hr, lr) = (load(refs[0])?, load(refs[1])?);
    let rates = [h.sample_rate(), l.sample_rate(), hr.sample_rate(), lr.sample_rate()];
    if rates.iter().any(|&r| r != rates[0]) {
        return Err(Error::Dimension(format!("sample rates differ: {rates:?}")));
    }
    let references = vec![hr.samples().to_vec(), lr.samples().to_vec()];
    let heart = bss::bss_eval(h.samples(), &references, 0)?;
    let lung = bss::bss_eval(l.samples(), &references, 1)?;
    let paths = [out.join("scores.json"), out.join("scores.csv")];
    let report = EvaluateReport {
        config: cfg,
        inputs: [est[0], est[1], refs[0], refs[1]].map(file_name),
        heart,
        lung,
    };
    write_text(&paths[0], &json::to_string(&report)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    w.write_record(["source", "sdr_db", "sir_db", "sar_db"]).map_err(csv_err)?;
    for (name, s) in [("heart", heart), ("lung", lung)] {
        w.write_record([name.to_string(), csv_number(s.sdr_db), csv_number(s.sir_db), csv_number(s.sar_db)])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    fs::write(&paths[1], bytes).map_err(|e| Error::io(&paths[1], e))?;
    Ok(paths.to_vec())
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    config: &'a RunConfig,
    files: Vec<String>,
    frames: Vec<(usize, usize)>,
    labels: &'a [usize],
    truth_classes: Option<Vec<String>>,
    scores: &'a ClusterScores,
    inertia: f64,
    kmeans_iterations: usize,
    layer_costs: &'a [f64],
}

fn cmd_cluster(cfg: &RunConfig, files: &[PathBuf], manifest: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let c = &cfg.cluster;
    let (paths, truth_text): (Vec<PathBuf>, Option<Vec<String>>) = match manifest {
        Some(m) => {
            let entries = audio::load_manifest(m)?;
            let root = m.parent().unwrap_or(Path::new("."));
            audio::validate_manifest_files(&entries, root)?;
            let truth = match &c.truth_column {
                None => None,
                Some(col) => Some(
                    entries
                        .iter()
                        .map(|e| manifest_field(e, col))
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            (entries.iter().map(|e| root.join(&e.file_name)).collect(), truth)
        }
        None => (files.to_vec(), None),
    };
    if paths.is_empty() {
        return Err(Error::InvalidInput("no recordings to cluster".into()));
    }
    if !(c.frame_s > 0.0) {
        return Err(Error::Config("cluster.frame_s must be positive".into()));
    }

    let mut spectrograms = Vec::new();
    let mut frames = Vec::new();
    let mut frame_truth = Vec::new();
    let mut rate = c.sample_rate;
    for (fi, p) in paths.iter().enumerate() {
        let x = audio::read_wav(p)?;
        let target = *rate.get_or_insert(x.sample_rate());
        let x = audio::resample(&x, target)?;
        for (k, seg) in audio::segment(&x, c.frame_s)?.into_iter().enumerate() {
            spectrograms.push(spectral::stft_spectrogram(&seg, c.window_len, c.hop)?);
            frames.push((fi, k));
            if let Some(t) = &truth_text {
                frame_truth.push(t[fi].clone());
            }
        }
    }
    if spectrograms.is_empty() {
        return Err(Error::InvalidInput(format!(
            "recordings are shorter than one {} s frame",
            c.frame_s
        )));
    }
    let classes = truth_text.as_ref().map(|_| {
        let mut v = frame_truth.clone();
        v.sort();
        v.dedup();
        v
    });
    let truth: Option<Vec<usize>> = classes.as_ref().map(|cl| {
        frame_truth
            .iter()
            .map(|t| cl.binary_search(t).expect("class list built from these labels"))
            .collect()
    });
    let output = cluster::chem_cluster_pipeline(&spectrograms, &c.ranks, &c.nmf, &c.chem, c.k, truth.as_deref())?;

    let names: Vec<String> = paths.iter().map(|p| file_name(p)).collect();
    let out_paths = [out.join("labels.csv"), out.join("scores.json")];
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    let mut header = vec!["file", "frame", "label"];
    if truth.is_some() {
        header.push("truth");
    }
    w.write_record(&header).map_err(csv_err)?;
    for (n, &(fi, k)) in frames.iter().enumerate() {
        let mut rec = vec![names[fi].clone(), k.to_string(), output.assignment.labels[n].to_string()];
        if truth.is_some() {
            rec.push(frame_truth[n].clone());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    fs::write(&out_paths[0], bytes).map_err(|e| Error::io(&out_paths[0], e))?;
    let report = ClusterReport {
        config: cfg,
        files: names,
        frames,
        labels: &output.assignment.labels,
        truth_classes: classes,
        scores: &output.scores,
        inertia: output.assignment.inertia,
        kmeans_iterations: output.assignment.iterations,
        layer_costs: &output.stack.layer_costs,
    };
    write_text(&out_paths[1], &json::to_string(&report)?)?;
    Ok(out_paths.to_vec())
}

fn manifest_field(e: &audio::ManifestEntry, column: &str) -> Result<String> {
    match column {
        "file_name" => Ok(e.file_name.clone()),
        "gender" => Ok(serde_json::to_value(e.gender)?
            .as_str()
            .unwrap_or_default()
            .to_string()),
        "sound_type" => Ok(e.sound_type.clone()),
        "location" => Ok(e.location.clone()),
        other => e
            .extra
            .get(other)
            .cloned()
            .ok_or_else(|| Error::MissingColumn(other.to_string())),
    }
}

#[derive(Serialize)]
struct ConvergenceReport<'a> {
    config: &'a RunConfig,
    input: Option<String>,
    report: &'a EscapeReport,
    /// Lower confidence bound of single-layer minus multilayer survival at
    /// the deepest layer.
    survival_gap_lower_bound: f64,
}

fn cmd_convergence(cfg: &RunConfig, input: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let c = &cfg.convergence;
    let y = match input {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<NonNegMatrix>(&text)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?
        }
        None => multilayer::multi_basin_instance(c.instance_rows, c.instance_cols, c.instance_rank, c.instance_seed)?,
    };
    let report = multilayer::escape_experiment(&y, &c.ranks, &c.nmf, &c.chem, c.trials)?;
    let gap = report.bootstrap_survival_gap(c.ranks.len(), c.bootstrap_resamples, c.confidence, cfg.seed)?;
    let path = out.join("escape_report.json");
    let doc = ConvergenceReport {
        config: cfg,
        input: input.map(file_name),
        report: &report,
        survival_gap_lower_bound: gap,
    };
    write_text(&path, &json::to_string(&doc)?)?;
    Ok(vec![path])
}

pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = resolve_config(cli)?;
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, out),
        Command::Separate { mixture } => cmd_separate(&cfg, mixture, out),
        Command::Evaluate {
            heart,
            lung,
            heart_ref,
            lung_ref,
        } => cmd_evaluate(&cfg, [heart, lung], [heart_ref, lung_ref], out),
        Command::Cluster { files, manifest } => cmd_cluster(&cfg, files, manifest.as_deref(), out),
        Command::ConvergenceReport { input } => cmd_convergence(&cfg, input.as_deref(), out),
    }
}

fn run_with_pool(cli: &Cli) -> Result<Vec<PathBuf>> {
    match cli.threads {
        None => execute(cli),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| execute(cli)),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Outputs go to the output directory, a JSON list of written files to
/// standard output and diagnostics to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_with_pool(&cli) {
        Ok(paths) => {
            let listed: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::json!({ "outputs": listed }));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("cardiosep").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_beat_set_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"seed": 5, "separate.restarts": 2, "synth": {"snr_db": 3.0}, "separate": {"heart": {"layers": 2}}}"#,
        )
        .unwrap();
        let c = cli(&[
            "--config",
            p.to_str().unwrap(),
            "--set",
            "seed=6",
            "--set",
            "separate.restarts=3",
            "--seed",
            "9",
            "synth",
        ]);
        let cfg = resolve_config(&c).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.separate.nmf.seed, 9);
        assert_eq!(cfg.separate.restarts, 3);
        assert_eq!(cfg.synth.snr_db, 3.0);
        assert_eq!(cfg.separate.heart.layers, 2);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for bad in ["separate.nope=1", "separate.restarts=many", "noequals"] {
            let e = resolve_config(&cli(&["--set", bad, "synth"])).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{bad}: {e}");
        }
        let e = resolve_config(&cli(&["--config", "/nonexistent/c.json", "synth"])).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn advisor_flag_selects_guided_method() {
        let cfg = resolve_config(&cli(&["--advisor", "external:cat", "synth"])).unwrap();
        assert_eq!(cfg.separate.method, Method::Lingo);
        assert_eq!(cfg.separate.advisor, "external:cat");
        assert!(build_advisor("external:").is_err());
        assert!(build_advisor("oracle").is_err());
        assert!(build_advisor("heuristic").is_ok());
    }

    #[test]
    fn string_values_need_no_quotes() {
        let cfg = resolve_config(&cli(&["--set", "separate.method=baseline", "synth"])).unwrap();
        assert_eq!(cfg.separate.method, Method::Baseline);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["cardiosep", "--bogus"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["cardiosep", "--out", out, "separate", "/nonexistent/m.wav"]), 2);
        assert_eq!(run(["cardiosep", "--out", out, "--set", "x=1", "synth"]), 1);
    }
}
