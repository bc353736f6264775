use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sacm::audiofeat::LogMelConfig;
use sacm::datamodel::{load_embeddings, load_recording, save_recording, Recording, Referencing};
use sacm::dsp::{contamination_check, preprocess, ContaminationConfig, PreprocessConfig};
use sacm::experiments::{
    ablate, figure_series, render_csv, AblationConfig, BlockAssignment, DecodingConfig,
    DetectionCv, EncoderArch, ExperimentReport, FigureConfig, Task,
};
use sacm::models::{Activation, AudioEncoder};
use sacm::sacm::{end_to_end_gradient_check, ContrastiveHp, DetectorHp};
use sacm::synthgen::{gen_recording_with_jobs, SynthConfig};
use sacm::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "sacm",
    version,
    about = "SEEG/audio contrastive matching workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic subject
    Synth(SynthArgs),
    /// Filter, re-reference and envelope a raw recording
    Preprocess(PreprocessArgs),
    /// Speech/non-speech detection with cross-validation
    Detect(ExperimentArgs),
    /// Contrastive word decoding
    Decode(ExperimentArgs),
    /// Electrode ablation for either task (random baseline included)
    Ablate(AblateArgs),
    /// Render a JSON report as CSV tables and figure series
    Report(ReportArgs),
    /// Acoustic contamination check and gradient suites
    Check(CheckArgs),
}

/// `None` is the no-signal subject (`-inf` on the command line).
#[derive(Clone, Copy, Debug, Serialize)]
struct Snr(Option<f64>);

fn parse_snr(s: &str) -> std::result::Result<Snr, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "-inf" | "none" | "off" => Ok(Snr(None)),
        v => v
            .parse::<f64>()
            .map(|x| Snr(Some(x)))
            .map_err(|e| format!("snr must be a number or -inf: {e}")),
    }
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, env = "SACM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    subject: String,
    #[arg(long, default_value_t = 4)]
    sessions: u32,
    #[arg(long, default_value_t = 10)]
    blocks: u32,
    #[arg(long, default_value_t = 2000.0)]
    seeg_rate: f64,
    #[arg(long, default_value_t = 48000.0)]
    audio_rate: f64,
    /// High-gamma SNR in dB, or -inf for no neural signal
    #[arg(long, default_value = "10", value_parser = parse_snr, allow_hyphen_values = true)]
    snr_db: Snr,
    /// Channels receiving a copy of the acoustic waveform
    #[arg(long, value_delimiter = ',')]
    leak_channels: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    leak_gain: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RerefArg {
    Car,
    Bipolar,
}

impl From<RerefArg> for Referencing {
    fn from(r: RerefArg) -> Self {
        match r {
            RerefArg::Car => Referencing::Car,
            RerefArg::Bipolar => Referencing::Bipolar,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SignalArgs {
    #[arg(long, default_value_t = 70.0)]
    band_lo: f64,
    #[arg(long, default_value_t = 170.0)]
    band_hi: f64,
    /// Line-noise notch in Hz, or 0 to disable
    #[arg(long, default_value_t = 50.0)]
    notch: f64,
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long, default_value_t = 200.0)]
    target_rate: f64,
    #[arg(long, default_value_t = 16000.0)]
    audio_rate: f64,
    #[arg(long, default_value_t = 40)]
    n_mels: usize,
}

impl SignalArgs {
    fn preprocess_config(&self, reref: Referencing, jobs: usize) -> PreprocessConfig {
        PreprocessConfig {
            reref,
            band: (self.band_lo, self.band_hi),
            notch: (self.notch > 0.0).then_some(self.notch),
            clip: self.clip,
            target_rate: self.target_rate,
            audio_rate: self.audio_rate,
            jobs,
            ..PreprocessConfig::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "car")]
    reref: RerefArg,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ExperimentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "car")]
    reref: Vec<RerefArg>,
    #[arg(long, value_delimiter = ',', default_value = "FULL")]
    channel_sets: Vec<String>,
    #[arg(long, default_value_t = 6)]
    seeds: usize,
    /// First seed; seeds run consecutively from here
    #[arg(long, env = "SACM_SEED", default_value_t = 0)]
    seed: u64,
    /// Add a label-shuffled FULL row
    #[arg(long)]
    random_baseline: bool,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long, default_value_t = 1.6)]
    window_s: f64,
    #[arg(long, default_value_t = 0.5)]
    seg_s: f64,
    /// Learning rate (default 1e-3 for detection, 3e-4 for decoding)
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size (default 32 for detection, 48 for decoding)
    #[arg(long)]
    batch: Option<usize>,
    /// Epoch cap (default 300 for detection, 200 for decoding)
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Early-stopping patience (default 30 for detection, 20 for decoding)
    #[arg(long)]
    patience: Option<usize>,
    /// Weight decay (default 1e-4 for detection, 0 for decoding)
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    res_blocks: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 9)]
    val_block: u32,
    #[arg(long, default_value_t = 10)]
    test_block: u32,
    /// Precomputed audio embeddings (EmbeddingSet directory); built-in log-mel otherwise
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Output width of the built-in audio encoder (projected when not 2·n_mels)
    #[arg(long)]
    audio_dim: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TaskArg {
    Detect,
    Decode,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Raw recording for the amplitude / band-power series
    #[arg(long)]
    recording: Option<PathBuf>,
    #[arg(long)]
    max_trials: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct CheckArgs {
    /// Raw recording to screen for acoustic contamination
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    shifts: usize,
    #[arg(long, env = "SACM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Serialize)]
struct Resolved<'a, A: Serialize, C: Serialize> {
    command: &'a str,
    args: &'a A,
    resolved: &'a C,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_resolved<A: Serialize, C: Serialize>(
    dir: &Path,
    command: &str,
    args: &A,
    resolved: &C,
) -> Result<()> {
    write_text(
        &dir.join("resolved_config.json"),
        &to_json(&Resolved {
            command,
            args,
            resolved,
        })?,
    )
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(a.seed);
    cfg.subject_id = a.subject.clone();
    cfg.n_sessions = a.sessions;
    cfg.n_blocks = a.blocks;
    cfg.seeg_rate = a.seeg_rate;
    cfg.audio_rate = a.audio_rate;
    cfg.snr_db = a.snr_db.0;
    cfg.leak_channels = a.leak_channels.clone();
    cfg.leak_gain = a.leak_gain;
    let rec = gen_recording_with_jobs(&cfg, a.jobs)?;
    save_recording(&rec, &a.out)?;
    write_resolved(&a.out, "synth", a, &cfg)?;
    log::info!(
        "wrote {} trials, {:.1} s, to {}",
        rec.events.len(),
        rec.duration_s(),
        a.out.display()
    );
    Ok(())
}

fn run_preprocess(a: &PreprocessArgs) -> Result<()> {
    let rec = load_recording(&a.input)?;
    let cfg = a.signal.preprocess_config(a.reref.into(), a.jobs);
    let out = preprocess(&rec, &cfg)?;
    save_recording(&out, &a.out)?;
    let data =
        sacm::experiments::detection_data(&out, sacm::datamodel::DEFAULT_TRIAL_WINDOW_S, 0.5)?;
    let lines: Vec<String> = data
        .skipped
        .iter()
        .map(|s| serde_json::json!({"trial_id": s.trial_id, "reason": s.reason}).to_string())
        .collect();
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_text(&a.out.join("skipped_trials.jsonl"), &text)?;
    write_resolved(&a.out, "preprocess", a, &cfg)?;
    Ok(())
}

fn audio_encoder(a: &ExperimentArgs) -> Result<AudioEncoder> {
    match &a.embeddings {
        Some(dir) => Ok(AudioEncoder::precomputed(load_embeddings(dir)?)),
        None => {
            let lm = LogMelConfig {
                n_mels: a.n_mels(),
                ..LogMelConfig::default()
            };
            let d = a.audio_dim.unwrap_or(2 * lm.n_mels);
            Ok(AudioEncoder::builtin_with(
                a.signal.audio_rate,
                lm,
                d,
                a.seed,
            ))
        }
    }
}

impl ExperimentArgs {
    fn n_mels(&self) -> usize {
        self.signal.n_mels
    }

    fn config(&self, task: Task) -> Result<AblationConfig> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "--tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.seeds == 0 {
            return Err(Error::Config("--seeds must be at least 1".into()));
        }
        let dh = DetectorHp::default();
        let ch = ContrastiveHp::default();
        let detection = DetectionCv {
            n_folds: self.folds,
            hp: DetectorHp {
                lr: self.lr.unwrap_or(dh.lr),
                batch: self.batch.unwrap_or(dh.batch),
                max_epochs: self.max_epochs.unwrap_or(dh.max_epochs),
                patience: self.patience.unwrap_or(dh.patience),
                weight_decay: self.weight_decay.unwrap_or(dh.weight_decay),
                seed: 0,
            },
            ..DetectionCv::default()
        };
        let decoding = DecodingConfig {
            arch: EncoderArch {
                hidden: self.hidden,
                n_blocks: self.res_blocks,
                kernel: self.kernel,
                activation: Activation::Gelu,
            },
            hp: ContrastiveHp {
                lr: self.lr.unwrap_or(ch.lr),
                batch: self.batch.unwrap_or(ch.batch),
                tau: self.tau,
                max_epochs: self.max_epochs.unwrap_or(ch.max_epochs),
                patience: self.patience.unwrap_or(ch.patience),
                weight_decay: self.weight_decay.unwrap_or(ch.weight_decay),
                seed: 0,
            },
            blocks: BlockAssignment {
                n_blocks: 10,
                val_block: self.val_block,
                test_block: self.test_block,
            },
        };
        let mut refs: Vec<Referencing> = Vec::new();
        for r in &self.reref {
            let r = Referencing::from(*r);
            if !refs.contains(&r) {
                refs.push(r);
            }
        }
        Ok(AblationConfig {
            task,
            referencings: refs,
            channel_sets: self.channel_sets.clone(),
            seeds: (0..self.seeds as u64).map(|k| self.seed + k).collect(),
            random_baseline: self.random_baseline,
            preprocess: self.signal.preprocess_config(Referencing::Car, self.jobs),
            window_s: self.window_s,
            seg_s: self.seg_s,
            detection,
            decoding,
            jobs: self.jobs,
        })
    }
}

fn run_experiment<A: Serialize>(
    name: &str,
    args: &A,
    exp: &ExperimentArgs,
    cfg: AblationConfig,
) -> Result<()> {
    cfg.validate()?;
    let rec = load_recording(&exp.input)?;
    let audio = match cfg.task {
        Task::Decode => audio_encoder(exp)?,
        Task::Detect => AudioEncoder::builtin(exp.signal.audio_rate, 2 * exp.n_mels(), exp.seed),
    };
    let report = ablate(&rec, &cfg, &audio)?;
    write_text(&exp.report, &to_json(&report)?)?;
    write_resolved(&parent_dir(&exp.report), name, args, &cfg)?;
    for s in &report.summary {
        let m: Vec<String> = s.mean.iter().map(|(k, v)| format!("{k} {v:.2}")).collect();
        log::info!("{:?} {}: {}", s.referencing, s.channel_set, m.join(", "));
    }
    Ok(())
}

fn run_ablate(a: &AblateArgs) -> Result<()> {
    let task = match a.task {
        TaskArg::Detect => Task::Detect,
        TaskArg::Decode => Task::Decode,
    };
    let mut cfg = a.exp.config(task)?;
    cfg.random_baseline = true;
    if a.exp.channel_sets == ["FULL"] {
        let rec = load_recording(&a.exp.input)?;
        let mut sets: Vec<String> = rec.electrode_groups.keys().cloned().collect();
        sets.push("FULL".into());
        cfg.channel_sets = sets;
    }
    run_experiment("ablate", a, &a.exp, cfg)
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).map_err(io_err(&a.input))?;
    let report: ExperimentReport = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: a.input.clone(),
        source,
    })?;
    let mut files = render_csv(&report);
    if let Some(dir) = &a.recording {
        let rec = load_recording(dir)?;
        let cfg = FigureConfig {
            max_trials: a.max_trials,
            ..FigureConfig::default()
        };
        files.extend(figure_series(&rec, &cfg)?);
    }
    for (name, body) in &files {
        write_text(&a.out.join(name), body)?;
    }
    write_resolved(
        &a.out,
        "report",
        a,
        &files.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CheckReport {
    primitives: Vec<(String, f64)>,
    primitive_tolerance: f64,
    end_to_end_rel_err: f64,
    end_to_end_tolerance: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    contamination: Vec<sacm::dsp::ChannelContamination>,
    flagged_channels: Vec<String>,
    passed: bool,
}

fn run_check(a: &CheckArgs) -> Result<bool> {
    let prims = sacm_autodiff::primitive_gradient_suite(a.seed)?;
    let e2e = end_to_end_gradient_check(a.seed, 24)?;
    let mut report = CheckReport {
        primitives: prims
            .iter()
            .map(|p| (p.name.to_string(), p.max_rel_err))
            .collect(),
        primitive_tolerance: 1e-4,
        end_to_end_rel_err: e2e.max_rel_err,
        end_to_end_tolerance: 1e-3,
        contamination: Vec::new(),
        flagged_channels: Vec::new(),
        passed: false,
    };
    for p in &prims {
        println!("grad {:<28} rel err {:.2e}", p.name, p.max_rel_err);
    }
    println!(
        "grad {:<28} rel err {:.2e}",
        "end-to-end (f32)", e2e.max_rel_err
    );
    if let Some(dir) = &a.input {
        let rec: Recording = load_recording(dir)?;
        if rec.referencing != Referencing::Raw {
            return Err(Error::Config(
                "contamination check needs the raw recording".into(),
            ));
        }
        let cfg = ContaminationConfig {
            alpha: a.alpha,
            n_shifts: a.shifts,
            seed: a.seed,
            jobs: a.jobs,
            ..Default::default()
        };
        report.contamination =
            contamination_check(&rec.seeg, rec.seeg_rate, &rec.audio, rec.audio_rate, &cfg)?;
        for c in &report.contamination {
            let name = &rec.channel_names[c.channel];
            println!(
                "contamination {name:<6} r {:.3} at {:.0} Hz  p {:.4}{}",
                c.max_corr,
                c.peak_freq,
                c.p_value,
                if c.flagged { "  FLAGGED" } else { "" }
            );
            if c.flagged {
                report.flagged_channels.push(name.clone());
            }
        }
    }
    report.passed = prims.iter().all(|p| p.max_rel_err <= 1e-4) && e2e.max_rel_err <= 1e-3;
    if let Some(path) = &a.report {
        write_text(path, &to_json(&report)?)?;
        write_resolved(&parent_dir(path), "check", a, &report.passed)?;
    }
    Ok(report.passed)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => "config",
        Error::MissingFile(_) | Error::Io { .. } => "io",
        Error::Json { .. } => "format",
        _ => "runtime",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Preprocess(a) => run_preprocess(a),
        Command::Detect(a) => a
            .config(Task::Detect)
            .and_then(|c| run_experiment("detect", a, a, c)),
        Command::Decode(a) => a
            .config(Task::Decode)
            .and_then(|c| run_experiment("decode", a, a, c)),
        Command::Ablate(a) => run_ablate(a),
        Command::Report(a) => run_report(a),
        Command::Check(a) => match run_check(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!(
                    "{}",
                    serde_json::json!({"error": "check", "message": "gradient suite exceeded tolerance"})
                );
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": error_kind(&e), "message": e.to_string()})
            );
            ExitCode::from(2)
        }
    }
}
