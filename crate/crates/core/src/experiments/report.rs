//! Ablation harness over (referencing × channel set × seed) and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::channels::{ChannelSet, FULL, RANDOM};
use super::metrics::{lda_probe, paired_ttest, LdaResult, TTest};
use super::run::{
    decode_run, decoding_data, detection_cv, detection_data, DetectionCv, EncoderArch,
};
use super::split::BlockAssignment;
use crate::audiofeat::{
    detect_speech_center, logmel_stats, mean_squared_amplitude, sp_ns_starts, LogMelConfig,
};
use crate::datamodel::{segment_trials, Recording, Referencing, DEFAULT_TRIAL_WINDOW_S, N_WORDS};
use crate::dsp::{band_average, morlet_power, preprocess, reref_car, PreprocessConfig};
use crate::error::{Error, Result};
use crate::models::AudioEncoder;
use crate::sacm::ContrastiveHp;
use crate::util::par_map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detect,
    Decode,
}

pub const DETECTION: &str = "detection";
pub const DECODE_METRICS: [&str; 5] = [
    "word_top1",
    "word_top5",
    "initial_top5",
    "final_top5",
    "tone_top5",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct DecodingConfig {
    pub arch: EncoderArch,
    pub hp: ContrastiveHp,
    pub blocks: BlockAssignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub task: Task,
    pub referencings: Vec<Referencing>,
    pub channel_sets: Vec<String>,
    pub seeds: Vec<u64>,
    /// Adds a label-shuffled FULL row per referencing.
    pub random_baseline: bool,
    /// Used when the input is raw; `reref` is replaced per referencing.
    pub preprocess: PreprocessConfig,
    pub window_s: f64,
    pub seg_s: f64,
    pub detection: DetectionCv,
    pub decoding: DecodingConfig,
    pub jobs: usize,
}

impl AblationConfig {
    pub fn new(task: Task) -> Self {
        AblationConfig {
            task,
            referencings: vec![Referencing::Car],
            channel_sets: vec![FULL.into()],
            seeds: (0..6).collect(),
            random_baseline: false,
            preprocess: PreprocessConfig::default(),
            window_s: DEFAULT_TRIAL_WINDOW_S,
            seg_s: 0.5,
            detection: DetectionCv::default(),
            decoding: DecodingConfig::default(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.referencings.is_empty() || self.seeds.is_empty() || self.channel_sets.is_empty() {
            return Err(Error::Config(
                "referencing list, channel sets and seeds must be non-empty".into(),
            ));
        }
        if self.referencings.contains(&Referencing::Raw) {
            return Err(Error::Config(
                "experiments need car or bipolar referencing".into(),
            ));
        }
        if !(self.decoding.hp.tau > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.decoding.hp.tau
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub referencing: Referencing,
    pub channel_set: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub best_epochs: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confusion: Option<Vec<Vec<u32>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub referencing: Referencing,
    pub channel_set: String,
    pub n_seeds: usize,
    pub mean: BTreeMap<String, f64>,
    pub sd: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMark {
    pub referencing: Referencing,
    pub metric: String,
    pub best: String,
    pub second: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestRecord {
    pub referencing: Referencing,
    pub metric: String,
    pub a: String,
    pub b: String,
    /// What the paired observations are.
    pub pairing: String,
    pub result: TTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub subject_id: String,
    pub config: AblationConfig,
    pub audio_encoder: String,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SetSummary>,
    pub marks: Vec<ColumnMark>,
    /// Per referencing and metric: seed-paired mean `|FULL − SMC|`.
    pub full_minus_smc: BTreeMap<String, BTreeMap<String, f64>>,
    pub ttests: Vec<TTestRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audio_lda: Option<LdaResult>,
}

fn as_referenced(rec: &Recording, r: Referencing, cfg: &PreprocessConfig) -> Result<Recording> {
    if rec.referencing == Referencing::Raw {
        preprocess(
            rec,
            &PreprocessConfig {
                reref: r,
                ..cfg.clone()
            },
        )
    } else if rec.referencing == r {
        Ok(rec.clone())
    } else {
        Err(Error::Config(format!(
            "input is already {:?}-referenced, cannot produce {r:?}",
            rec.referencing
        )))
    }
}

struct Job {
    set: usize,
    name: String,
    seed: u64,
    shuffle: bool,
}

fn jobs_for(sets: &[ChannelSet], cfg: &AblationConfig) -> Vec<Job> {
    let mut jobs = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        for &seed in &cfg.seeds {
            jobs.push(Job {
                set: i,
                name: s.name.clone(),
                seed,
                shuffle: false,
            });
        }
    }
    jobs
}

/// LDA word classification from built-in audio features: train on the
/// training and validation blocks, score the test blocks.
pub fn audio_lda_probe(
    rec: &Recording,
    window_s: f64,
    blocks: BlockAssignment,
) -> Result<LdaResult> {
    let trials = segment_trials(rec, window_s, rec.seeg_rate)?;
    let split = super::split::decoding_split(&rec.events, blocks)?;
    let lm = LogMelConfig::default();
    let feats: Vec<Vec<f64>> = trials
        .iter()
        .map(|t| {
            Ok(logmel_stats(&t.audio_window, rec.audio_rate, &lm)?
                .into_iter()
                .map(f64::from)
                .collect())
        })
        .collect::<Result<_>>()?;
    let words: Vec<u32> = trials.iter().map(|t| t.event.word_label).collect();
    let mut train = split.train.clone();
    train.extend(split.val());
    let test = split.test();
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<u32>) {
        (
            idx.iter().map(|&i| feats[i].clone()).collect(),
            idx.iter().map(|&i| words[i]).collect(),
        )
    };
    let (tx, ty) = pick(&train);
    let (vx, vy) = pick(&test);
    lda_probe(&tx, &ty, &vx, &vy, N_WORDS, 0.1)
}

pub fn ablate(
    rec: &Recording,
    cfg: &AblationConfig,
    audio: &AudioEncoder,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &r in &cfg.referencings {
        let proc = as_referenced(rec, r, &cfg.preprocess)?;
        let mut sets = ChannelSet::resolve_all(&proc, &cfg.channel_sets)?;
        let mut jobs = jobs_for(&sets, cfg);
        if cfg.random_baseline {
            sets.push(ChannelSet::full(&proc));
            let full = sets.len() - 1;
            for &seed in &cfg.seeds {
                jobs.push(Job {
                    set: full,
                    name: RANDOM.into(),
                    seed,
                    shuffle: true,
                });
            }
        }
        log::info!(
            "{:?}: {} cells over {} channel sets",
            r,
            jobs.len(),
            sets.len()
        );
        let results: Vec<Result<CellResult>> = match cfg.task {
            Task::Detect => {
                let data = detection_data(&proc, cfg.window_s, cfg.seg_s)?;
                par_map(jobs.len(), cfg.jobs, |k| {
                    let j = &jobs[k];
                    let out = detection_cv(
                        &data,
                        &sets[j.set].channels,
                        &cfg.detection,
                        j.seed,
                        j.shuffle,
                    )?;
                    Ok(CellResult {
                        referencing: r,
                        channel_set: j.name.clone(),
                        seed: j.seed,
                        metrics: BTreeMap::from([(DETECTION.to_string(), out.accuracy)]),
                        best_epochs: out.best_epochs,
                        confusion: None,
                    })
                })
            }
            Task::Decode => {
                let data = decoding_data(&proc, audio, cfg.window_s, cfg.decoding.blocks)?;
                let dc = &cfg.decoding;
                par_map(jobs.len(), cfg.jobs, |k| {
                    let j = &jobs[k];
                    let o = decode_run(
                        &data,
                        &sets[j.set].channels,
                        &dc.arch,
                        &dc.hp,
                        j.seed,
                        j.shuffle,
                    )?;
                    let metrics = DECODE_METRICS
                        .iter()
                        .zip([
                            o.word_top1,
                            o.word_top5,
                            o.initial_top5,
                            o.final_top5,
                            o.tone_top5,
                        ])
                        .map(|(k, v)| (k.to_string(), v))
                        .collect();
                    Ok(CellResult {
                        referencing: r,
                        channel_set: j.name.clone(),
                        seed: j.seed,
                        metrics,
                        best_epochs: vec![o.best_epoch],
                        confusion: Some(o.confusion),
                    })
                })
            }
        };
        for c in results {
            cells.push(c?);
        }
    }
    let audio_lda = match cfg.task {
        Task::Decode => Some(audio_lda_probe(rec, cfg.window_s, cfg.decoding.blocks)?),
        Task::Detect => None,
    };
    let audio_encoder = match audio {
        AudioEncoder::Precomputed(es) => format!("precomputed d={}", es.d),
        AudioEncoder::Builtin { d, .. } => format!("builtin log-mel d={d}"),
    };
    Ok(assemble(
        cfg.task,
        rec.subject_id.clone(),
        cfg.clone(),
        audio_encoder,
        cells,
        audio_lda,
    ))
}

fn metric_names(task: Task) -> Vec<String> {
    match task {
        Task::Detect => vec![DETECTION.to_string()],
        Task::Decode => DECODE_METRICS.iter().map(|s| s.to_string()).collect(),
    }
}

fn seed_series(cells: &[CellResult], r: Referencing, set: &str, metric: &str) -> Vec<(u64, f64)> {
    let mut v: Vec<(u64, f64)> = cells
        .iter()
        .filter(|c| c.referencing == r && c.channel_set == set)
        .filter_map(|c| c.metrics.get(metric).map(|&m| (c.seed, m)))
        .collect();
    v.sort_by_key(|p| p.0);
    v
}

/// Summaries, marks, FULL−SMC differences and FULL-vs-Random t-tests from cells.
pub fn assemble(
    task: Task,
    subject_id: String,
    config: AblationConfig,
    audio_encoder: String,
    cells: Vec<CellResult>,
    audio_lda: Option<LdaResult>,
) -> ExperimentReport {
    let metrics = metric_names(task);
    let mut summary = Vec::new();
    let mut marks = Vec::new();
    let mut full_minus_smc = BTreeMap::new();
    let mut ttests = Vec::new();
    let mut refs: Vec<Referencing> = Vec::new();
    for c in &cells {
        if !refs.contains(&c.referencing) {
            refs.push(c.referencing);
        }
    }
    for &r in &refs {
        let mut names: Vec<String> = Vec::new();
        for c in cells.iter().filter(|c| c.referencing == r) {
            if !names.contains(&c.channel_set) {
                names.push(c.channel_set.clone());
            }
        }
        for name in &names {
            let mut mean = BTreeMap::new();
            let mut sd = BTreeMap::new();
            let mut n_seeds = 0;
            for m in &metrics {
                let v: Vec<f64> = seed_series(&cells, r, name, m)
                    .into_iter()
                    .map(|p| p.1)
                    .collect();
                n_seeds = v.len();
                let mu = v.iter().sum::<f64>() / v.len() as f64;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64
                } else {
                    0.0
                };
                mean.insert(m.clone(), mu);
                sd.insert(m.clone(), var.sqrt());
            }
            summary.push(SetSummary {
                referencing: r,
                channel_set: name.clone(),
                n_seeds,
                mean,
                sd,
            });
        }
        for m in &metrics {
            let mut ranked: Vec<(&str, f64)> = summary
                .iter()
                .filter(|s| s.referencing == r && s.channel_set != RANDOM)
                .map(|s| (s.channel_set.as_str(), s.mean[m]))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
            if let Some(&(best, _)) = ranked.first() {
                marks.push(ColumnMark {
                    referencing: r,
                    metric: m.clone(),
                    best: best.to_string(),
                    second: ranked.get(1).map(|p| p.0.to_string()),
                });
            }
            let full = seed_series(&cells, r, FULL, m);
            let smc = seed_series(&cells, r, "SMC", m);
            let paired: Vec<f64> = full
                .iter()
                .filter_map(|(s, f)| smc.iter().find(|(t, _)| t == s).map(|(_, v)| (f - v).abs()))
                .collect();
            if !paired.is_empty() {
                full_minus_smc
                    .entry(format!("{r:?}").to_lowercase())
                    .or_insert_with(BTreeMap::new)
                    .insert(m.clone(), paired.iter().sum::<f64>() / paired.len() as f64);
            }
            let random = seed_series(&cells, r, RANDOM, m);
            let pairs: Vec<(f64, f64)> = full
                .iter()
                .filter_map(|(s, f)| random.iter().find(|(t, _)| t == s).map(|(_, v)| (*f, *v)))
                .collect();
            if pairs.len() >= 2 {
                let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                if let Ok(result) = paired_ttest(&a, &b) {
                    ttests.push(TTestRecord {
                        referencing: r,
                        metric: m.clone(),
                        a: FULL.into(),
                        b: RANDOM.into(),
                        pairing: "seeds of one synthetic subject".into(),
                        result,
                    });
                }
            }
        }
    }
    ExperimentReport {
        task,
        subject_id,
        config,
        audio_encoder,
        cells,
        summary,
        marks,
        full_minus_smc,
        ttests,
        audio_lda,
    }
}

// ------------------------------------------------------------------ rendering

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// CSV files as `(file name, contents)`: a Table-style summary (channel sets ×
/// referencing/metric columns), all cells, marks, t-tests and per-set summed
/// confusion matrices.
pub fn render_csv(report: &ExperimentReport) -> Vec<(String, String)> {
    let metrics = metric_names(report.task);
    let mut refs: Vec<Referencing> = Vec::new();
    let mut sets: Vec<String> = Vec::new();
    for s in &report.summary {
        if !refs.contains(&s.referencing) {
            refs.push(s.referencing);
        }
        if !sets.contains(&s.channel_set) {
            sets.push(s.channel_set.clone());
        }
    }
    let rname = |r: Referencing| format!("{r:?}").to_lowercase();
    let mut out = Vec::new();

    let mut t = String::from("channel_set");
    for &r in &refs {
        for m in &metrics {
            write!(t, ",{}_{m}", rname(r)).unwrap();
        }
    }
    t.push('\n');
    for set in &sets {
        t.push_str(set);
        for &r in &refs {
            for m in &metrics {
                let v = report
                    .summary
                    .iter()
                    .find(|s| s.referencing == r && &s.channel_set == set)
                    .map(|s| s.mean[m]);
                write!(t, ",{}", v.map(fmt).unwrap_or_default()).unwrap();
            }
        }
        t.push('\n');
    }
    out.push(("summary.csv".to_string(), t));

    let mut t = format!("referencing,channel_set,seed,{}\n", metrics.join(","));
    for c in &report.cells {
        write!(t, "{},{},{}", rname(c.referencing), c.channel_set, c.seed).unwrap();
        for m in &metrics {
            write!(
                t,
                ",{}",
                c.metrics.get(m).map(|&v| fmt(v)).unwrap_or_default()
            )
            .unwrap();
        }
        t.push('\n');
    }
    out.push(("cells.csv".to_string(), t));

    let mut t = String::from("referencing,metric,best,second_best\n");
    for m in &report.marks {
        writeln!(
            t,
            "{},{},{},{}",
            rname(m.referencing),
            m.metric,
            m.best,
            m.second.clone().unwrap_or_default()
        )
        .unwrap();
    }
    out.push(("marks.csv".to_string(), t));

    let mut t = String::from("referencing,metric,a,b,n,t,df,p,degenerate\n");
    for x in &report.ttests {
        let r = &x.result;
        writeln!(
            t,
            "{},{},{},{},{},{:.4},{},{:.6},{}",
            rname(x.referencing),
            x.metric,
            x.a,
            x.b,
            r.n,
            r.t,
            r.df,
            r.p,
            r.degenerate
        )
        .unwrap();
    }
    out.push(("ttests.csv".to_string(), t));

    for &r in &refs {
        for set in &sets {
            let mats: Vec<&Vec<Vec<u32>>> = report
                .cells
                .iter()
                .filter(|c| c.referencing == r && &c.channel_set == set)
                .filter_map(|c| c.confusion.as_ref())
                .collect();
            if mats.is_empty() {
                continue;
            }
            out.push((
                format!("confusion_{}_{set}.csv", rname(r)),
                matrix_csv(&sum_matrices(&mats)),
            ));
        }
    }
    if let Some(l) = &report.audio_lda {
        out.push((
            "confusion_audio_lda.csv".to_string(),
            matrix_csv(&l.confusion),
        ));
    }
    out
}

fn sum_matrices(mats: &[&Vec<Vec<u32>>]) -> Vec<Vec<u32>> {
    let mut acc = mats[0].clone();
    for m in &mats[1..] {
        for (ra, rb) in acc.iter_mut().zip(m.iter()) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
    }
    acc
}

fn matrix_csv(m: &[Vec<u32>]) -> String {
    let mut t = String::from("true\\pred");
    for j in 0..m.first().map_or(0, Vec::len) {
        write!(t, ",{j}").unwrap();
    }
    t.push('\n');
    for (i, row) in m.iter().enumerate() {
        write!(t, "{i}").unwrap();
        for v in row {
            write!(t, ",{v}").unwrap();
        }
        t.push('\n');
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureConfig {
    pub freqs: Vec<f64>,
    pub n_cycles: f64,
    pub trials_per_point: usize,
    pub seg_s: f64,
    pub window_s: f64,
    pub max_trials: Option<usize>,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig {
            freqs: vec![70.0, 90.0, 110.0, 130.0, 150.0, 170.0],
            n_cycles: 7.0,
            trials_per_point: 4,
            seg_s: 0.5,
            window_s: DEFAULT_TRIAL_WINDOW_S,
            max_trials: None,
        }
    }
}

/// Speech vs non-speech series from a raw recording: audio mean squared
/// amplitude and per-electrode high-gamma Morlet power (after CAR), each
/// averaged over consecutive groups of `trials_per_point` trials.
pub fn figure_series(rec: &Recording, cfg: &FigureConfig) -> Result<Vec<(String, String)>> {
    if rec.referencing != Referencing::Raw {
        return Err(Error::Config(
            "figure series need the raw recording (band power is computed from voltages)".into(),
        ));
    }
    let car = Recording {
        seeg: reref_car(&rec.seeg),
        referencing: Referencing::Car,
        ..rec.clone()
    };
    let mut trials = segment_trials(&car, cfg.window_s, car.seeg_rate)?;
    if let Some(m) = cfg.max_trials {
        trials.truncate(m);
    }
    let groups: Vec<(&String, &Vec<usize>)> = car.electrode_groups.iter().collect();
    // per trial: (audio sp, audio ns, per-electrode (sp, ns) power)
    let mut rows: Vec<(f64, f64, Vec<(f64, f64)>)> = Vec::new();
    for t in &trials {
        let act = detect_speech_center(&t.audio_window, car.audio_rate);
        let duration = t.audio_window.len() as f64 / car.audio_rate;
        let Ok((sp, ns)) = sp_ns_starts(duration, act.center_s, cfg.seg_s) else {
            continue;
        };
        let aslice = |s: f64| {
            let a = (s * car.audio_rate).round() as usize;
            let n = (cfg.seg_s * car.audio_rate).round() as usize;
            &t.audio_window[a.min(t.audio_window.len())..(a + n).min(t.audio_window.len())]
        };
        let (xa, xn) = (
            (sp * car.seeg_rate).round() as usize,
            (ns * car.seeg_rate).round() as usize,
        );
        let nx = (cfg.seg_s * car.seeg_rate).round() as usize;
        let mut elec = Vec::new();
        for (_, chans) in &groups {
            let (mut psp, mut pns) = (0.0, 0.0);
            for &c in chans.iter() {
                let x: Vec<f64> = t.seeg_window.channel(c).iter().map(|&v| v as f64).collect();
                let band =
                    band_average(&morlet_power(&x, car.seeg_rate, &cfg.freqs, cfg.n_cycles)?);
                let avg =
                    |s: usize| band[s..(s + nx).min(band.len())].iter().sum::<f64>() / nx as f64;
                psp += avg(xa);
                pns += avg(xn);
            }
            elec.push((psp / chans.len() as f64, pns / chans.len() as f64));
        }
        rows.push((
            mean_squared_amplitude(aslice(sp)),
            mean_squared_amplitude(aslice(ns)),
            elec,
        ));
    }
    let k = cfg.trials_per_point.max(1);
    let mut fig6 = String::from("point,first_trial,speech_msa,non_speech_msa\n");
    let mut fig7 = String::from("electrode,point,first_trial,speech_power,non_speech_power\n");
    for (p, chunk) in rows.chunks(k).enumerate() {
        let n = chunk.len() as f64;
        let sp = chunk.iter().map(|r| r.0).sum::<f64>() / n;
        let ns = chunk.iter().map(|r| r.1).sum::<f64>() / n;
        writeln!(fig6, "{p},{},{sp:.6e},{ns:.6e}", p * k).unwrap();
        for (e, (name, _)) in groups.iter().enumerate() {
            let sp = chunk.iter().map(|r| r.2[e].0).sum::<f64>() / n;
            let ns = chunk.iter().map(|r| r.2[e].1).sum::<f64>() / n;
            writeln!(fig7, "{name},{p},{},{sp:.6e},{ns:.6e}", p * k).unwrap();
        }
    }
    Ok(vec![
        ("fig6_audio_amplitude.csv".into(), fig6),
        ("fig7_band_power.csv".into(), fig7),
    ])
}
