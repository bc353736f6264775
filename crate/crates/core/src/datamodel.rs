//! Recordings, trials, corpora and embedding sets, plus their on-disk layout.
//!
//! A recording directory holds `meta.json` (scalar and structural fields),
//! `seeg.f32le` (channel-major little-endian f32), `audio.f32le` and
//! `events.jsonl` (one [`TrialEvent`] per line). Embedding sets are
//! `emb.meta.json` + row-major `emb.f32le`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_WORDS: usize = 48;
pub const N_INITIALS: usize = 24;
pub const N_TONES: usize = 4;
/// Cue (1.0 s) plus inter-trial interval (0.6 s).
pub const DEFAULT_TRIAL_WINDOW_S: f64 = 1.6;

/// `n_channels × n_samples` matrix, each channel contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    n_channels: usize,
    n_samples: usize,
    data: Vec<f32>,
}

impl ChannelMatrix {
    pub fn new(n_channels: usize, n_samples: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_channels * n_samples {
            return Err(Error::LengthMismatch {
                file: "channel matrix".into(),
                expected: n_channels * n_samples,
                found: data.len(),
            });
        }
        Ok(ChannelMatrix {
            n_channels,
            n_samples,
            data,
        })
    }

    pub fn zeros(n_channels: usize, n_samples: usize) -> Self {
        ChannelMatrix {
            n_channels,
            n_samples,
            data: vec![0.0; n_channels * n_samples],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("rows of unequal length".into()));
        }
        Ok(ChannelMatrix {
            n_channels: rows.len(),
            n_samples: n,
            data: rows.concat(),
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data
            .chunks(self.n_samples.max(1))
            .take(self.n_channels)
    }

    /// Columns `[start, end)` of every channel.
    pub fn columns(&self, start: usize, end: usize) -> ChannelMatrix {
        assert!(
            start <= end && end <= self.n_samples,
            "column range {start}..{end} of {}",
            self.n_samples
        );
        let mut data = Vec::with_capacity(self.n_channels * (end - start));
        for c in 0..self.n_channels {
            data.extend_from_slice(&self.channel(c)[start..end]);
        }
        ChannelMatrix {
            n_channels: self.n_channels,
            n_samples: end - start,
            data,
        }
    }

    pub fn select_channels(&self, idx: &[usize]) -> Result<ChannelMatrix> {
        let mut data = Vec::with_capacity(idx.len() * self.n_samples);
        for &c in idx {
            if c >= self.n_channels {
                return Err(Error::InvalidArgument(format!(
                    "channel {c} out of range ({})",
                    self.n_channels
                )));
            }
            data.extend_from_slice(self.channel(c));
        }
        Ok(ChannelMatrix {
            n_channels: idx.len(),
            n_samples: self.n_samples,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub trial_id: u32,
    pub session: u32,
    pub block: u32,
    pub word_label: u32,
    pub initial_label: u32,
    pub final_label: u32,
    pub tone_label: u32,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusWord {
    pub word_label: u32,
    pub initial_label: u32,
    pub final_label: u32,
    pub tone_label: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub words: Vec<CorpusWord>,
}

impl Corpus {
    /// Exactly 48 distinct words, 24 initials with two words each, all four
    /// tones present.
    pub fn validate(&self) -> Result<()> {
        if self.words.len() != N_WORDS {
            return Err(Error::InvalidCorpus(format!(
                "{} words, expected {N_WORDS}",
                self.words.len()
            )));
        }
        let labels: BTreeSet<u32> = self.words.iter().map(|w| w.word_label).collect();
        if labels.len() != N_WORDS || labels.iter().any(|&l| l as usize >= N_WORDS) {
            return Err(Error::InvalidCorpus(
                "word labels must be 0..48, each once".into(),
            ));
        }
        let mut per_initial: BTreeMap<u32, usize> = BTreeMap::new();
        for w in &self.words {
            *per_initial.entry(w.initial_label).or_default() += 1;
        }
        if per_initial.len() != N_INITIALS || per_initial.values().any(|&n| n != 2) {
            return Err(Error::InvalidCorpus(format!(
                "need {N_INITIALS} initials with exactly 2 words each, got {per_initial:?}"
            )));
        }
        let tones: BTreeSet<u32> = self.words.iter().map(|w| w.tone_label).collect();
        if tones != (0..N_TONES as u32).collect() {
            return Err(Error::InvalidCorpus(format!(
                "tone labels {tones:?}, expected 0..4"
            )));
        }
        Ok(())
    }

    pub fn word(&self, word_label: u32) -> Option<&CorpusWord> {
        self.words.iter().find(|w| w.word_label == word_label)
    }

    pub fn n_finals(&self) -> usize {
        self.words
            .iter()
            .map(|w| w.final_label)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Word label → initial label, indexed by word label.
    pub fn initial_map(&self) -> Vec<u32> {
        self.label_map(|w| w.initial_label)
    }

    pub fn final_map(&self) -> Vec<u32> {
        self.label_map(|w| w.final_label)
    }

    pub fn tone_map(&self) -> Vec<u32> {
        self.label_map(|w| w.tone_label)
    }

    fn label_map(&self, f: impl Fn(&CorpusWord) -> u32) -> Vec<u32> {
        let mut m = vec![0; self.words.len()];
        for w in &self.words {
            if let Some(slot) = m.get_mut(w.word_label as usize) {
                *slot = f(w);
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Referencing {
    #[default]
    Raw,
    Car,
    Bipolar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub seeg_rate: f64,
    pub audio_rate: f64,
    pub channel_names: Vec<String>,
    /// Electrode letter → channel indices ordered by contact depth.
    pub electrode_groups: BTreeMap<String, Vec<usize>>,
    pub seeg: ChannelMatrix,
    pub audio: Vec<f32>,
    pub events: Vec<TrialEvent>,
    pub corpus: Corpus,
    pub referencing: Referencing,
}

impl Recording {
    pub fn n_channels(&self) -> usize {
        self.seeg.n_channels()
    }

    pub fn duration_s(&self) -> f64 {
        self.seeg.n_samples() as f64 / self.seeg_rate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecording(m));
        if !(self.seeg_rate > 0.0 && self.audio_rate > 0.0) {
            return bad(format!(
                "rates must be positive ({} / {})",
                self.seeg_rate, self.audio_rate
            ));
        }
        if self.channel_names.len() != self.n_channels() {
            return bad(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.n_channels()
            ));
        }
        let mut seen = vec![0usize; self.n_channels()];
        // Bipolar derivations of a two-contact shaft legitimately leave one channel.
        let min_contacts = if self.referencing == Referencing::Bipolar {
            1
        } else {
            2
        };
        for (name, idx) in &self.electrode_groups {
            if idx.len() < min_contacts {
                return bad(format!(
                    "electrode {name} has {} contacts, need >= {min_contacts}",
                    idx.len()
                ));
            }
            for &c in idx {
                match seen.get_mut(c) {
                    Some(s) => *s += 1,
                    None => {
                        return bad(format!(
                            "electrode {name} references channel {c} out of range"
                        ))
                    }
                }
            }
        }
        if let Some(c) = seen.iter().position(|&s| s != 1) {
            return bad(format!(
                "channel {c} appears in {} electrode groups",
                seen[c]
            ));
        }
        let span_seeg = self.seeg.n_samples() as f64 / self.seeg_rate;
        let span_audio = self.audio.len() as f64 / self.audio_rate;
        if (span_seeg - span_audio).abs() > 1.0 / self.audio_rate + 1e-12 {
            return bad(format!(
                "SEEG spans {span_seeg} s but audio spans {span_audio} s"
            ));
        }
        self.corpus.validate()?;
        for e in &self.events {
            if e.t_end <= e.t_start {
                return bad(format!("trial {} ends before it starts", e.trial_id));
            }
            let w = self.corpus.word(e.word_label).ok_or_else(|| {
                Error::InvalidRecording(format!(
                    "trial {} has unknown word {}",
                    e.trial_id, e.word_label
                ))
            })?;
            if (w.initial_label, w.final_label, w.tone_label)
                != (e.initial_label, e.final_label, e.tone_label)
            {
                return bad(format!(
                    "trial {} labels disagree with the corpus",
                    e.trial_id
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RecordingMeta {
    subject_id: String,
    seeg_rate: f64,
    audio_rate: f64,
    n_channels: usize,
    n_samples: usize,
    n_audio_samples: usize,
    n_events: usize,
    layout: String,
    referencing: Referencing,
    channel_names: Vec<String>,
    electrode_groups: BTreeMap<String, Vec<usize>>,
    corpus: Corpus,
}

const LAYOUT: &str = "channel-major";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    File::open(path).map_err(io_err(path))
}

pub fn write_f32le(path: &Path, values: &[f32]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Read a little-endian f32 file, rejecting partial floats and non-finite values.
pub fn read_f32le(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(io_err(path))?;
    let name = path.display().to_string();
    if bytes.len() % 4 != 0 {
        return Err(Error::LengthMismatch {
            file: name,
            expected: bytes.len() / 4 * 4,
            found: bytes.len(),
        });
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { file: name, index });
    }
    Ok(vals)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(open(path)?);
    serde_json::from_reader(r).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(out)
}

pub fn save_recording(rec: &Recording, dir: &Path) -> Result<()> {
    rec.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = RecordingMeta {
        subject_id: rec.subject_id.clone(),
        seeg_rate: rec.seeg_rate,
        audio_rate: rec.audio_rate,
        n_channels: rec.n_channels(),
        n_samples: rec.seeg.n_samples(),
        n_audio_samples: rec.audio.len(),
        n_events: rec.events.len(),
        layout: LAYOUT.into(),
        referencing: rec.referencing,
        channel_names: rec.channel_names.clone(),
        electrode_groups: rec.electrode_groups.clone(),
        corpus: rec.corpus.clone(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_f32le(&dir.join("seeg.f32le"), rec.seeg.data())?;
    write_f32le(&dir.join("audio.f32le"), &rec.audio)?;
    write_jsonl(&dir.join("events.jsonl"), &rec.events)
}

pub fn load_recording(dir: &Path) -> Result<Recording> {
    let meta: RecordingMeta = read_json(&dir.join("meta.json"))?;
    if meta.layout != LAYOUT {
        return Err(Error::InvalidRecording(format!(
            "unsupported layout {:?}",
            meta.layout
        )));
    }
    let seeg_path = dir.join("seeg.f32le");
    let seeg = read_f32le(&seeg_path)?;
    if seeg.len() != meta.n_channels * meta.n_samples {
        return Err(Error::LengthMismatch {
            file: seeg_path.display().to_string(),
            expected: meta.n_channels * meta.n_samples,
            found: seeg.len(),
        });
    }
    let audio_path = dir.join("audio.f32le");
    let audio = read_f32le(&audio_path)?;
    if audio.len() != meta.n_audio_samples {
        return Err(Error::LengthMismatch {
            file: audio_path.display().to_string(),
            expected: meta.n_audio_samples,
            found: audio.len(),
        });
    }
    let events_path = dir.join("events.jsonl");
    let events: Vec<TrialEvent> = read_jsonl(&events_path)?;
    if events.len() != meta.n_events {
        return Err(Error::LengthMismatch {
            file: events_path.display().to_string(),
            expected: meta.n_events,
            found: events.len(),
        });
    }
    let rec = Recording {
        subject_id: meta.subject_id,
        seeg_rate: meta.seeg_rate,
        audio_rate: meta.audio_rate,
        channel_names: meta.channel_names,
        electrode_groups: meta.electrode_groups,
        seeg: ChannelMatrix::new(meta.n_channels, meta.n_samples, seeg)?,
        audio,
        events,
        corpus: meta.corpus,
        referencing: meta.referencing,
    };
    rec.validate()?;
    Ok(rec)
}

/// One trial: SEEG `C × T` at the processed rate and the aligned audio slice.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSegment {
    pub event: TrialEvent,
    pub seeg_window: ChannelMatrix,
    pub audio_window: Vec<f32>,
}

impl TrialSegment {
    pub fn trial_id(&self) -> u32 {
        self.event.trial_id
    }
}

/// Cut one fixed window per event. `rate` must be the recording's SEEG rate.
pub fn segment_trials(rec: &Recording, window_s: f64, rate: f64) -> Result<Vec<TrialSegment>> {
    if (rate - rec.seeg_rate).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "recording is at {} Hz, segmentation requested at {rate} Hz",
            rec.seeg_rate
        )));
    }
    if window_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "window must be positive, got {window_s}"
        )));
    }
    let t_len = (window_s * rate).round() as usize;
    let a_len = (window_s * rec.audio_rate).round() as usize;
    let mut out = Vec::with_capacity(rec.events.len());
    for e in &rec.events {
        let oob = |what: &str, end: usize, n: usize| Error::TrialOutOfBounds {
            trial_id: e.trial_id,
            reason: format!("{what} window ends at sample {end}, recording has {n}"),
        };
        if e.t_start < 0.0 {
            return Err(Error::TrialOutOfBounds {
                trial_id: e.trial_id,
                reason: format!("starts at {} s", e.t_start),
            });
        }
        let s0 = (e.t_start * rate).round() as usize;
        if s0 + t_len > rec.seeg.n_samples() {
            return Err(oob("SEEG", s0 + t_len, rec.seeg.n_samples()));
        }
        let a0 = (e.t_start * rec.audio_rate).round() as usize;
        if a0 + a_len > rec.audio.len() {
            return Err(oob("audio", a0 + a_len, rec.audio.len()));
        }
        out.push(TrialSegment {
            event: e.clone(),
            seeg_window: rec.seeg.columns(s0, s0 + t_len),
            audio_window: rec.audio[a0..a0 + a_len].to_vec(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<i64>,
    pub d: usize,
    /// Row-major `n × d`.
    pub rows: Vec<f32>,
    /// Provenance fields written by exporters (model, layer, pooling, ...).
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingMeta {
    n: usize,
    d: usize,
    ids: Vec<i64>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<i64>, d: usize, rows: Vec<f32>) -> Result<Self> {
        let es = EmbeddingSet {
            ids,
            d,
            rows,
            extra: BTreeMap::new(),
        };
        es.validate()?;
        Ok(es)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn row_of(&self, id: i64) -> Option<&[f32]> {
        self.ids.iter().position(|&x| x == id).map(|i| self.row(i))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        if self.rows.len() != self.ids.len() * self.d {
            return Err(Error::LengthMismatch {
                file: "embedding rows".into(),
                expected: self.ids.len() * self.d,
                found: self.rows.len(),
            });
        }
        if let Some(index) = self.rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                file: "embedding rows".into(),
                index,
            });
        }
        Ok(())
    }
}

pub fn save_embeddings(es: &EmbeddingSet, dir: &Path) -> Result<()> {
    es.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = EmbeddingMeta {
        n: es.n(),
        d: es.d,
        ids: es.ids.clone(),
        extra: es.extra.clone(),
    };
    write_json(&dir.join("emb.meta.json"), &meta)?;
    write_f32le(&dir.join("emb.f32le"), &es.rows)
}

pub fn load_embeddings(dir: &Path) -> Result<EmbeddingSet> {
    let meta: EmbeddingMeta = read_json(&dir.join("emb.meta.json"))?;
    if meta.ids.len() != meta.n {
        return Err(Error::LengthMismatch {
            file: "emb.meta.json ids".into(),
            expected: meta.n,
            found: meta.ids.len(),
        });
    }
    let path: PathBuf = dir.join("emb.f32le");
    let rows = read_f32le(&path)?;
    if rows.len() != meta.n * meta.d {
        return Err(Error::LengthMismatch {
            file: path.display().to_string(),
            expected: meta.n * meta.d,
            found: rows.len(),
        });
    }
    let es = EmbeddingSet {
        ids: meta.ids,
        d: meta.d,
        rows,
        extra: meta.extra,
    };
    es.validate()?;
    Ok(es)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_corpus() -> Corpus {
        let words = (0..N_WORDS as u32)
            .map(|w| CorpusWord {
                word_label: w,
                initial_label: w / 2,
                final_label: w / 3,
                tone_label: w % 4,
            })
            .collect();
        Corpus { words }
    }

    fn small_recording(n_ch: usize, n: usize) -> Recording {
        let seeg = ChannelMatrix::new(
            n_ch,
            n,
            (0..n_ch * n)
                .map(|i| (i as f32 * 0.37).sin() * 1e-3)
                .collect(),
        )
        .unwrap();
        let mut groups = BTreeMap::new();
        groups.insert("A".to_string(), (0..n_ch).collect());
        let w = balanced_corpus().words[5];
        Recording {
            subject_id: "s0".into(),
            seeg_rate: 100.0,
            audio_rate: 400.0,
            channel_names: (0..n_ch).map(|c| format!("A{}", c + 1)).collect(),
            electrode_groups: groups,
            seeg,
            audio: (0..n * 4).map(|i| (i as f32).cos() / 3.0).collect(),
            events: vec![TrialEvent {
                trial_id: 0,
                session: 1,
                block: 1,
                word_label: w.word_label,
                initial_label: w.initial_label,
                final_label: w.final_label,
                tone_label: w.tone_label,
                t_start: 0.1,
                t_end: 0.5,
            }],
            corpus: balanced_corpus(),
            referencing: Referencing::Raw,
        }
    }

    #[test]
    fn recording_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let rec = small_recording(2, 100);
        save_recording(&rec, dir.path()).unwrap();
        let back = load_recording(dir.path()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.seeg.data()), bits(rec.seeg.data()));
        assert_eq!(bits(&back.audio), bits(&rec.audio));
        assert_eq!(back, rec);
        let meta: serde_json::Value = read_json(&dir.path().join("meta.json")).unwrap();
        assert_eq!(meta["layout"], "channel-major");
    }

    #[test]
    fn header_length_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&small_recording(3, 100), dir.path()).unwrap();
        let p = dir.path().join("meta.json");
        let mut meta: serde_json::Value = read_json(&p).unwrap();
        meta["n_channels"] = 4.into();
        write_json(&p, &meta).unwrap();
        match load_recording(dir.path()) {
            Err(Error::LengthMismatch {
                expected: 400,
                found: 300,
                ..
            }) => {}
            other => panic!("expected length mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_non_finite_files_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_recording(&small_recording(2, 50), dir.path()).unwrap();
        let mut audio = read_f32le(&dir.path().join("audio.f32le")).unwrap();
        audio[7] = f32::NAN;
        write_f32le(&dir.path().join("audio.f32le"), &audio).unwrap();
        assert!(matches!(
            load_recording(dir.path()),
            Err(Error::NonFinite { index: 7, .. })
        ));
        std::fs::remove_file(dir.path().join("events.jsonl")).unwrap();
        std::fs::write(dir.path().join("audio.f32le"), [0u8; 200 * 4]).unwrap();
        assert!(matches!(
            load_recording(dir.path()),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn segmentation_index_arithmetic() {
        let mut rec = small_recording(2, 1000);
        rec.seeg_rate = 200.0;
        rec.audio_rate = 800.0;
        rec.audio = vec![0.0; 4000];
        rec.events[0].t_start = 2.0;
        rec.events[0].t_end = 3.6;
        let segs = segment_trials(&rec, 1.6, 200.0).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].seeg_window.n_samples(), 320);
        assert_eq!(
            segs[0].seeg_window.channel(1),
            &rec.seeg.channel(1)[400..720]
        );
        assert_eq!(segs[0].audio_window.len(), 1280);
        rec.events[0].t_start = 4.5;
        rec.events[0].trial_id = 17;
        match segment_trials(&rec, 1.6, 200.0) {
            Err(Error::TrialOutOfBounds { trial_id: 17, .. }) => {}
            other => panic!("expected out-of-bounds for trial 17, got {other:?}"),
        }
    }

    #[test]
    fn corpus_checker_requires_two_words_per_initial() {
        let mut c = balanced_corpus();
        c.validate().unwrap();
        c.words[0].initial_label = 1;
        assert!(matches!(c.validate(), Err(Error::InvalidCorpus(_))));
    }

    #[test]
    fn recording_invariants() {
        let mut rec = small_recording(2, 100);
        rec.electrode_groups.insert("B".into(), vec![1]);
        assert!(
            rec.validate().is_err(),
            "channel in two groups, single-contact group"
        );
        let mut rec = small_recording(2, 100);
        rec.audio.truncate(390);
        assert!(rec.validate().is_err(), "span mismatch");
    }

    #[test]
    fn embedding_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut es = EmbeddingSet::new(vec![3, 9], 3, vec![1., 0., 0., 0., 1., 0.]).unwrap();
        es.extra.insert("pooling".into(), "mean".into());
        save_embeddings(&es, dir.path()).unwrap();
        let back = load_embeddings(dir.path()).unwrap();
        assert_eq!(back, es);
        assert_eq!(back.row_of(9).unwrap(), &[0., 1., 0.]);

        assert!(matches!(
            EmbeddingSet::new(vec![5, 5], 1, vec![0., 1.]),
            Err(Error::DuplicateId(5))
        ));

        write_f32le(&dir.path().join("emb.f32le"), &[1., 2., 3., 4., 5.]).unwrap();
        assert!(matches!(
            load_embeddings(dir.path()),
            Err(Error::LengthMismatch {
                expected: 6,
                found: 5,
                ..
            })
        ));
    }

    #[test]
    fn truncated_float_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32le");
        std::fs::write(&p, [0u8; 6]).unwrap();
        assert!(matches!(read_f32le(&p), Err(Error::LengthMismatch { .. })));
    }
}
