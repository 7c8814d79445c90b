//! End-to-end training and scoring, the model bundle file, and the score CSVs.
//!
//! # Bundle layout
//!
//! A bundle is one UTF-8 file: a fixed header, a blank line, then a JSON payload.
//!
//! ```text
//! EPICS-ANOMALY-BUNDLE
//! format_version: 1
//! payload_bytes: <decimal byte length of the payload>
//! sha256: <lowercase hex SHA-256 of the payload>
//!
//! {...payload JSON...}
//! ```
//!
//! Floats in the payload are written as shortest round-trip decimals and are
//! parsed back exactly. A header whose `format_version` differs from
//! [`FORMAT_VERSION`] is rejected; length or checksum failures mean the file
//! is corrupt.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel_grammar::{tokenize_event, tokenize_grammar, TokenSequence};
use crate::event_log::{Diagnostic, EventReader, FilterList, LogEvent, ReadError, TimeRange, Timestamp};
use crate::sequence_detector::{
    init_params, score_step, train_detector_with, DetectorConfig, DetectorDims, DetectorError,
    DetectorParams, Hypersphere, StreamState,
};
use crate::token_embeddings::{embed_event, train_skipgram, EmbeddingError, EmbeddingModel, SkipGramConfig};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "EPICS-ANOMALY-BUNDLE";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no events left after filtering")]
    EmptyCorpus,
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding training failed: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("detector training failed: {0}")]
    Detector(#[from] DetectorError),
    #[error("bundle format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("stream state does not belong to this model: {0}")]
    StateMismatch(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    /// Stable name printed by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::EmptyCorpus => "EmptyCorpus",
            PipelineError::Read(_) | PipelineError::Io(_) => "IoError",
            PipelineError::Embedding(EmbeddingError::NonFiniteUpdate { .. })
            | PipelineError::Detector(DetectorError::NonFiniteUpdate { .. }) => "NonFiniteUpdate",
            PipelineError::Embedding(_) | PipelineError::Detector(_) => "InvalidConfig",
            PipelineError::VersionMismatch { .. } => "VersionMismatch",
            PipelineError::CorruptBundle(_) => "CorruptBundle",
            PipelineError::StateMismatch(_) => "StateMismatch",
            PipelineError::Csv(_) => "CsvError",
        }
    }
}

/// How event text becomes embedding "sentences".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// Alphanumeric runs of PV and description.
    #[default]
    Event,
    /// Also split at letter/digit boundaries.
    Grammar,
    /// Grammar split with purely numeric tokens removed.
    GrammarStripNumbers,
}

impl TokenizerMode {
    /// Tokens of one event; an event without any token yields an empty sequence.
    pub fn tokenize(self, pv: &str, description: &str) -> TokenSequence {
        let result = match self {
            TokenizerMode::Event => tokenize_event(pv, description),
            TokenizerMode::Grammar => tokenize_grammar(&format!("{pv} {description}"), false),
            TokenizerMode::GrammarStripNumbers => tokenize_grammar(&format!("{pv} {description}"), true),
        };
        result.unwrap_or_default()
    }
}

/// Every knob of the training pipeline. All fields have documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tokenizer: TokenizerMode,
    /// Training events are restricted to this window.
    pub time_range: TimeRange,
    pub embedding: SkipGramConfig,
    pub detector: DetectorConfig,
}

impl PipelineConfig {
    /// Seed for detector initialization, derived from the master seed.
    pub fn detector_seed(&self) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15
    }
}

/// Preprocessing applied at scoring time, frozen at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub filter: FilterList,
    pub tokenizer: TokenizerMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub events: u64,
    pub first_timestamp: Timestamp,
    pub last_timestamp: Timestamp,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub seed: u64,
    pub config: PipelineConfig,
    pub preprocessing: Preprocessing,
    pub embedding: EmbeddingModel,
    pub detector: DetectorParams,
    pub sphere: Hypersphere,
    pub training: TrainingSummary,
}

impl ModelBundle {
    fn payload(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    /// Hex SHA-256 of the payload; identifies the model.
    pub fn checksum(&self) -> String {
        sha256_hex(self.payload().as_bytes())
    }

    pub fn dims(&self) -> DetectorDims {
        self.detector.dims()
    }

    pub fn tokenize(&self, event: &LogEvent) -> TokenSequence {
        self.preprocessing.tokenizer.tokenize(&event.pv, &event.description)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_bundle<W: Write>(bundle: &ModelBundle, mut sink: W) -> std::io::Result<()> {
    let payload = bundle.payload();
    write!(
        sink,
        "{MAGIC}\nformat_version: {}\npayload_bytes: {}\nsha256: {}\n\n{payload}",
        bundle.format_version,
        payload.len(),
        sha256_hex(payload.as_bytes())
    )?;
    sink.flush()
}

pub fn bundle_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    save_bundle(bundle, &mut out).expect("writing to memory");
    out
}

pub fn load_bundle<R: std::io::Read>(mut source: R) -> Result<ModelBundle, PipelineError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_bundle(&bytes)
}

pub fn parse_bundle(bytes: &[u8]) -> Result<ModelBundle, PipelineError> {
    let corrupt = |m: &str| PipelineError::CorruptBundle(m.to_string());
    let mut rest = bytes;
    let mut header = Vec::with_capacity(4);
    for _ in 0..5 {
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("truncated header"))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt("header is not UTF-8"))?;
        header.push(line);
        rest = &rest[nl + 1..];
    }
    if header[0] != MAGIC {
        return Err(corrupt("missing bundle signature"));
    }
    let field = |line: &str, key: &str| -> Result<String, PipelineError> {
        line.strip_prefix(key)
            .and_then(|v| v.strip_prefix(": "))
            .map(str::to_string)
            .ok_or_else(|| PipelineError::CorruptBundle(format!("expected {key} header")))
    };
    let found: u32 = field(header[1], "format_version")?
        .parse()
        .map_err(|_| corrupt("format_version is not an integer"))?;
    if found != FORMAT_VERSION {
        return Err(PipelineError::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let len: usize = field(header[2], "payload_bytes")?
        .parse()
        .map_err(|_| corrupt("payload_bytes is not an integer"))?;
    let digest = field(header[3], "sha256")?;
    if !header[4].is_empty() {
        return Err(corrupt("missing blank line after header"));
    }
    if rest.len() != len {
        return Err(PipelineError::CorruptBundle(format!(
            "payload is {} bytes, header declares {len}",
            rest.len()
        )));
    }
    if sha256_hex(rest) != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let bundle: ModelBundle = serde_json::from_slice(rest)
        .map_err(|e| PipelineError::CorruptBundle(format!("payload: {e}")))?;
    if bundle.format_version != found {
        return Err(corrupt("payload and header versions disagree"));
    }
    validate_bundle(&bundle)?;
    Ok(bundle)
}

fn validate_bundle(b: &ModelBundle) -> Result<(), PipelineError> {
    let corrupt = |m: &str| Err(PipelineError::CorruptBundle(m.to_string()));
    let dims = b.detector.dims();
    let emb = &b.embedding;
    if emb.input_vectors.len() != emb.vocab.len() * emb.dim || emb.output_vectors.len() != emb.input_vectors.len() {
        return corrupt("embedding matrix shape");
    }
    if emb.dim != dims.input {
        return corrupt("embedding and detector dimensions disagree");
    }
    let shapes = [
        (dims.hidden, dims.input),
        (dims.hidden, dims.input),
        (dims.hidden, dims.input),
        (dims.hidden, dims.hidden),
        (dims.hidden, dims.hidden),
        (dims.hidden, dims.hidden),
        (dims.latent, dims.hidden),
    ];
    for (m, (r, c)) in b.detector.matrices().iter().zip(shapes) {
        if m.rows() != r || m.cols() != c || m.data().len() != r * c {
            return corrupt("detector matrix shape");
        }
    }
    if b.sphere.center.len() != dims.latent || !b.sphere.frozen {
        return corrupt("hypersphere");
    }
    Ok(())
}

/// Reads, filters and time-restricts the training events.
fn collect_training_events<R: BufRead>(
    source: R,
    filter: &FilterList,
    range: &TimeRange,
    on_diagnostic: &mut dyn FnMut(&Diagnostic),
) -> Result<Vec<LogEvent>, PipelineError> {
    let mut reader = EventReader::new(source, filter);
    let mut events = Vec::new();
    while let Some(item) = reader.next() {
        for d in reader.take_diagnostics() {
            on_diagnostic(&d);
        }
        let ev = item?;
        if range.contains(ev.timestamp) {
            events.push(ev);
        }
    }
    for d in reader.take_diagnostics() {
        on_diagnostic(&d);
    }
    Ok(events)
}

/// Hooks for progress reporting during [`train_pipeline_with`].
pub struct TrainHooks<'a> {
    pub on_diagnostic: &'a mut dyn FnMut(&Diagnostic),
    pub on_epoch: &'a mut dyn FnMut(usize, f64),
}

pub fn train_pipeline<R: BufRead>(
    source: R,
    filter: &FilterList,
    config: &PipelineConfig,
) -> Result<ModelBundle, PipelineError> {
    train_pipeline_with(
        source,
        filter,
        config,
        TrainHooks {
            on_diagnostic: &mut |_| {},
            on_epoch: &mut |_, _| {},
        },
    )
}

/// read → tokenize → skip-gram → embed → center + SVDD training → bundle.
pub fn train_pipeline_with<R: BufRead>(
    source: R,
    filter: &FilterList,
    config: &PipelineConfig,
    hooks: TrainHooks<'_>,
) -> Result<ModelBundle, PipelineError> {
    config.embedding.validate()?;
    config.detector.validate()?;
    let events = collect_training_events(source, filter, &config.time_range, hooks.on_diagnostic)?;
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Err(PipelineError::EmptyCorpus);
    };
    let (first_timestamp, last_timestamp) = (first.timestamp, last.timestamp);

    let sentences: Vec<TokenSequence> = events
        .iter()
        .map(|e| config.tokenizer.tokenize(&e.pv, &e.description))
        .collect();
    let non_empty: Vec<TokenSequence> = sentences.iter().filter(|s| !s.is_empty()).cloned().collect();
    if non_empty.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let embedding = train_skipgram(&non_empty, &config.embedding, config.seed)?;

    let stream: Vec<Vec<f64>> = sentences.iter().map(|s| embed_event(s, &embedding).values).collect();
    let dims = DetectorDims {
        input: embedding.dim,
        hidden: config.detector.hidden,
        latent: config.detector.latent,
    };
    let params = init_params(dims, config.detector_seed())?;
    let trained = train_detector_with(params, &stream, &config.detector, |e, l| (hooks.on_epoch)(e, l))?;

    Ok(ModelBundle {
        format_version: FORMAT_VERSION,
        seed: config.seed,
        config: config.clone(),
        preprocessing: Preprocessing {
            filter: filter.clone(),
            tokenizer: config.tokenizer,
        },
        embedding,
        detector: trained.params,
        sphere: trained.sphere,
        training: TrainingSummary {
            events: events.len() as u64,
            first_timestamp,
            last_timestamp,
            loss_trace: trained.loss_trace,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub timestamp: Timestamp,
    pub pv: String,
    pub prev_state: String,
    pub new_state: String,
    pub score: f64,
    pub n_known: usize,
    pub latent: Vec<f64>,
    /// Source line of the event; not part of the CSV.
    pub line_no: u64,
}

/// Persisted [`StreamState`] tied to the bundle it was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedState {
    pub bundle_sha256: String,
    pub state: StreamState,
}

impl SavedState {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::StateMismatch(format!("unreadable state: {e}")))
    }
}

/// Scores events one at a time against a bundle, owning one stream state.
pub struct Scorer<'b> {
    bundle: &'b ModelBundle,
    checksum: String,
    state: StreamState,
}

impl<'b> Scorer<'b> {
    pub fn new(bundle: &'b ModelBundle) -> Self {
        Scorer {
            bundle,
            checksum: bundle.checksum(),
            state: StreamState::new(bundle.dims().hidden),
        }
    }

    /// Resumes from a state saved with [`Scorer::save_state`].
    pub fn resume(bundle: &'b ModelBundle, saved: SavedState) -> Result<Self, PipelineError> {
        let mut scorer = Scorer::new(bundle);
        if saved.bundle_sha256 != scorer.checksum {
            return Err(PipelineError::StateMismatch("state was saved for a different bundle".into()));
        }
        if saved.state.hidden.len() != bundle.dims().hidden {
            return Err(PipelineError::StateMismatch("hidden size differs".into()));
        }
        scorer.state = saved.state;
        Ok(scorer)
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn save_state(&self) -> SavedState {
        SavedState {
            bundle_sha256: self.checksum.clone(),
            state: self.state.clone(),
        }
    }

    pub fn score(&mut self, event: &LogEvent) -> ScoreRecord {
        let tokens = self.bundle.tokenize(event);
        let vector = embed_event(&tokens, &self.bundle.embedding);
        let (scored, next) = score_step(&self.bundle.detector, &self.bundle.sphere, &self.state, &vector);
        self.state = next;
        ScoreRecord {
            timestamp: event.timestamp,
            pv: event.pv.clone(),
            prev_state: event.prev_state.clone(),
            new_state: event.new_state.clone(),
            score: scored.score,
            n_known: vector.n_known,
            latent: scored.latent,
            line_no: event.line_no,
        }
    }

    /// Scores every non-filtered event of `source` using the bundle's own filter.
    pub fn score_source<R: BufRead>(
        &mut self,
        source: R,
        mut on_record: impl FnMut(ScoreRecord) -> Result<(), PipelineError>,
        mut on_diagnostic: impl FnMut(&Diagnostic),
    ) -> Result<u64, PipelineError> {
        let filter = &self.bundle.preprocessing.filter;
        let mut reader = EventReader::new(source, filter);
        let mut n = 0;
        while let Some(item) = reader.next() {
            for d in reader.take_diagnostics() {
                on_diagnostic(&d);
            }
            let record = self.score(&item?);
            on_record(record)?;
            n += 1;
        }
        for d in reader.take_diagnostics() {
            on_diagnostic(&d);
        }
        Ok(n)
    }
}

/// Scores a whole source from a fresh stream state.
pub fn score_events<R: BufRead>(bundle: &ModelBundle, source: R) -> Result<Vec<ScoreRecord>, PipelineError> {
    let mut out = Vec::new();
    Scorer::new(bundle).score_source(
        source,
        |r| {
            out.push(r);
            Ok(())
        },
        |_| {},
    )?;
    Ok(out)
}

pub const SCORE_HEADER: [&str; 6] = ["timestamp", "pv", "prev", "new", "score", "n_known"];

/// Writer for `timestamp,pv,prev,new,score,n_known`.
pub struct ScoreCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ScoreCsvWriter<W> {
    /// With `header == false` rows are appended to an existing file.
    pub fn new(out: W, header: bool) -> Result<Self, PipelineError> {
        let mut inner = csv::Writer::from_writer(out);
        if header {
            inner.write_record(SCORE_HEADER)?;
        }
        Ok(ScoreCsvWriter { inner })
    }

    pub fn write(&mut self, r: &ScoreRecord) -> Result<(), PipelineError> {
        self.inner.write_record([
            r.timestamp.to_string(),
            r.pv.clone(),
            r.prev_state.clone(),
            r.new_state.clone(),
            r.score.to_string(),
            r.n_known.to_string(),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), PipelineError> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Writer for `timestamp,pv,z_0..z_{Z-1}`.
pub struct LatentCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> LatentCsvWriter<W> {
    pub fn new(out: W, latent_dim: usize, header: bool) -> Result<Self, PipelineError> {
        let mut inner = csv::Writer::from_writer(out);
        if header {
            let mut h = vec!["timestamp".to_string(), "pv".to_string()];
            h.extend((0..latent_dim).map(|k| format!("z_{k}")));
            inner.write_record(&h)?;
        }
        Ok(LatentCsvWriter { inner })
    }

    pub fn write(&mut self, r: &ScoreRecord) -> Result<(), PipelineError> {
        let mut row = vec![r.timestamp.to_string(), r.pv.clone()];
        row.extend(r.latent.iter().map(f64::to_string));
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), PipelineError> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_scores<W: Write>(records: &[ScoreRecord], out: W) -> Result<(), PipelineError> {
    let mut w = ScoreCsvWriter::new(out, true)?;
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

/// Reads the `score` column of a score CSV, in row order.
pub fn read_score_column<R: std::io::Read>(input: R) -> Result<Vec<f64>, PipelineError> {
    let mut r = csv::Reader::from_reader(input);
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| PipelineError::CorruptBundle("score CSV has no score column".into()))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec.get(idx)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| PipelineError::CorruptBundle(format!("bad score value in row {:?}", rec.position())))
        })
        .collect()
}
