//! Labeled synthetic event logs and score-separation metrics.
//!
//! Nominal traffic is routine PV chatter: each family of PVs steps through a
//! fixed cycle of states, and families are interleaved at random. Anomalies
//! are short bursts of PVs whose tokens never occur in nominal traffic, in
//! the style of an interlock chain firing from one location.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_grammar::tokenize_event;
use crate::event_log::{LogEvent, Timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid corpus spec: {0}")]
    SpecInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels contain {anomalous} anomalous and {nominal} nominal events; both classes are required")]
    DegenerateLabels { anomalous: usize, nominal: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

#[derive(Debug, Error)]
pub enum LabelsError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad labels row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// A family of PVs sharing a name template and a state cycle.
///
/// `{}` in the template is replaced by each alphabet entry to form one PV
/// instance; a template without `{}` yields a single PV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvFamily {
    pub template: String,
    #[serde(default)]
    pub alphabet: Vec<String>,
    #[serde(default)]
    pub description: String,
    /// States visited in order; each event moves an instance one step along.
    pub cycle: Vec<String>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl PvFamily {
    pub fn instances(&self) -> Vec<String> {
        if self.template.contains("{}") && !self.alphabet.is_empty() {
            self.alphabet
                .iter()
                .map(|a| self.template.replacen("{}", a, 1))
                .collect()
        } else {
            vec![self.template.clone()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyEvent {
    pub pv: String,
    #[serde(default = "zero_state")]
    pub prev_state: String,
    #[serde(default = "one_state")]
    pub new_state: String,
    #[serde(default)]
    pub description: String,
}

fn zero_state() -> String {
    "0".into()
}

fn one_state() -> String {
    "1".into()
}

/// A burst template; bursts replay its events in order, wrapping if needed.
///
/// When `locations` is non-empty each burst picks one entry and substitutes
/// it for every `{}` in the PV names and descriptions, so a burst originates
/// from a single location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyPattern {
    #[serde(default)]
    pub locations: Vec<String>,
    pub events: Vec<AnomalyEvent>,
}

impl AnomalyPattern {
    /// The events of a burst at `location`.
    pub fn at(&self, location: &str) -> Vec<AnomalyEvent> {
        self.events
            .iter()
            .map(|e| AnomalyEvent {
                pv: e.pv.replace("{}", location),
                description: e.description.replace("{}", location),
                ..e.clone()
            })
            .collect()
    }

    /// Every concrete burst this pattern can produce.
    pub fn expansions(&self) -> Vec<Vec<AnomalyEvent>> {
        if self.locations.is_empty() {
            vec![self.events.clone()]
        } else {
            self.locations.iter().map(|l| self.at(l)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_events: usize,
    /// Fraction of events that are anomalous, within `[0, 0.05]`.
    pub anomaly_rate: f64,
    pub start: Timestamp,
    /// Consecutive timestamps differ by 1..=max_step_ms milliseconds.
    pub max_step_ms: u32,
    pub pv_families: Vec<PvFamily>,
    #[serde(default)]
    pub anomaly_patterns: Vec<AnomalyPattern>,
}

pub const MAX_ANOMALY_RATE: f64 = 0.05;

fn family(template: &str, alphabet: &[&str], description: &str, cycle: &[&str], weight: f64) -> PvFamily {
    PvFamily {
        template: template.into(),
        alphabet: alphabet.iter().map(|s| s.to_string()).collect(),
        description: description.into(),
        cycle: cycle.iter().map(|s| s.to_string()).collect(),
        weight,
    }
}

fn pattern(events: &[(&str, &str, &str, &str)]) -> AnomalyPattern {
    AnomalyPattern {
        locations: Vec::new(),
        events: events
            .iter()
            .map(|&(pv, prev, new, desc)| AnomalyEvent {
                pv: pv.into(),
                prev_state: prev.into(),
                new_state: new.into(),
                description: desc.into(),
            })
            .collect(),
    }
}

fn located(locations: &[String], events: &[(&str, &str, &str, &str)]) -> AnomalyPattern {
    AnomalyPattern {
        locations: locations.to_vec(),
        ..pattern(events)
    }
}

/// Storage-ring sector codes `01S`..`12S` etc. for the given suffixes.
fn sectors(suffixes: &[&str]) -> Vec<String> {
    (1..=12)
        .flat_map(|n| suffixes.iter().map(move |s| format!("{n:02}{s}")))
        .collect()
}

impl Default for CorpusSpec {
    /// 20k events, 1% anomalous, seed 42.
    fn default() -> Self {
        CorpusSpec {
            seed: 42,
            n_events: 20_000,
            anomaly_rate: 0.01,
            start: "2025-06-25 00:00:00.000".parse().expect("valid literal"),
            max_step_ms: 1500,
            pv_families: vec![
                family("sr07u1:{}_mtr_done", &["Hor", "Vgap", "Vert"], "Motor move done", &["1", "0"], 6.0),
                family("SR{}U___GDS1PS_BM00", &["06", "08", "11"], "Gap drive supply", &["0", "1"], 3.0),
                family("FE{}:PSS111:IsOpen", &["08BL3", "04BL1", "12BL2"], "Front end shutter open", &["0", "1"], 2.0),
                family("SR:HCM{}:ERR", &["1", "2", "3", "4"], "Horizontal corrector error", &["0", "1"], 1.5),
                family("BR:PS{}:Ready", &["1", "2"], "Booster supply ready", &["1", "0"], 1.0),
                family("LN:GUN:Mode", &[], "Gun operating mode", &["Standby", "Run", "Run"], 0.5),
            ],
            anomaly_patterns: vec![
                located(
                    &sectors(&["S", "C"]),
                    &[
                        ("SR{}___TCUP9__BM", "0", "1", "Temperature interlock"),
                        ("SR{}___TCUP9_L_BM", "0", "1", "Temperature interlock latched"),
                        ("SR{}___UP_OUT_BM", "0", "1", "Upstream outlet interlock"),
                        ("SR{}___IG1_TEMP_BM", "0", "1", "Ion gauge temperature"),
                    ],
                ),
                located(
                    &sectors(&["C"]),
                    &[
                        ("SR:DCCT5:Ok", "1", "0", "Beam current OK"),
                        ("SR{}___QD1____BM02", "1", "0", "Quadrupole supply on"),
                        ("SR{}___QD1____BM02", "0", "1", "Quadrupole supply on"),
                    ],
                ),
                located(
                    &sectors(&["U"]).into_iter().filter(|s| !["06U", "08U", "11U"].contains(&s.as_str())).collect::<Vec<_>>(),
                    &[
                        ("SR{}___ODS1PS_BM04", "1", "0", "Insertion device amplifier trip"),
                        ("SR{}___ODS1PS_BM04", "0", "1", "Insertion device amplifier trip"),
                        ("SR03:RF2:Klystron", "1", "0", "RF klystron permit"),
                    ],
                ),
            ],
        }
    }
}

impl CorpusSpec {
    fn nominal_tokens(&self) -> HashSet<String> {
        self.pv_families
            .iter()
            .flat_map(|f| f.instances().into_iter().map(move |pv| (pv, f.description.clone())))
            .filter_map(|(pv, desc)| tokenize_event(&pv, &desc).ok())
            .flat_map(|t| t.into_inner())
            .collect()
    }

    fn nominal_transitions(&self) -> HashSet<(String, String, String)> {
        let mut out = HashSet::new();
        for f in &self.pv_families {
            for pv in f.instances() {
                for (i, from) in f.cycle.iter().enumerate() {
                    let to = &f.cycle[(i + 1) % f.cycle.len()];
                    out.insert((pv.clone(), from.clone(), to.clone()));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: &str| Err(SynthError::SpecInvalid(m.to_string()));
        if self.n_events == 0 {
            return invalid("n_events must be positive");
        }
        if !(0.0..=MAX_ANOMALY_RATE).contains(&self.anomaly_rate) {
            return invalid("anomaly_rate must lie in [0, 0.05]");
        }
        if self.max_step_ms == 0 {
            return invalid("max_step_ms must be positive");
        }
        if self.pv_families.is_empty() {
            return invalid("at least one PV family is required");
        }
        for f in &self.pv_families {
            if f.cycle.len() < 2 || f.cycle.iter().any(String::is_empty) {
                return invalid("every cycle needs at least two non-empty states");
            }
            if !(f.weight.is_finite() && f.weight > 0.0) {
                return invalid("family weights must be positive");
            }
            if f.instances().iter().any(|pv| pv.is_empty() || pv.contains(['\t', '\n'])) {
                return invalid("PV names must be non-empty and free of tabs and newlines");
            }
            if f.description.contains(['\t', '\n']) {
                return invalid("descriptions must be free of tabs and newlines");
            }
        }
        if self.anomaly_count() > 0 && self.anomaly_patterns.is_empty() {
            return invalid("anomaly_rate > 0 requires anomaly patterns");
        }
        let tokens = self.nominal_tokens();
        let transitions = self.nominal_transitions();
        for p in &self.anomaly_patterns {
            if p.events.is_empty() {
                return invalid("anomaly patterns must contain events");
            }
            for e in p.expansions().iter().flatten() {
                if e.pv.is_empty()
                    || e.prev_state.is_empty()
                    || e.new_state.is_empty()
                    || [&e.pv, &e.prev_state, &e.new_state, &e.description]
                        .iter()
                        .any(|s| s.contains(['\t', '\n']))
                {
                    return invalid("anomaly events need a PV and states without tabs or newlines");
                }
            }
            let novel = |events: &[AnomalyEvent]| {
                events.iter().any(|e| {
                    let novel_token = tokenize_event(&e.pv, &e.description)
                        .map(|t| t.iter().any(|tok| !tokens.contains(tok)))
                        .unwrap_or(false);
                    novel_token
                        || !transitions.contains(&(e.pv.clone(), e.prev_state.clone(), e.new_state.clone()))
                })
            };
            if !p.expansions().iter().all(|b| novel(b)) {
                return invalid("every anomaly pattern needs a token or transition unseen in nominal traffic");
            }
        }
        let k = self.anomaly_count();
        if k > 0 && max_bursts(k) > self.n_events - k + 1 {
            return invalid("too many anomalous events to separate bursts");
        }
        Ok(())
    }

    /// A nominal-only corpus of the same traffic that ends before this one
    /// starts: no anomalies, seed + 1, start moved back by the longest
    /// possible span of this corpus.
    pub fn nominal_history(&self) -> CorpusSpec {
        let span = self.n_events as i64 * self.max_step_ms as i64;
        CorpusSpec {
            seed: self.seed.wrapping_add(1),
            anomaly_rate: 0.0,
            start: Timestamp::from_millis(self.start.millis() - span).unwrap_or(self.start),
            ..self.clone()
        }
    }

    /// Number of anomalous events: `round(rate * n)`, raised to 2 when it would be 1.
    pub fn anomaly_count(&self) -> usize {
        let k = (self.anomaly_rate * self.n_events as f64).round() as usize;
        if k == 1 {
            2.min(self.n_events.saturating_sub(1))
        } else {
            k
        }
    }
}

fn max_bursts(k: usize) -> usize {
    k / 2
}

/// Splits `total` into burst lengths of 2..=4.
fn burst_lengths(total: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left = total;
    while left > 0 {
        let len = match left {
            1 => unreachable!("burst split never leaves a single event"),
            2..=4 => left,
            5 => rng.gen_range(2..=3),
            _ => rng.gen_range(2..=4),
        };
        out.push(len);
        left -= len;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    pub lines: Vec<String>,
    pub labels: Vec<bool>,
}

impl LabeledCorpus {
    pub fn log_text(&self) -> String {
        let mut s = String::with_capacity(self.lines.iter().map(|l| l.len() + 1).sum());
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for l in &self.lines {
            writeln!(out, "{l}")?;
        }
        out.flush()
    }

    pub fn write_labels<W: Write>(&self, out: W) -> csv::Result<()> {
        write_labels(&self.labels, out)
    }
}

pub fn write_labels<W: Write>(labels: &[bool], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line_no", "is_anomaly"])?;
    for (i, &l) in labels.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `line_no,is_anomaly`; accepts `true/false` or `1/0`. Rows are
/// returned in file order.
pub fn read_labels<R: BufRead>(input: R) -> Result<Vec<(u64, bool)>, LabelsError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |reason: &str| LabelsError::BadRow {
            row: i + 1,
            reason: reason.to_string(),
        };
        if rec.len() != 2 {
            return Err(bad("expected two columns"));
        }
        let line_no = rec[0].trim().parse::<u64>().map_err(|_| bad("line_no is not an integer"))?;
        let flag = match rec[1].trim() {
            "true" | "1" => true,
            "false" | "0" => false,
            _ => return Err(bad("is_anomaly must be true/false or 1/0")),
        };
        out.push((line_no, flag));
    }
    Ok(out)
}

/// Emits a time-ordered corpus with anomalous bursts at seeded positions.
/// Bursts are separated by at least one nominal event.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<LabeledCorpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let k = spec.anomaly_count();
    let n_nominal = spec.n_events - k;
    let bursts = if k > 0 { burst_lengths(k, &mut rng) } else { Vec::new() };
    // A burst goes into one of the n_nominal + 1 gaps around nominal events.
    let mut gaps: Vec<usize> = sample(&mut rng, n_nominal + 1, bursts.len()).into_vec();
    gaps.sort_unstable();

    let instances: Vec<(usize, Vec<String>)> = spec
        .pv_families
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f.instances()))
        .collect();
    let mut positions: Vec<Vec<usize>> = instances.iter().map(|(_, v)| vec![0; v.len()]).collect();
    let family_pick =
        WeightedIndex::new(spec.pv_families.iter().map(|f| f.weight)).expect("weights validated");

    let mut lines = Vec::with_capacity(spec.n_events);
    let mut labels = Vec::with_capacity(spec.n_events);
    let mut clock = spec.start.millis();
    let mut emit = |rng: &mut ChaCha8Rng, pv: &str, prev: &str, new: &str, desc: &str, anomalous: bool| {
        clock += rng.gen_range(1..=spec.max_step_ms as i64);
        let ev = LogEvent {
            timestamp: Timestamp::from_millis(clock).expect("clock stays in range"),
            pv: pv.to_string(),
            prev_state: prev.to_string(),
            new_state: new.to_string(),
            description: desc.to_string(),
            line_no: 0,
        };
        lines.push(ev.to_line());
        labels.push(anomalous);
    };

    let mut next_burst = 0;
    for slot in 0..=n_nominal {
        while next_burst < bursts.len() && gaps[next_burst] == slot {
            let p = &spec.anomaly_patterns[rng.gen_range(0..spec.anomaly_patterns.len())];
            let events = if p.locations.is_empty() {
                p.events.clone()
            } else {
                p.at(&p.locations[rng.gen_range(0..p.locations.len())])
            };
            for j in 0..bursts[next_burst] {
                let e = &events[j % events.len()];
                emit(&mut rng, &e.pv, &e.prev_state, &e.new_state, &e.description, true);
            }
            next_burst += 1;
        }
        if slot == n_nominal {
            break;
        }
        let fi = family_pick.sample(&mut rng);
        let fam = &spec.pv_families[fi];
        let ii = rng.gen_range(0..instances[fi].1.len());
        let pos = &mut positions[fi][ii];
        let prev = &fam.cycle[*pos];
        *pos = (*pos + 1) % fam.cycle.len();
        let new = &fam.cycle[*pos];
        emit(&mut rng, &instances[fi].1[ii], prev, new, &fam.description, false);
    }

    Ok(LabeledCorpus { lines, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auroc: f64,
    pub median_ratio: f64,
    pub p95_nominal: f64,
    pub median_anomalous: f64,
    pub median_nominal: f64,
}

impl Evaluation {
    /// `key=value` lines for the eval report.
    pub fn report(&self) -> String {
        format!(
            "auroc={}\nmedian_ratio={}\np95_nominal={}\nmedian_anomalous={}\nmedian_nominal={}\n",
            fmt_metric(self.auroc),
            fmt_metric(self.median_ratio),
            fmt_metric(self.p95_nominal),
            fmt_metric(self.median_anomalous),
            fmt_metric(self.median_nominal),
        )
    }
}

fn fmt_metric(v: f64) -> String {
    if v.fract() == 0.0 && v.is_finite() {
        format!("{v:.1}")
    } else {
        v.to_string()
    }
}

/// Median by midpoint of the two central order statistics.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear interpolation between closest ranks (`(n-1)·q` positions).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Rank-sum AUROC: the probability a random anomalous score exceeds a random
/// nominal one, ties counting one half. Tied scores share their mean rank.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateLabels {
            anomalous: n_pos,
            nominal: n_neg,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tied mean ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged: (i + j + 2) / 2.
        let twice_mean_rank = (i + j + 2) as u128;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mean_rank * positives;
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg as u128) as f64)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(bad));
    }
    Ok(())
}

/// `median(anomalous) / median(nominal)` when both classes are present.
pub fn median_ratio(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (anom, nom) = split_by_label(scores, labels);
    Some(median(&anom)? / median(&nom)?)
}

fn split_by_label(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut anom = Vec::new();
    let mut nom = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l {
            anom.push(s);
        } else {
            nom.push(s);
        }
    }
    (anom, nom)
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<Evaluation, EvalError> {
    let auroc = auroc(scores, labels)?;
    let (anom, nom) = split_by_label(scores, labels);
    let median_anomalous = median(&anom).expect("both classes present");
    let median_nominal = median(&nom).expect("both classes present");
    Ok(Evaluation {
        auroc,
        median_ratio: median_anomalous / median_nominal,
        p95_nominal: quantile(&nom, 0.95).expect("both classes present"),
        median_anomalous,
        median_nominal,
    })
}

/// Distinct tokens of anomalous lines never seen on nominal lines.
pub fn novel_tokens(corpus: &LabeledCorpus) -> BTreeSet<String> {
    let mut nominal = HashSet::new();
    let mut anomalous = BTreeSet::new();
    for (line, &label) in corpus.lines.iter().zip(&corpus.labels) {
        let ev = crate::event_log::parse_line(line).expect("generated lines parse");
        if let Ok(t) = tokenize_event(&ev.pv, &ev.description) {
            for tok in t.into_inner() {
                if label {
                    anomalous.insert(tok);
                } else {
                    nominal.insert(tok);
                }
            }
        }
    }
    anomalous.retain(|t| !nominal.contains(t));
    anomalous
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::parse_line;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn small(n: usize, rate: f64, seed: u64) -> CorpusSpec {
        CorpusSpec {
            n_events: n,
            anomaly_rate: rate,
            seed,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn no_anomalies_at_zero_rate() {
        let c = generate_corpus(&small(500, 0.0, 1)).unwrap();
        assert_eq!(c.lines.len(), 500);
        assert!(c.labels.iter().all(|l| !l));
    }

    #[test]
    fn bursts_are_contiguous_and_bounded() {
        for seed in 0..20 {
            let spec = small(100, 0.05, seed);
            let c = generate_corpus(&spec).unwrap();
            assert_eq!(c.lines.len(), 100);
            assert_eq!(c.labels.len(), 100);
            assert_eq!(c.labels.iter().filter(|&&l| l).count(), 5);
            let mut run = 0;
            for &l in c.labels.iter().chain([false].iter()) {
                if l {
                    run += 1;
                } else {
                    assert!(run == 0 || (2..=4).contains(&run), "burst of {run}");
                    run = 0;
                }
            }
        }
    }

    #[test]
    fn ten_event_corpus_structure() {
        let c = generate_corpus(&small(10, 0.05, 3)).unwrap();
        assert_eq!(c.lines.len(), 10);
        assert_eq!(c.labels.len(), 10);
        let idx: Vec<usize> = (0..10).filter(|&i| c.labels[i]).collect();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx[1], idx[0] + 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small(2000, 0.01, 42);
        assert_eq!(generate_corpus(&spec).unwrap(), generate_corpus(&spec).unwrap());
        assert_ne!(generate_corpus(&spec).unwrap(), generate_corpus(&small(2000, 0.01, 43)).unwrap());
    }

    #[test]
    fn lines_parse_with_increasing_timestamps() {
        let c = generate_corpus(&small(3000, 0.01, 5)).unwrap();
        let events: Vec<LogEvent> = c.lines.iter().map(|l| parse_line(l).unwrap()).collect();
        assert!(events.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(!novel_tokens(&c).is_empty());
    }

    #[test]
    fn nominal_cycles_alternate_states() {
        let c = generate_corpus(&small(2000, 0.0, 9)).unwrap();
        let mut last: std::collections::HashMap<String, String> = Default::default();
        for line in &c.lines {
            let ev = parse_line(line).unwrap();
            if let Some(prev_new) = last.insert(ev.pv.clone(), ev.new_state.clone()) {
                assert_eq!(prev_new, ev.prev_state, "{}", ev.pv);
            }
        }
    }

    #[test]
    fn history_precedes_corpus_and_is_clean() {
        let spec = small(300, 0.05, 3);
        let hist = generate_corpus(&spec.nominal_history()).unwrap();
        let main = generate_corpus(&spec).unwrap();
        assert!(hist.labels.iter().all(|l| !l));
        assert_eq!(hist.lines.len(), 300);
        let last = parse_line(hist.lines.last().unwrap()).unwrap().timestamp;
        let first = parse_line(&main.lines[0]).unwrap().timestamp;
        assert!(last < first);
    }

    #[test]
    fn located_bursts_use_one_location() {
        let spec = CorpusSpec::default();
        let c = generate_corpus(&spec).unwrap();
        let mut burst: Vec<String> = Vec::new();
        let check = |b: &mut Vec<String>| {
            let sectors: BTreeSet<&str> = b
                .iter()
                .filter(|pv| pv.contains("___"))
                .map(|pv| &pv[..5])
                .collect();
            assert!(sectors.len() <= 1, "{b:?}");
            b.clear();
        };
        for (line, &l) in c.lines.iter().zip(&c.labels) {
            if l {
                burst.push(parse_line(line).unwrap().pv);
            } else if !burst.is_empty() {
                check(&mut burst);
            }
        }
        check(&mut burst);
    }

    #[test]
    fn spec_validation() {
        assert!(small(100, 0.06, 1).validate().is_err());
        assert!(small(0, 0.0, 1).validate().is_err());
        let mut s = small(100, 0.01, 1);
        s.anomaly_patterns.clear();
        assert!(s.validate().is_err());

        // An anomaly that only replays nominal traffic is rejected.
        let mut s = small(100, 0.01, 1);
        s.anomaly_patterns = vec![pattern(&[("sr07u1:Hor_mtr_done", "1", "0", "Motor move done")])];
        assert!(matches!(s.validate(), Err(SynthError::SpecInvalid(_))));
        // A nominal PV with an unseen transition is acceptable.
        s.anomaly_patterns = vec![pattern(&[("sr07u1:Hor_mtr_done", "1", "7", "Motor move done")])];
        assert!(s.validate().is_ok());
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = CorpusSpec::default();
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<CorpusSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn labels_csv_round_trip() {
        let labels = vec![false, true, true, false];
        let mut buf = Vec::new();
        write_labels(&labels, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "line_no,is_anomaly\n1,false\n2,true\n3,true\n4,false\n");
        let rows = read_labels(buf.as_slice()).unwrap();
        assert_eq!(rows, vec![(1, false), (2, true), (3, true), (4, false)]);
        assert!(read_labels("line_no,is_anomaly\n1,maybe\n".as_bytes()).is_err());
        assert_eq!(read_labels("line_no,is_anomaly\n7,1\n".as_bytes()).unwrap(), vec![(7, true)]);
    }

    #[test]
    fn auroc_fixed_cases() {
        assert_eq!(auroc(&[0.0, 0.0, 1.0, 1.0], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[false, true, false, true, true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 0.0], &[false, true]).unwrap(), 0.0);
        assert_eq!(
            auroc(&[1.0, 2.0], &[true, true]),
            Err(EvalError::DegenerateLabels { anomalous: 2, nominal: 0 })
        );
        assert!(matches!(auroc(&[1.0], &[true, false]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(auroc(&[f64::NAN, 1.0], &[true, false]), Err(EvalError::NonFiniteScore(_))));
    }

    fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut twice_wins = 0u64;
        let (mut np, mut nn) = (0u64, 0u64);
        for (i, &a) in scores.iter().enumerate() {
            if !labels[i] {
                nn += 1;
                continue;
            }
            np += 1;
            for (j, &b) in scores.iter().enumerate() {
                if !labels[j] {
                    twice_wins += if a > b { 2 } else if a == b { 1 } else { 0 };
                }
            }
        }
        twice_wins as f64 / (2 * np * nn) as f64
    }

    #[test]
    fn auroc_matches_pairwise_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let scores: Vec<f64> = (0..200).map(|_| (rng.gen_range(0..40) as f64) * 0.25).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.3)).collect();
        assert_eq!(auroc(&scores, &labels).unwrap(), pairwise_auroc(&scores, &labels));
    }

    #[test]
    fn evaluation_metrics() {
        let scores = [0.1, 0.2, 0.3, 0.4, 5.0, 7.0];
        let labels = [false, false, false, false, true, true];
        let e = evaluate(&scores, &labels).unwrap();
        assert_eq!(e.auroc, 1.0);
        assert_eq!(e.median_anomalous, 6.0);
        assert!((e.median_nominal - 0.25).abs() < 1e-15);
        assert!((e.median_ratio - 24.0).abs() < 1e-12);
        assert!((e.p95_nominal - 0.385).abs() < 1e-12);
        assert!(e.report().starts_with("auroc=1.0\nmedian_ratio="));
        assert_eq!(median_ratio(&[1.0, 2.0], &[true, true]), None);
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u8..20, proptest::bool::ANY), 2..120),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
            let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            labels[0] = true;
            labels[1] = false;
            let warped: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
            let a = auroc(&scores, &labels).unwrap();
            prop_assert_eq!(a, auroc(&warped, &labels).unwrap());
            prop_assert_eq!(a, pairwise_auroc(&scores, &labels));
        }
    }
}
