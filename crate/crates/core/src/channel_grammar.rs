//! Tokenizers for event text and PV names, the `Sys:DeviceID:Signal`
//! channel-name parser, and the token-flow graph used for Sankey exports.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("no alphanumeric token in input")]
    EmptyResult,
    #[error("{0:?} does not follow Sys:DeviceID:Signal")]
    NotConvention(String),
    #[error("forbidden character {ch:?} in {pv:?}")]
    ForbiddenCharacter { pv: String, ch: char },
    #[error("device instance {0:?} has a leading zero or is out of range")]
    BadDeviceInstance(String),
}

/// Ordered "words" of one event sentence. Every token is non-empty and alphanumeric.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Builds a sequence from pre-split words. Words must be non-empty alphanumeric runs.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        debug_assert!(words
            .iter()
            .all(|w| !w.is_empty() && w.chars().all(char::is_alphanumeric)));
        TokenSequence(words)
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

fn alnum_runs(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
}

/// Embedding tokenizer: PV and description joined by a space, split on every
/// non-alphanumeric run. Letter/digit mixtures such as `SR07U` stay whole.
pub fn tokenize_event(pv: &str, description: &str) -> Result<TokenSequence, GrammarError> {
    let tokens: Vec<String> = alnum_runs(pv)
        .chain(alnum_runs(description))
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(GrammarError::EmptyResult);
    }
    Ok(TokenSequence(tokens))
}

/// Grammar tokenizer: additionally splits at letter/digit boundaries.
/// With `strip_numbers`, purely numeric tokens are dropped.
pub fn tokenize_grammar(pv: &str, strip_numbers: bool) -> Result<TokenSequence, GrammarError> {
    let mut tokens = Vec::new();
    for run in alnum_runs(pv) {
        let mut start = 0;
        let mut prev_numeric: Option<bool> = None;
        for (i, c) in run.char_indices() {
            let numeric = c.is_numeric();
            if prev_numeric.is_some_and(|p| p != numeric) {
                tokens.push(&run[start..i]);
                start = i;
            }
            prev_numeric = Some(numeric);
        }
        tokens.push(&run[start..]);
    }
    let tokens: Vec<String> = tokens
        .into_iter()
        .filter(|t| !(strip_numbers && t.chars().all(char::is_numeric)))
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(GrammarError::EmptyResult);
    }
    Ok(TokenSequence(tokens))
}

/// Structured decomposition of a conforming PV name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelParts {
    pub sys_subsys: String,
    pub device: String,
    pub device_instance: Option<u64>,
    pub sub_device: Option<String>,
    pub signal: String,
    pub is_private: bool,
}

impl ChannelParts {
    pub fn reassemble(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ChannelParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.sys_subsys, self.device)?;
        if let Some(di) = self.device_instance {
            write!(f, "{di}")?;
        }
        if let Some(sub) = &self.sub_device {
            write!(f, "-{sub}")?;
        }
        write!(f, ":{}", self.signal)?;
        if self.is_private {
            f.write_str("_")?;
        }
        Ok(())
    }
}

const FORBIDDEN: &[char] = &['{', '}', '[', ']', '.', '-', '+', '=', '~', '*', '|', '<', '>'];

/// Parses `SysSubSys:DeviceID[-SubDevice]:Signal[_]`.
///
/// Only the first two colons delimit; the signal may contain more. The
/// device instance is the maximal trailing digit run of the DeviceID.
pub fn parse_channel_name(pv: &str) -> Result<ChannelParts, GrammarError> {
    let not_conv = || GrammarError::NotConvention(pv.to_string());
    let mut parts = pv.splitn(3, ':');
    let (Some(sys), Some(device_id), Some(signal)) = (parts.next(), parts.next(), parts.next())
    else {
        return Err(not_conv());
    };

    let (device_id, sub_device) = match device_id.split_once('-') {
        Some((d, s)) => (d, Some(s)),
        None => (device_id, None),
    };
    for ch in sys
        .chars()
        .chain(device_id.chars())
        .chain(sub_device.unwrap_or("").chars())
        .chain(signal.chars())
    {
        if FORBIDDEN.contains(&ch) {
            return Err(GrammarError::ForbiddenCharacter {
                pv: pv.to_string(),
                ch,
            });
        }
    }

    let (signal, is_private) = match signal.strip_suffix('_') {
        Some(s) => (s, true),
        None => (signal, false),
    };
    if sys.is_empty() || signal.is_empty() || sub_device.is_some_and(str::is_empty) {
        return Err(not_conv());
    }

    let digits_at = device_id
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_digit())
        .last()
        .map(|(i, _)| i);
    let (device, device_instance) = match digits_at {
        Some(i) => {
            let digits = &device_id[i..];
            if digits.len() > 1 && digits.starts_with('0') {
                return Err(GrammarError::BadDeviceInstance(digits.to_string()));
            }
            let di = digits
                .parse::<u64>()
                .map_err(|_| GrammarError::BadDeviceInstance(digits.to_string()))?;
            (&device_id[..i], Some(di))
        }
        None => (device_id, None),
    };
    if device.is_empty() {
        return Err(not_conv());
    }

    Ok(ChannelParts {
        sys_subsys: sys.to_string(),
        device: device.to_string(),
        device_instance,
        sub_device: sub_device.map(str::to_string),
        signal: signal.to_string(),
        is_private,
    })
}

/// A token at a path position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowNode {
    pub depth: usize,
    pub token: String,
}

/// Token paths aggregated over many PV names; counts are exact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenFlowGraph {
    pub nodes: BTreeMap<FlowNode, u64>,
    pub edges: BTreeMap<(FlowNode, FlowNode), u64>,
    /// Names that produced no token at all.
    pub skipped: u64,
}

impl TokenFlowGraph {
    pub fn add_path(&mut self, tokens: &TokenSequence) {
        let mut prev: Option<FlowNode> = None;
        for (depth, token) in tokens.iter().enumerate() {
            let node = FlowNode {
                depth,
                token: token.clone(),
            };
            *self.nodes.entry(node.clone()).or_default() += 1;
            if let Some(p) = prev.take() {
                *self.edges.entry((p, node.clone())).or_default() += 1;
            }
            prev = Some(node);
        }
    }
}

pub fn build_flow_graph<I, S>(pvs: I, strip_numbers: bool) -> TokenFlowGraph
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut graph = TokenFlowGraph::default();
    for pv in pvs {
        match tokenize_grammar(pv.as_ref(), strip_numbers) {
            Ok(path) => graph.add_path(&path),
            Err(_) => graph.skipped += 1,
        }
    }
    graph
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: usize,
    pub token: String,
    pub depth: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source_id: usize,
    pub target_id: usize,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyDocument {
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
}

impl SankeyDocument {
    pub fn from_graph(graph: &TokenFlowGraph) -> Self {
        // BTreeMap order on FlowNode is (depth, token), which fixes the ids.
        let mut ids = BTreeMap::new();
        let nodes = graph
            .nodes
            .iter()
            .enumerate()
            .map(|(id, (node, &count))| {
                ids.insert(node, id);
                SankeyNode {
                    id,
                    token: node.token.clone(),
                    depth: node.depth,
                    count,
                }
            })
            .collect();
        let mut links: Vec<SankeyLink> = graph
            .edges
            .iter()
            .map(|((from, to), &count)| SankeyLink {
                source_id: ids[from],
                target_id: ids[to],
                count,
            })
            .collect();
        links.sort_by_key(|l| (l.source_id, l.target_id));
        SankeyDocument { nodes, links }
    }
}

/// Compact, byte-stable JSON: nodes sorted by (depth, token), links by (source_id, target_id).
pub fn export_sankey(graph: &TokenFlowGraph) -> String {
    serde_json::to_string(&SankeyDocument::from_graph(graph)).expect("plain structs serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn words(seq: &TokenSequence) -> Vec<&str> {
        seq.iter().map(String::as_str).collect()
    }

    #[test]
    fn event_tokenizer_keeps_alphanumeric_runs() {
        let t = tokenize_event("SR07U:GDS1E:BC02", "").unwrap();
        assert_eq!(words(&t), ["SR07U", "GDS1E", "BC02"]);
        let t = tokenize_event("SR12C___QD1____BM02", "").unwrap();
        assert_eq!(words(&t), ["SR12C", "QD1", "BM02"]);
        let t = tokenize_event("A:B", "power supply").unwrap();
        assert_eq!(words(&t), ["A", "B", "power", "supply"]);
        assert_eq!(tokenize_event("::", " - "), Err(GrammarError::EmptyResult));
    }

    /// Character-class reference splitter: classify each char, cut on class change.
    fn reference_grammar_split(s: &str, strip: bool) -> Vec<String> {
        #[derive(PartialEq, Clone, Copy)]
        enum Class {
            Sep,
            Digit,
            Alpha,
        }
        let class = |c: char| {
            if c.is_numeric() {
                Class::Digit
            } else if c.is_alphanumeric() {
                Class::Alpha
            } else {
                Class::Sep
            }
        };
        let mut out: Vec<(Class, String)> = Vec::new();
        let mut last = Class::Sep;
        for c in s.chars() {
            let k = class(c);
            if k != Class::Sep {
                if k == last {
                    out.last_mut().unwrap().1.push(c);
                } else {
                    out.push((k, c.to_string()));
                }
            }
            last = k;
        }
        out.into_iter()
            .filter(|(k, _)| !(strip && *k == Class::Digit))
            .map(|(_, t)| t)
            .collect()
    }

    #[test]
    fn grammar_tokenizer_splits_digit_boundaries() {
        let t = tokenize_grammar("SR07U:GDS1E:BC02", false).unwrap();
        assert_eq!(words(&t), reference_grammar_split("SR07U:GDS1E:BC02", false));
        assert_eq!(words(&t), ["SR", "07", "U", "GDS", "1", "E", "BC", "02"]);
        let t = tokenize_grammar("SR07U:GDS1E:BC02", true).unwrap();
        assert_eq!(words(&t), reference_grammar_split("SR07U:GDS1E:BC02", true));
        assert_eq!(words(&t), ["SR", "U", "GDS", "E", "BC"]);
        assert_eq!(words(&tokenize_grammar("A1", true).unwrap()), ["A"]);
        assert_eq!(tokenize_grammar("123:45", true), Err(GrammarError::EmptyResult));
    }

    #[test]
    fn parses_convention_names() {
        let p = parse_channel_name("SR:DCCT5:Ok").unwrap();
        assert_eq!(p.sys_subsys, "SR");
        assert_eq!(p.device, "DCCT");
        assert_eq!(p.device_instance, Some(5));
        assert_eq!(p.sub_device, None);
        assert_eq!(p.signal, "Ok");
        assert!(!p.is_private);

        let p = parse_channel_name("SR07U:GDS1E:BC02").unwrap();
        assert_eq!(p.sys_subsys, "SR07U");
        assert_eq!(p.device, "GDS1E");
        assert_eq!(p.device_instance, None);
        assert_eq!(p.signal, "BC02");

        let p = parse_channel_name("BR:PS3-Aux:Curr:Mon_").unwrap();
        assert_eq!(p.device, "PS");
        assert_eq!(p.device_instance, Some(3));
        assert_eq!(p.sub_device.as_deref(), Some("Aux"));
        assert_eq!(p.signal, "Curr:Mon");
        assert!(p.is_private);
        assert_eq!(p.reassemble(), "BR:PS3-Aux:Curr:Mon_");
    }

    #[test]
    fn rejects_non_conforming_names() {
        assert_eq!(
            parse_channel_name("SYS:DEV01:SIG"),
            Err(GrammarError::BadDeviceInstance("01".into()))
        );
        assert!(matches!(
            parse_channel_name("sr07u1:Hor_mtr_done"),
            Err(GrammarError::NotConvention(_))
        ));
        assert!(matches!(
            parse_channel_name("SR12S___TCUP9__BM"),
            Err(GrammarError::NotConvention(_))
        ));
        assert!(matches!(
            parse_channel_name("SR:DEV:SIG.VAL"),
            Err(GrammarError::ForbiddenCharacter { ch: '.', .. })
        ));
        assert!(matches!(
            parse_channel_name("SR:A-B-C:SIG"),
            Err(GrammarError::ForbiddenCharacter { ch: '-', .. })
        ));
        assert!(matches!(
            parse_channel_name("SR-X:DEV:SIG"),
            Err(GrammarError::ForbiddenCharacter { ch: '-', .. })
        ));
        assert!(matches!(parse_channel_name("SR:7:SIG"), Err(GrammarError::NotConvention(_))));
        assert!(matches!(parse_channel_name(":DEV:SIG"), Err(GrammarError::NotConvention(_))));
        assert!(matches!(parse_channel_name("SR:DEV:_"), Err(GrammarError::NotConvention(_))));
        assert!(matches!(
            parse_channel_name("SR:DEV99999999999999999999999:S"),
            Err(GrammarError::BadDeviceInstance(_))
        ));
        assert_eq!(parse_channel_name("SR:DEV0:S").unwrap().device_instance, Some(0));
    }

    #[test]
    fn flow_graph_counts() {
        let g = build_flow_graph(["SR:HCM1:ERR"], true);
        let doc = SankeyDocument::from_graph(&g);
        assert_eq!(
            doc.nodes.iter().map(|n| (n.token.as_str(), n.count)).collect::<Vec<_>>(),
            [("SR", 1), ("HCM", 1), ("ERR", 1)]
        );
        assert_eq!(doc.links.len(), 2);
        assert!(doc.links.iter().all(|l| l.count == 1));

        assert_eq!(export_sankey(&build_flow_graph(Vec::<&str>::new(), true)), r#"{"nodes":[],"links":[]}"#);

        let g = build_flow_graph(["A:B", "A:B", "A:C", "::"], false);
        let a = FlowNode { depth: 0, token: "A".into() };
        let b = FlowNode { depth: 1, token: "B".into() };
        let c = FlowNode { depth: 1, token: "C".into() };
        assert_eq!(g.nodes[&a], 3);
        assert_eq!(g.edges[&(a.clone(), b)], 2);
        assert_eq!(g.edges[&(a, c)], 1);
        assert_eq!(g.skipped, 1);
    }

    #[test]
    fn single_path_export() {
        let json = export_sankey(&build_flow_graph(["A:B"], false));
        assert_eq!(
            json,
            r#"{"nodes":[{"id":0,"token":"A","depth":0,"count":1},{"id":1,"token":"B","depth":1,"count":1}],"links":[{"source_id":0,"target_id":1,"count":1}]}"#
        );
    }

    fn conforming_name() -> impl Strategy<Value = String> {
        (
            "[A-Z][A-Za-z0-9]{0,5}",
            "[A-Za-z]{0,4}[A-Za-z]",
            proptest::option::of(0u64..5000),
            proptest::option::of("[A-Za-z0-9]{1,4}"),
            "[A-Za-z0-9][A-Za-z0-9_:]{0,8}",
            any::<bool>(),
        )
            .prop_map(|(sys, dev, di, sub, sig, private)| {
                let mut s = format!("{sys}:{dev}");
                if let Some(d) = di {
                    s.push_str(&d.to_string());
                }
                if let Some(sub) = sub {
                    s.push('-');
                    s.push_str(&sub);
                }
                s.push(':');
                s.push_str(&sig);
                if private {
                    s.push('_');
                }
                s
            })
    }

    proptest! {
        #[test]
        fn channel_parse_reassembles(name in conforming_name()) {
            let parts = parse_channel_name(&name).unwrap();
            prop_assert!(!parts.device.ends_with(|c: char| c.is_ascii_digit()));
            prop_assert_eq!(parts.reassemble(), name);
        }

        #[test]
        fn event_tokens_resplit_to_themselves(pv in "[A-Za-z0-9:_ .-]{1,24}", sep in "[:_ .,-]{1,3}") {
            if let Ok(t) = tokenize_event(&pv, "") {
                let joined = t.tokens().join(&sep);
                prop_assert_eq!(tokenize_event(&joined, "").unwrap(), t);
            }
        }

        #[test]
        fn grammar_refines_event_tokens(pv in "[A-Za-z0-9:_]{1,24}") {
            if let Ok(coarse) = tokenize_event(&pv, "") {
                let fine = tokenize_grammar(&pv, false).unwrap();
                prop_assert_eq!(words(&fine), reference_grammar_split(&pv, false));
                // Greedily consume fine tokens to rebuild each coarse token.
                let mut it = fine.iter();
                for token in coarse.iter() {
                    let mut acc = String::new();
                    while acc.len() < token.len() {
                        acc.push_str(it.next().unwrap());
                    }
                    prop_assert_eq!(&acc, token);
                }
                prop_assert!(it.next().is_none());
            }
        }

        #[test]
        fn flow_graph_conserves_and_matches_counter(
            pvs in proptest::collection::vec("[AB][0-9]?[:_][AB]{0,2}[0-9]?", 0..40),
            strip in any::<bool>(),
        ) {
            let g = build_flow_graph(&pvs, strip);
            let mut node_ref: HashMap<(usize, String), u64> = HashMap::new();
            for pv in &pvs {
                if let Ok(t) = tokenize_grammar(pv, strip) {
                    for (d, tok) in t.iter().enumerate() {
                        *node_ref.entry((d, tok.clone())).or_default() += 1;
                    }
                }
            }
            prop_assert_eq!(g.nodes.len(), node_ref.len());
            for (n, c) in &g.nodes {
                prop_assert_eq!(node_ref[&(n.depth, n.token.clone())], *c);
                if n.depth > 0 {
                    let incoming: u64 = g.edges.iter().filter(|((_, to), _)| to == n).map(|(_, c)| c).sum();
                    prop_assert_eq!(incoming, *c);
                }
            }
        }
    }
}
