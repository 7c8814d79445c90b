//! Skip-gram with negative sampling over event "sentences", and event
//! vectors composed as the sum of their token vectors.

use std::collections::HashMap;
use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_grammar::TokenSequence;
use crate::math::{dot, sigmoid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("no token reaches the minimum count")]
    EmptyVocab,
    #[error("invalid skip-gram configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("vector dimensions disagree: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite weight after update {update}; lower the learning rate")]
    NonFiniteUpdate { update: u64 },
}

/// Dense token indices in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<u64>,
    min_count: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    min_count: u64,
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let index = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            index,
            tokens: r.tokens,
            counts: r.counts,
            min_count: r.min_count,
        }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            min_count: v.min_count,
            tokens: v.tokens,
            counts: v.counts,
        }
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Negative-sampling distribution, proportional to count^0.75.
    pub fn unigram_weights(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| (c as f64).powf(0.75)).collect()
    }
}

pub fn build_vocab(sentences: &[TokenSequence], min_count: u64) -> Result<Vocab, EmbeddingError> {
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in sentences.iter().flat_map(TokenSequence::iter) {
        let c = counts.entry(tok.as_str()).or_insert_with(|| {
            order.push(tok.as_str());
            0
        });
        *c += 1;
    }
    let mut vocab = Vocab {
        index: HashMap::new(),
        tokens: Vec::new(),
        counts: Vec::new(),
        min_count,
    };
    for tok in order {
        let c = counts[tok];
        if c >= min_count {
            vocab.index.insert(tok.to_string(), vocab.tokens.len());
            vocab.tokens.push(tok.to_string());
            vocab.counts.push(c);
        }
    }
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyVocab);
    }
    Ok(vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            window: 8,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 1,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim < 2 {
            return Err(EmbeddingError::InvalidConfig("dim must be at least 2"));
        }
        if self.negatives < 1 {
            return Err(EmbeddingError::InvalidConfig("negatives must be at least 1"));
        }
        if self.min_count < 1 {
            return Err(EmbeddingError::InvalidConfig("min_count must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(EmbeddingError::InvalidConfig("learning_rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Vocabulary plus input (`v`) and output (`u`) vectors, row-major `V x D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub vocab: Vocab,
    pub dim: usize,
    pub input_vectors: Vec<f64>,
    pub output_vectors: Vec<f64>,
}

impl EmbeddingModel {
    /// Input vectors uniform in `[-0.5/D, 0.5/D]`, output vectors zero.
    pub fn initialize(vocab: Vocab, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 0.5 / dim as f64;
        let input_vectors = (0..vocab.len() * dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let output_vectors = vec![0.0; vocab.len() * dim];
        EmbeddingModel {
            vocab,
            dim,
            input_vectors,
            output_vectors,
        }
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.input_vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.vocab.get(token).map(|i| self.vector(i))
    }

    pub fn output_vector(&self, index: usize) -> &[f64] {
        &self.output_vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.input_vectors.iter().chain(&self.output_vectors).all(|x| x.is_finite())
    }

    /// Writes `token,dim_0,..,dim_{D-1}` rows in vocabulary order.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["token".to_string()];
        header.extend((0..self.dim).map(|k| format!("dim_{k}")));
        w.write_record(&header)?;
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            let mut row = vec![tok.clone()];
            row.extend(self.vector(i).iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loss and gradients for one (center, context) pair with sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// `-log σ(u_ctx·v) - Σ_k log σ(-u_k·v)` and its exact gradients.
pub fn sg_pair_grad(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> Result<PairGradient, EmbeddingError> {
    let d = center.len();
    for v in std::iter::once(context).chain(negatives.iter().copied()) {
        if v.len() != d {
            return Err(EmbeddingError::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    let mut grad_center = vec![0.0; d];
    let pos = dot(context, center);
    // -log σ(x) = ln(1 + e^-x), computed stably.
    let mut loss = softplus(-pos);
    let g = sigmoid(pos) - 1.0;
    axpy(&mut grad_center, g, context);
    let grad_context = center.iter().map(|c| g * c).collect();
    let mut grad_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(neg, center);
        loss += softplus(s);
        let g = sigmoid(s);
        axpy(&mut grad_center, g, neg);
        grad_negs.push(center.iter().map(|c| g * c).collect());
    }
    Ok(PairGradient {
        loss,
        center: grad_center,
        context: grad_context,
        negatives: grad_negs,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Number of (center, context) pairs one epoch visits.
pub fn count_pairs(sentences: &[&[usize]], window: usize) -> u64 {
    sentences
        .iter()
        .map(|s| {
            let n = s.len();
            (0..n)
                .map(|i| (i.saturating_sub(window)..(i + window + 1).min(n)).count() as u64 - 1)
                .sum::<u64>()
        })
        .sum()
}

/// Trains input/output vectors with SGNS.
///
/// Single-threaded and fully determined by `seed`. The learning rate decays
/// linearly from `learning_rate` to a tenth of it across all updates.
/// Negatives that coincide with the context token are skipped.
pub fn train_skipgram(
    sentences: &[TokenSequence],
    config: &SkipGramConfig,
    seed: u64,
) -> Result<EmbeddingModel, EmbeddingError> {
    config.validate()?;
    let vocab = build_vocab(sentences, config.min_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = EmbeddingModel::initialize(vocab, config.dim, &mut rng);

    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|t| model.vocab.get(t)).collect())
        .collect();
    let slices: Vec<&[usize]> = encoded.iter().map(Vec::as_slice).collect();
    let total = count_pairs(&slices, config.window) * config.epochs as u64;
    if total == 0 {
        return Ok(model);
    }
    let sampler = WeightedIndex::new(model.vocab.unigram_weights()).expect("counts are positive");

    let d = config.dim;
    let lr0 = config.learning_rate;
    let mut update: u64 = 0;
    let mut grad_center = vec![0.0; d];
    let mut negs = Vec::with_capacity(config.negatives);
    for _ in 0..config.epochs {
        for sentence in &slices {
            let n = sentence.len();
            for i in 0..n {
                let center = sentence[i];
                for j in i.saturating_sub(config.window)..(i + config.window + 1).min(n) {
                    if j == i {
                        continue;
                    }
                    let lr = lr0 * (1.0 - 0.9 * update as f64 / total as f64);
                    let context = sentence[j];
                    negs.clear();
                    for _ in 0..config.negatives {
                        let k = sampler.sample(&mut rng);
                        if k != context {
                            negs.push(k);
                        }
                    }
                    sgns_step(&mut model, center, context, &negs, lr, &mut grad_center);
                    update += 1;
                    let touched = std::iter::once(context).chain(negs.iter().copied());
                    let finite = model.vector(center).iter().all(|x| x.is_finite())
                        && touched
                            .flat_map(|k| model.output_vector(k).iter())
                            .all(|x| x.is_finite());
                    if !finite {
                        return Err(EmbeddingError::NonFiniteUpdate { update });
                    }
                }
            }
        }
    }
    Ok(model)
}

/// In-place SGD step; matches the gradients of [`sg_pair_grad`].
fn sgns_step(
    model: &mut EmbeddingModel,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    grad_center: &mut [f64],
) {
    let d = model.dim;
    grad_center.iter_mut().for_each(|g| *g = 0.0);
    let v = &model.input_vectors[center * d..(center + 1) * d];
    let targets = std::iter::once((context, 1.0)).chain(negatives.iter().map(|&k| (k, 0.0)));
    for (k, label) in targets {
        let u = &mut model.output_vectors[k * d..(k + 1) * d];
        let g = sigmoid(dot(u, v)) - label;
        for t in 0..d {
            grad_center[t] += g * u[t];
            u[t] -= lr * g * v[t];
        }
    }
    let v = &mut model.input_vectors[center * d..(center + 1) * d];
    for t in 0..d {
        v[t] -= lr * grad_center[t];
    }
}

/// Sum of in-vocabulary token vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventVector {
    pub values: Vec<f64>,
    pub n_known: usize,
}

/// `E = Σ v(t_i)` over known tokens; unknown tokens are skipped.
pub fn embed_event(tokens: &TokenSequence, model: &EmbeddingModel) -> EventVector {
    let mut values = vec![0.0; model.dim];
    let mut n_known = 0;
    for v in tokens.iter().filter_map(|t| model.lookup(t)) {
        axpy(&mut values, 1.0, v);
        n_known += 1;
    }
    EventVector { values, n_known }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn seq(words: &[&str]) -> TokenSequence {
        TokenSequence::from_words(words.iter().copied())
    }

    #[test]
    fn vocab_first_appearance_and_threshold() {
        let corpus = [seq(&["A", "B"]), seq(&["A"])];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.get("A"), Some(0));
        assert_eq!(v.get("B"), Some(1));
        assert_eq!((v.count(0), v.count(1)), (2, 1));

        let v = build_vocab(&corpus, 2).unwrap();
        assert_eq!(v.tokens(), ["A"]);
        assert_eq!(build_vocab(&corpus, 3), Err(EmbeddingError::EmptyVocab));
    }

    #[test]
    fn vocab_matches_independent_counter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus: Vec<TokenSequence> = (0..1000)
            .map(|_| {
                let n = rng.gen_range(1..8);
                TokenSequence::from_words((0..n).map(|_| format!("t{}", rng.gen_range(0..60u32))))
            })
            .collect();
        let mut counter: std::collections::BTreeMap<String, u64> = Default::default();
        for s in &corpus {
            for t in s {
                *counter.entry(t.clone()).or_default() += 1;
            }
        }
        for min_count in [1, 60, 72] {
            let v = build_vocab(&corpus, min_count).unwrap();
            let mut got: Vec<&String> = v.tokens().iter().collect();
            got.sort();
            let want: Vec<&String> = counter.iter().filter(|(_, &c)| c >= min_count).map(|(t, _)| t).collect();
            assert_eq!(got, want);
            for (i, t) in v.tokens().iter().enumerate() {
                assert_eq!(v.count(i), counter[t]);
            }
        }
    }

    #[test]
    fn zero_vectors_give_two_log_two() {
        let z = [0.0; 4];
        let g = sg_pair_grad(&z, &z, &[&z]).unwrap();
        assert!((g.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_pair_without_negatives() {
        let g = sg_pair_grad(&[1.0, 0.0], &[0.0, 1.0], &[]).unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.negatives.is_empty());
    }

    #[test]
    fn dimension_mismatch() {
        let err = sg_pair_grad(&[0.0; 3], &[0.0; 3], &[&[0.0; 2]]).unwrap_err();
        assert_eq!(err, EmbeddingError::DimensionMismatch { expected: 3, got: 2 });
    }

    /// Central-difference oracle. Returns the worst norm-wise relative error
    /// over the center, context and negative gradient vectors.
    fn fd_check(center: &[f64], context: &[f64], negs: &[Vec<f64>]) -> f64 {
        // Flatten all participating vectors into one parameter list.
        let mut theta: Vec<Vec<f64>> = vec![center.to_vec(), context.to_vec()];
        theta.extend(negs.iter().cloned());
        let loss = |th: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = th[2..].iter().map(Vec::as_slice).collect();
            sg_pair_grad(&th[0], &th[1], &refs).unwrap().loss
        };
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let g = sg_pair_grad(center, context, &refs).unwrap();
        let mut analytic = vec![g.center, g.context];
        analytic.extend(g.negatives);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (v, grad) in analytic.iter().enumerate() {
            let numeric: Vec<f64> = (0..grad.len())
                .map(|k| {
                    let mut plus = theta.clone();
                    plus[v][k] += h;
                    let mut minus = theta.clone();
                    minus[v][k] -= h;
                    (loss(&plus) - loss(&minus)) / (2.0 * h)
                })
                .collect();
            let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = dot(grad, grad).sqrt().max(dot(&numeric, &numeric).sqrt()).max(1e-12);
            worst = worst.max(diff / scale);
        }
        worst
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vec = |d: usize| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let center = vec(6);
        let context = vec(6);
        let negs = vec![vec(6), vec(6)];
        assert!(fd_check(&center, &context, &negs) <= 1e-6);
    }

    #[test]
    fn sgd_step_follows_pair_gradient() {
        let vocab = build_vocab(&[seq(&["a", "b", "c"])], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = EmbeddingModel::initialize(vocab, 3, &mut rng);
        model.output_vectors.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let before = model.clone();
        let g = sg_pair_grad(before.vector(0), before.output_vector(1), &[before.output_vector(2)]).unwrap();
        let mut scratch = vec![0.0; 3];
        sgns_step(&mut model, 0, 1, &[2], 0.1, &mut scratch);
        for t in 0..3 {
            assert!((model.vector(0)[t] - (before.vector(0)[t] - 0.1 * g.center[t])).abs() < 1e-15);
            assert!((model.output_vector(1)[t] - (before.output_vector(1)[t] - 0.1 * g.context[t])).abs() < 1e-15);
            assert!((model.output_vector(2)[t] - (before.output_vector(2)[t] - 0.1 * g.negatives[0][t])).abs() < 1e-15);
        }
    }

    #[test]
    fn single_token_corpus_keeps_initialization() {
        let config = SkipGramConfig::default();
        let model = train_skipgram(&[seq(&["A"])], &config, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = EmbeddingModel::initialize(model.vocab.clone(), config.dim, &mut rng);
        assert_eq!(model, init);
        let bound = 0.5 / config.dim as f64;
        assert!(model.input_vectors.iter().all(|x| x.abs() <= bound));
        assert!(model.output_vectors.iter().all(|&x| x == 0.0));
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    #[test]
    fn two_dialects_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let groups = [["A", "B", "C"], ["X", "Y", "Z"]];
        let corpus: Vec<TokenSequence> = (0..400)
            .map(|i| {
                let g = &groups[i % 2];
                TokenSequence::from_words((0..4).map(|_| g[rng.gen_range(0..3)]))
            })
            .collect();
        let config = SkipGramConfig { dim: 8, epochs: 20, ..Default::default() };
        let model = train_skipgram(&corpus, &config, 42).unwrap();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        let all: Vec<&str> = groups.iter().flatten().copied().collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                let c = cosine(model.lookup(a).unwrap(), model.lookup(b).unwrap());
                if (i < 3) == groups[0].contains(b) {
                    intra.push(c);
                } else {
                    inter.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert_eq!(intra.len(), 6);
        assert_eq!(inter.len(), 9);
        assert!(mean(&intra) > mean(&inter), "intra {} inter {}", mean(&intra), mean(&inter));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = [seq(&["a", "b", "c"]), seq(&["b", "c", "d", "e"]), seq(&["a", "e"])];
        let config = SkipGramConfig { epochs: 3, ..Default::default() };
        let a = train_skipgram(&corpus, &config, 7).unwrap();
        let b = train_skipgram(&corpus, &config, 7).unwrap();
        assert_eq!(
            a.input_vectors.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.input_vectors.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a, b);
        assert_ne!(a, train_skipgram(&corpus, &config, 8).unwrap());
    }

    #[test]
    fn huge_learning_rate_reports_non_finite() {
        let corpus: Vec<TokenSequence> = (0..50).map(|_| seq(&["a", "b", "c", "d"])).collect();
        let config = SkipGramConfig { learning_rate: 1e300, ..Default::default() };
        assert!(matches!(
            train_skipgram(&corpus, &config, 1),
            Err(EmbeddingError::NonFiniteUpdate { .. })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let corpus = [seq(&["a"])];
        for config in [
            SkipGramConfig { dim: 1, ..Default::default() },
            SkipGramConfig { negatives: 0, ..Default::default() },
        ] {
            assert!(matches!(train_skipgram(&corpus, &config, 0), Err(EmbeddingError::InvalidConfig(_))));
        }
    }

    #[test]
    fn embedding_sums_known_tokens() {
        let vocab = build_vocab(&[seq(&["SR07U", "GDS1E", "BC02"])], 1).unwrap();
        let mut model = EmbeddingModel::initialize(vocab, 2, &mut ChaCha8Rng::seed_from_u64(0));
        model.input_vectors = vec![1.0, 0.0, 0.5, 2.0, -3.0, 0.25];
        let e = embed_event(&seq(&["SR07U", "GDS1E", "BC02"]), &model);
        assert_eq!(e.values, vec![1.0 + 0.5 - 3.0, 0.0 + 2.0 + 0.25]);
        assert_eq!(e.n_known, 3);

        let e = embed_event(&seq(&["SR07U"]), &model);
        assert_eq!(e.values, vec![1.0, 0.0]);

        let e = embed_event(&seq(&["SR07U", "unknown"]), &model);
        assert_eq!(e.values, vec![1.0, 0.0]);
        assert_eq!(e.n_known, 1);

        let e = embed_event(&TokenSequence::default(), &model);
        assert_eq!(e, EventVector { values: vec![0.0, 0.0], n_known: 0 });
    }

    #[test]
    fn csv_export_layout() {
        let vocab = build_vocab(&[seq(&["a", "b"])], 1).unwrap();
        let mut model = EmbeddingModel::initialize(vocab, 2, &mut ChaCha8Rng::seed_from_u64(0));
        model.input_vectors = vec![0.1, -2.0, 3.0, 0.0];
        let mut out = Vec::new();
        model.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "token,dim_0,dim_1\na,0.1,-2\nb,3,0\n");
    }

    proptest! {
        #[test]
        fn pair_gradient_random_instances(seed in any::<u64>(), n_neg in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vec = |d: usize| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect::<Vec<f64>>();
            let c = vec(5);
            let x = vec(5);
            let negs: Vec<Vec<f64>> = (0..n_neg).map(|_| vec(5)).collect();
            prop_assert!(fd_check(&c, &x, &negs) <= 1e-6);
        }

        #[test]
        fn composition_is_order_free_and_additive(
            a in proptest::collection::vec(0usize..6, 0..8),
            b in proptest::collection::vec(0usize..6, 0..8),
        ) {
            let names = ["p", "q", "r", "s", "t", "oov"];
            let vocab = build_vocab(&[seq(&names[..5])], 1).unwrap();
            let mut model = EmbeddingModel::initialize(vocab, 3, &mut ChaCha8Rng::seed_from_u64(1));
            // Dyadic values keep float addition exact in any order.
            model.input_vectors = (0..15).map(|i| (i as f64 - 7.0) * 0.125).collect();
            let s1 = seq(&a.iter().map(|&i| names[i]).collect::<Vec<_>>());
            let s2 = seq(&b.iter().map(|&i| names[i]).collect::<Vec<_>>());
            let mut joined: Vec<&str> = s1.iter().chain(s2.iter()).map(String::as_str).collect();
            let e = embed_event(&seq(&joined), &model);
            let (e1, e2) = (embed_event(&s1, &model), embed_event(&s2, &model));
            prop_assert_eq!(e.n_known, e1.n_known + e2.n_known);
            for k in 0..3 {
                prop_assert_eq!(e.values[k], e1.values[k] + e2.values[k]);
            }
            joined.reverse();
            prop_assert_eq!(embed_event(&seq(&joined), &model), e);
        }
    }
}
