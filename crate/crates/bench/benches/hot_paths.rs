use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use epics_anomaly::channel_grammar::{tokenize_event, tokenize_grammar, TokenSequence};
use epics_anomaly::event_log::parse_line;
use epics_anomaly::sequence_detector::{forward, init_params, DetectorDims};
use epics_anomaly::synth_oracle::{auroc, generate_corpus, CorpusSpec};
use epics_anomaly::token_embeddings::{train_skipgram, SkipGramConfig};

fn corpus(n: usize) -> Vec<String> {
    let spec = CorpusSpec { n_events: n, ..CorpusSpec::default() };
    generate_corpus(&spec).unwrap().lines
}

fn tokenizers(c: &mut Criterion) {
    let events: Vec<_> = corpus(2000).iter().map(|l| parse_line(l).unwrap()).collect();
    let mut g = c.benchmark_group("tokenize");
    g.bench_function("event", |b| {
        b.iter(|| {
            for e in &events {
                black_box(tokenize_event(&e.pv, &e.description).ok());
            }
        })
    });
    g.bench_function("grammar_strip_numbers", |b| {
        b.iter(|| {
            for e in &events {
                black_box(tokenize_grammar(&e.pv, true).ok());
            }
        })
    });
    g.finish();
}

fn skipgram(c: &mut Criterion) {
    let sentences: Vec<TokenSequence> = corpus(2000)
        .iter()
        .map(|l| {
            let e = parse_line(l).unwrap();
            tokenize_event(&e.pv, &e.description).unwrap()
        })
        .collect();
    let config = SkipGramConfig { epochs: 1, ..SkipGramConfig::default() };
    let mut g = c.benchmark_group("skipgram");
    g.sample_size(10);
    g.bench_function("2000_events_1_epoch", |b| {
        b.iter(|| train_skipgram(black_box(&sentences), &config, 1).unwrap())
    });
    g.finish();
}

fn gru_forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("gru_forward");
    for (input, hidden, latent) in [(32, 64, 16), (64, 128, 32)] {
        let params = init_params(DetectorDims { input, hidden, latent }, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..256)
            .map(|t| (0..input).map(|i| ((t * 31 + i * 7) % 17) as f64 / 17.0 - 0.5).collect())
            .collect();
        let h0 = vec![0.0; hidden];
        g.bench_with_input(BenchmarkId::new("256_steps", format!("{input}x{hidden}x{latent}")), &xs, |b, xs| {
            b.iter(|| forward(&params, black_box(xs), &h0))
        });
    }
    g.finish();
}

fn auroc_bench(c: &mut Criterion) {
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64).collect();
    let labels: Vec<bool> = (0..n).map(|i| i % 97 == 0).collect();
    c.bench_function("auroc_100k_with_ties", |b| b.iter(|| auroc(black_box(&scores), &labels).unwrap()));
}

criterion_group!(benches, tokenizers, skipgram, gru_forward, auroc_bench);
criterion_main!(benches);
