use criterion::{black_box, criterion_group, criterion_main, Criterion};
use delexpara::embedder::EmbedToken;
use delexpara::embedder::EmbeddingVariant;
use delexpara::fst::Matcher;
use delexpara::metrics::{self, MetricsCorpus};
use delexpara::model::{output_distribution, ModelConfig, Seq2Seq, SourceInput};
use delexpara::tensor::{Graph, ParamStore, Tensor};
use delexpara_bench::{probe, rule_set};

fn matmul(c: &mut Criterion) {
    let a = Tensor::new(vec![64, 256], (0..64 * 256).map(|i| (i % 7) as f32 * 0.1).collect()).unwrap();
    let b = Tensor::new(vec![256, 256], (0..256 * 256).map(|i| (i % 5) as f32 * 0.1).collect()).unwrap();
    let store = ParamStore::<f32>::new();
    c.bench_function("matmul 64x256x256", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store);
            let x = g.constant(a.clone());
            let y = g.constant(b.clone());
            black_box(g.matmul(x, y).unwrap());
        })
    });
}

fn decode_step(c: &mut Criterion) {
    let cfg = ModelConfig::desk(EmbeddingVariant::AS);
    let (model, store) = Seq2Seq::new::<f32>(cfg, 500, 1).unwrap();
    let src = SourceInput {
        tokens: (0..12).map(|i| EmbedToken::Id(4 + i)).collect(),
        copy: true,
    };
    let memory = model.encode(&store, &src).unwrap();
    c.bench_function("decode step (desk, n=12, |V|=500)", |bench| {
        bench.iter(|| {
            let mut state = model.start();
            let logits = model.decode_step(&store, &memory, &mut state, 12 + 1).unwrap();
            black_box(output_distribution(&logits));
        })
    });
}

fn fst_match(c: &mut Criterion) {
    let matcher = Matcher::build(&rule_set(200)).unwrap();
    let words = probe(150);
    c.bench_function("fst match (200 rules)", |bench| bench.iter(|| black_box(matcher.find(&words))));
}

fn corpus_metrics(c: &mut Criterion) {
    let utt = |i: usize| -> Vec<String> { (0..8).map(|j| format!("w{}", (i * 7 + j * 3) % 40)).collect() };
    let corpus = MetricsCorpus::new((0..500).map(utt).collect::<Vec<_>>(), (250..1250).map(utt).collect::<Vec<_>>());
    c.bench_function("novelty + trigram metrics (500/1000)", |bench| {
        bench.iter(|| {
            black_box(metrics::novelty(&corpus));
            black_box(metrics::trigram_novelty(&corpus));
            black_box(metrics::trigram_diversity(&corpus));
        })
    });
}

criterion_group!(benches, matmul, decode_step, fst_match, corpus_metrics);
criterion_main!(benches);
