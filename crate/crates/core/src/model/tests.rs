use super::*;
use crate::corpus::{DataFormat, FormattedPair, Vocab};
use crate::embedder::EmbeddingVariant;

fn tiny(variant: EmbeddingVariant) -> ModelConfig {
    let mut c = ModelConfig::desk(variant);
    c.heads = 2;
    c.layers = 1;
    c.hidden = 8;
    c.ffn_dim = 16;
    c.dropout = 0.0;
    c.embedding = EmbeddingConfig::new(variant, 8);
    c.max_len = 12;
    c
}

fn table2_asp() -> FormattedPair {
    let s: Vec<String> = "play SLOT1 by SLOT2 please".split(' ').map(String::from).collect();
    let t: Vec<String> = "i want to listen to @ptr3 's @ptr1".split(' ').map(String::from).collect();
    FormattedPair::from_text_tokens("t2".into(), DataFormat::ASP, &s, &t, Vec::new()).unwrap()
}

fn vocab() -> Vocab {
    Vocab::from_words(
        "play SLOT1 by SLOT2 please i want to listen 's".split(' '),
        1,
    )
}

fn source(ids: &[usize], copy: bool) -> SourceInput {
    SourceInput {
        tokens: ids.iter().map(|&i| EmbedToken::Id(i)).collect(),
        copy,
    }
}

#[test]
fn rejects_heads_not_dividing_hidden() {
    let mut c = tiny(EmbeddingVariant::AS);
    c.heads = 3;
    assert!(matches!(Seq2Seq::new::<f64>(c, 20, 0), Err(Error::Config(_))));
}

#[test]
fn table2_targets_map_pointers_to_positions() {
    let v = vocab();
    let pair = table2_asp();
    let classes = target_classes(&pair, &v).unwrap();
    let n = 5;
    let w = |t: &str| n + v.id(t);
    assert_eq!(
        classes,
        vec![w("i"), w("want"), w("to"), w("listen"), w("to"), 3, w("'s"), 1, n + EOS]
    );
}

#[test]
fn pointer_outside_source_names_pair() {
    let mut pair = table2_asp();
    pair.target.push(TargetToken::Pointer(9));
    match target_classes(&pair, &vocab()) {
        Err(Error::Data { pair, .. }) => assert_eq!(pair, "t2"),
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn combined_scores_have_n_plus_v_entries() {
    let (m, store) = Seq2Seq::new::<f64>(tiny(EmbeddingVariant::AS), 15, 3).unwrap();
    for (n, copy) in [(1usize, true), (4, true), (3, false)] {
        let src = source(&(4..4 + n).collect::<Vec<_>>(), copy);
        let mem = m.encode(&store, &src).unwrap();
        let nc = if copy { n } else { 0 };
        let logits = m.decode_prefix(&store, &mem, &[nc + BOS]).unwrap();
        assert_eq!(logits.combined.len(), nc + 15);
        assert_eq!(&logits.combined[..nc], logits.copy_scores.as_slice());
        let p = output_distribution(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn distribution_is_shift_invariant_and_uniform_on_ties() {
    let l = PointerLogits::<f64>::new(vec![0.3, -1.0], vec![2.0, 0.5, 0.1]);
    let shifted = PointerLogits::<f64>::new(vec![10.3, 9.0], vec![12.0, 10.5, 10.1]);
    for (a, b) in output_distribution(&l).iter().zip(output_distribution(&shifted)) {
        assert!((a - b).abs() < 1e-12);
    }
    let flat = PointerLogits::<f64>::new(vec![1.0; 3], vec![1.0; 5]);
    assert!(output_distribution(&flat).iter().all(|p| (p - 0.125).abs() < 1e-12));
    let masked = PointerLogits::new(vec![f64::NEG_INFINITY, 0.0], vec![0.0]);
    assert_eq!(output_distribution(&masked)[0], 0.0);
}

#[test]
fn incremental_decoding_matches_teacher_forcing() {
    let (m, store) = Seq2Seq::new::<f64>(tiny(EmbeddingVariant::AS), 15, 5).unwrap();
    let src = source(&[4, 9, 6], true);
    let inputs = [3 + BOS, 3 + 7, 1, 3 + 11, 0];
    let full = m.teacher_forced_logits(&store, &src, &inputs).unwrap();
    let mem = m.encode(&store, &src).unwrap();
    let mut state = m.start();
    for (t, &c) in inputs.iter().enumerate() {
        let step = m.decode_step(&store, &mem, &mut state, c).unwrap();
        assert_eq!(state.len(), t + 1);
        assert_eq!(state.cache_len(0), t + 1);
        for (a, b) in step.combined.iter().zip(full.row(t)) {
            assert!((a - b).abs() < 1e-9, "step {t}: {a} vs {b}");
        }
    }
}

#[test]
fn later_inputs_never_change_earlier_logits() {
    let (m, store) = Seq2Seq::new::<f64>(tiny(EmbeddingVariant::AS), 15, 6).unwrap();
    let src = source(&[5, 6], true);
    let a = m.teacher_forced_logits(&store, &src, &[2 + BOS, 2 + 8, 2 + 9, 0]).unwrap();
    let b = m.teacher_forced_logits(&store, &src, &[2 + BOS, 2 + 8, 1, 2 + 12]).unwrap();
    assert_eq!(a.row(0), b.row(0));
    assert_eq!(a.row(1), b.row(1));
    assert_ne!(a.row(2), b.row(2));
}

#[test]
fn encoder_shapes_length_limit_and_position_sensitivity() {
    let (m, store) = Seq2Seq::new::<f64>(tiny(EmbeddingVariant::AS), 15, 7).unwrap();
    let one = m.encode(&store, &source(&[4], true)).unwrap();
    assert_eq!(one.states.shape(), &[1, 8]);
    assert_eq!(one.n, 1);
    let too_long = source(&[4; 13], true);
    assert!(matches!(m.encode(&store, &too_long), Err(Error::Length { .. })));
    let ab = m.encode(&store, &source(&[4, 5], true)).unwrap();
    let ba = m.encode(&store, &source(&[5, 4], true)).unwrap();
    assert_ne!(ab.states.row(0), ba.states.row(1));
    let again = m.encode(&store, &source(&[4, 5], true)).unwrap();
    assert_eq!(ab.states, again.states);
}

#[test]
fn uniform_scores_give_log_class_count_loss() {
    let (m, mut store) = Seq2Seq::new::<f64>(tiny(EmbeddingVariant::AS), 15, 8).unwrap();
    for name in ["dec.0.cross.q.w", "dec.0.cross.q.b", "output.table"] {
        let id = store.id(name).unwrap();
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let src = source(&[4, 5, 6, 7, 8], true);
    let mut g = Graph::new(&store);
    let loss = m.pair_loss(&mut g, &src, &[3, 5 + 9, 1, 5 + EOS]).unwrap();
    assert!((g.scalar(loss) - ((5 + 15) as f64).ln()).abs() < 1e-9);
}

#[test]
fn pointer_targets_send_gradient_into_encoder() {
    let (m, store) = Seq2Seq::new::<f64>(tiny(EmbeddingVariant::AS), 15, 9).unwrap();
    let src = source(&[4, 5, 6], true);
    let mut g = Graph::new(&store);
    let loss = m.pair_loss(&mut g, &src, &[2, 0, 1]).unwrap();
    let grads = g.backward(loss).unwrap();
    let id = store.id("enc.0.attn.v.w").unwrap();
    assert!(grads.param(id).unwrap().iter().any(|&x| x != 0.0));
}

#[test]
fn s3_model_runs_on_bundles() {
    let (m, store) = Seq2Seq::new::<f64>(tiny(EmbeddingVariant::S3), 15, 10).unwrap();
    let src = SourceInput {
        tokens: vec![
            EmbedToken::Id(4),
            EmbedToken::Bundle(vec![vec![5, 6], vec![7]]),
            EmbedToken::Id(8),
        ],
        copy: true,
    };
    let mut g = Graph::new(&store);
    let loss = m.pair_loss(&mut g, &src, &[1, 3 + 9, 3 + EOS]).unwrap();
    assert!(g.scalar(loss).is_finite());
}

fn toy_examples(v: &Vocab) -> Vec<TrainExample> {
    let texts = [
        ("play SLOT1 please", "i want to listen to @ptr1"),
        ("play SLOT1 by SLOT2", "i want to listen to @ptr3 's @ptr1"),
        ("play SLOT1", "listen to @ptr1 please"),
    ];
    let pairs: Vec<FormattedPair> = texts
        .iter()
        .enumerate()
        .map(|(i, (s, t))| {
            let s: Vec<String> = s.split(' ').map(String::from).collect();
            let t: Vec<String> = t.split(' ').map(String::from).collect();
            FormattedPair::from_text_tokens(format!("p{i}"), DataFormat::ASP, &s, &t, Vec::new()).unwrap()
        })
        .collect();
    prepare_examples(&pairs, v, 12).unwrap()
}

#[test]
fn training_lowers_loss_and_is_deterministic() {
    let v = vocab();
    let ex = toy_examples(&v);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 2,
        warmup: 4,
        lr_base: 1.0,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let mut c = tiny(EmbeddingVariant::AS);
        c.dropout = 0.1;
        let (m, mut store) = Seq2Seq::new::<f32>(c, v.len(), 1).unwrap();
        let report = train(&m, &mut store, &ex, &cfg, |_, _| {}).unwrap();
        let after = eval_loss(&m, &store, &ex).unwrap();
        (report, after, store)
    };
    let (r1, after, s1) = run();
    assert!(after < r1.initial_loss, "{after} >= {}", r1.initial_loss);
    assert_eq!(r1.updates, 10);
    let (r2, _, s2) = run();
    assert_eq!(r1, r2);
    for ((_, _, a), (_, _, b)) in s1.iter().zip(s2.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn empty_training_set_is_a_usage_error() {
    let (m, mut store) = Seq2Seq::new::<f32>(tiny(EmbeddingVariant::AS), 15, 1).unwrap();
    let r = train(&m, &mut store, &[], &TrainConfig::default(), |_, _| {});
    assert!(matches!(r, Err(Error::Usage(_))));
}

#[test]
fn checkpoint_round_trip_and_vocab_check() {
    let v = vocab();
    let (m, store) = Seq2Seq::new::<f32>(tiny(EmbeddingVariant::S2), v.len(), 2).unwrap();
    let meta = ModelMetadata {
        model: m.config,
        format: DataFormat::S2P,
        vocab_size: v.len(),
        vocab_hash: v.hash(),
        seed: 2,
        epochs: 0,
        epoch_losses: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    save_model(dir.path(), &store, &meta).unwrap();
    let (m2, s2, meta2) = load_model(dir.path()).unwrap();
    assert_eq!(meta, meta2);
    assert_eq!(m2.config, m.config);
    for ((_, n1, a), (_, n2, b)) in store.iter().zip(s2.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a, b);
    }
    meta2.check_vocab(&v).unwrap();
    let other = Vocab::from_words(["x"], 1);
    assert!(matches!(meta2.check_vocab(&other), Err(Error::VocabMismatch { .. })));
}
