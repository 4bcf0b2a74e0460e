use bugforge_core::tokenizer::{EOS_ID, MergeRule};
use bugforge_core::{SubwordVocabulary, SyntaxClass};
use bugforge_model::decode::Candidate;
use bugforge_model::{Checkpoint, Example, Model, ModelConfig, ModelError, TrainingBatch};

fn tiny(v: usize) -> Model<f32> {
    Model::new(ModelConfig::tiny(v), 11).unwrap()
}

fn classes(n: usize, c: SyntaxClass) -> Vec<SyntaxClass> {
    vec![c; n]
}

#[test]
fn embedding_sums_token_position_and_class() {
    let cfg = ModelConfig {
        model_dim: 2,
        num_heads: 1,
        ffn_dim: 4,
        num_layers: 1,
        vocab_size: 8,
        max_positions: 4,
        ..ModelConfig::default()
    };
    let mut m = Model::<f64>::new(cfg, 0).unwrap();
    m.tensor_mut("tok_emb").unwrap()[6..8].copy_from_slice(&[1.0, 0.0]);
    m.tensor_mut("pos_emb").unwrap()[0..2].copy_from_slice(&[0.0, 1.0]);
    let t = SyntaxClass::Type.index();
    m.tensor_mut("syn_emb").unwrap()[2 * t..2 * t + 2].copy_from_slice(&[1.0, 1.0]);
    assert_eq!(m.embed(&[3], &[0], Some(&[SyntaxClass::Type])).unwrap(), vec![2.0, 2.0]);
    assert_eq!(m.embed(&[3], &[0], None).unwrap(), vec![1.0, 1.0]);
    assert!(matches!(m.embed(&[3], &[4], None), Err(ModelError::PositionOverflow { .. })));
    assert!(matches!(m.embed(&[8], &[0], None), Err(ModelError::TokenOutOfRange { .. })));
}

#[test]
fn logits_have_target_by_vocab_shape() {
    let cfg = ModelConfig {
        model_dim: 32,
        ffn_dim: 64,
        ..ModelConfig::tiny(100)
    };
    let m = Model::<f32>::new(cfg, 3).unwrap();
    // Four target tokens plus EOS.
    let b = TrainingBatch::new(&[Example::unclassified(vec![5, 6, 7, 8, 9, 10, 11], vec![8, 9, 10, 11])]);
    let out = m.forward(&b).unwrap();
    assert_eq!(out[0].len, 5);
    assert_eq!(out[0].logits.len(), 5 * 100);
    assert_eq!(out[0].aux_logits.as_ref().unwrap().len(), 5 * SyntaxClass::COUNT);
}

#[test]
fn decoder_is_causal() {
    let m = tiny(30);
    let a = m.forward(&TrainingBatch::new(&[Example::unclassified(vec![5, 6], vec![7, 8, 9])])).unwrap();
    let b = m.forward(&TrainingBatch::new(&[Example::unclassified(vec![5, 6], vec![7, 8, 20])])).unwrap();
    let v = 30;
    assert_eq!(a[0].logits[..3 * v], b[0].logits[..3 * v]);
    assert_ne!(a[0].logits[3 * v..], b[0].logits[3 * v..]);
}

#[test]
fn padding_does_not_change_outputs() {
    let m = tiny(30);
    let short = Example::unclassified(vec![5, 6], vec![7]);
    let long = Example::unclassified(vec![9, 10, 11, 12, 13], vec![14, 15, 16, 17]);
    let alone = m.forward(&TrainingBatch::new(&[short.clone()])).unwrap();
    let batch = TrainingBatch::new(&[long, short]);
    assert_eq!(batch.src[1].len(), 5);
    let together = m.forward(&batch).unwrap();
    assert_eq!(alone[0].logits, together[1].logits);
    let l1 = m.batch_loss(&TrainingBatch::new(&[Example::unclassified(vec![5, 6], vec![7])])).unwrap();
    assert_eq!(l1.tokens, 2);
}

#[test]
fn syntax_embeddings_only_matter_when_enabled() {
    let ex = |c| Example {
        src: vec![5, 6, 7],
        src_classes: classes(3, c),
        tgt: vec![8],
        tgt_classes: classes(1, SyntaxClass::Other),
    };
    let on = tiny(30);
    let off = Model::<f32>::new(
        ModelConfig {
            use_syntax_embeddings: false,
            ..ModelConfig::tiny(30)
        },
        11,
    )
    .unwrap();
    for (m, differs) in [(&on, true), (&off, false)] {
        let a = m.forward(&TrainingBatch::new(&[ex(SyntaxClass::Type)])).unwrap();
        let b = m.forward(&TrainingBatch::new(&[ex(SyntaxClass::Method)])).unwrap();
        assert_eq!(a[0].logits != b[0].logits, differs);
    }
    let mut zeroed = on.clone();
    zeroed.tensor_mut("syn_emb").unwrap().fill(0.0);
    let a = zeroed.forward(&TrainingBatch::new(&[ex(SyntaxClass::Type)])).unwrap();
    let b = zeroed.forward(&TrainingBatch::new(&[ex(SyntaxClass::Method)])).unwrap();
    assert_eq!(a[0].logits, b[0].logits);
}

#[test]
fn loss_is_nll_plus_weighted_aux() {
    let ex = Example {
        src: vec![5, 6, 7],
        src_classes: classes(3, SyntaxClass::Variable),
        tgt: vec![8, 9],
        tgt_classes: vec![SyntaxClass::Type, SyntaxClass::Method],
    };
    let b = TrainingBatch::new(&[ex]);
    for lambda in [0.0, 0.25, 1.0] {
        let m = Model::<f64>::new(
            ModelConfig {
                aux_loss_weight: lambda,
                ..ModelConfig::tiny(30)
            },
            4,
        )
        .unwrap();
        let p = m.batch_loss(&b).unwrap();
        assert!((p.loss - (p.nll + lambda * p.aux_ce)).abs() < 1e-12);
        assert_eq!(p.aux_ce > 0.0, lambda > 0.0);
        let (g, _) = m.loss_and_grads(&b, None).unwrap();
        assert!((g.loss - p.loss).abs() < 1e-10);
    }
}

#[test]
fn gradients_reach_zeroed_embeddings() {
    let mut m = tiny(30);
    m.tensor_mut("tok_emb").unwrap().fill(0.0);
    let b = TrainingBatch::new(&[Example::unclassified(vec![5, 6], vec![7, 8])]);
    let (_, g) = m.loss_and_grads(&b, None).unwrap();
    let spec = m.layout.spec("tok_emb").unwrap();
    let d = m.config.model_dim;
    let row = |id: usize| &g[spec.offset + id * d..spec.offset + (id + 1) * d];
    for id in [5, 6, 7, 8] {
        assert!(row(id).iter().any(|&x| x != 0.0), "row {id}");
    }
    assert!(row(20).iter().all(|&x| x == 0.0));
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let m = tiny(40);
    let src = [5, 6, 7, 8];
    let cls = classes(4, SyntaxClass::Variable);
    let tgt = vec![9, 10, 11];
    let full = m
        .forward(&TrainingBatch::new(&[Example {
            src: src.to_vec(),
            src_classes: cls.clone(),
            tgt: tgt.clone(),
            tgt_classes: classes(3, SyntaxClass::Other),
        }]))
        .unwrap();
    let enc = m.encode_source(&src, &cls).unwrap();
    let mut state = m.start_state();
    let mut fed = vec![bugforge_core::tokenizer::BOS_ID];
    fed.extend(&tgt);
    for (i, &tok) in fed.iter().enumerate() {
        let step = m.decode_step(&enc, &mut state, tok).unwrap();
        for (a, b) in step.iter().zip(&full[0].logits[i * 40..(i + 1) * 40]) {
            assert!((a - b).abs() < 1e-4, "position {i}: {a} vs {b}");
        }
    }
}

#[test]
fn beam_of_one_is_greedy_and_candidates_are_ranked() {
    for seed in 0..4 {
        let m = Model::<f32>::new(ModelConfig::tiny(24), seed).unwrap();
        let src = [5, 9, 12, 7];
        let cls = classes(4, SyntaxClass::Other);
        let greedy = m.greedy_decode(&src, &cls, 12).unwrap();
        let beam = m.beam_decode(&src, &cls, 1, 12, 1.0).unwrap();
        assert_eq!(beam.len(), 1);
        assert_eq!(beam[0].tokens, greedy.tokens);
        assert_eq!(beam[0].finished, greedy.finished);
        let five: Vec<Candidate> = m.beam_decode(&src, &cls, 5, 12, 1.0).unwrap();
        assert!(!five.is_empty() && five.len() <= 5);
        assert!(five.windows(2).all(|w| w[0].score >= w[1].score));
        for c in &five {
            assert!(c.tokens.len() <= 12 && !c.tokens.contains(&EOS_ID));
            assert!(c.finished || c.tokens.len() == 12);
        }
        assert_eq!(five, m.beam_decode(&src, &cls, 5, 12, 1.0).unwrap());
    }
}

#[test]
fn unfinished_candidates_are_flagged() {
    let mut m = tiny(24);
    // Forbid EOS outright.
    let b = m.layout.spec("out.b").unwrap().offset;
    m.params[b + EOS_ID as usize] = -1e4;
    let c = m.beam_decode(&[5, 6], &classes(2, SyntaxClass::Other), 3, 4, 1.0).unwrap();
    assert!(c.iter().all(|c| !c.finished && c.tokens.len() == 4));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let v = SubwordVocabulary::bytes_only();
    let m = Model::<f32>::new(ModelConfig::tiny(v.len()), 2).unwrap();
    let c = Checkpoint::from_model(&m, &v.fingerprint(), "stageA");
    let path = dir.path().join("model.ckpt");
    c.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.model().unwrap().params, m.params);
    loaded.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn warm_start_extends_vocabulary_and_keeps_old_rows() {
    let base = SubwordVocabulary::bytes_only();
    let m = Model::<f32>::new(ModelConfig::tiny(base.len()), 2).unwrap();
    let ck = Checkpoint::from_model(&m, &base.fingerprint(), "stageA");
    let extended = SubwordVocabulary::from_merges(vec![MergeRule::new(b" ", b" ", 0), MergeRule::new(b"i", b"f", 1)]).unwrap();
    let w = ck.warm_start(&extended, 5).unwrap();
    let (old_v, new_v, d) = (base.len(), extended.len(), m.config.model_dim);
    assert_eq!(w.config.vocab_size, new_v);
    assert_eq!(&w.tensor("tok_emb").unwrap()[..old_v * d], m.tensor("tok_emb").unwrap());
    let (ow, nw) = (m.tensor("out.w").unwrap(), w.tensor("out.w").unwrap());
    for r in 0..d {
        assert_eq!(&nw[r * new_v..r * new_v + old_v], &ow[r * old_v..(r + 1) * old_v]);
    }
    assert_eq!(w.tensor("enc.0.attn.q.w"), m.tensor("enc.0.attn.q.w"));
    assert!(w.tensor("tok_emb").unwrap()[old_v * d..].iter().any(|&x| x != 0.0));

    let other = SubwordVocabulary::from_merges(vec![MergeRule::new(b"a", b"b", 0)]).unwrap();
    let mismatched = Checkpoint::from_model(&w, &extended.fingerprint(), "stageA");
    assert!(matches!(mismatched.warm_start(&other, 5), Err(ModelError::VocabMismatch(_))));
}
