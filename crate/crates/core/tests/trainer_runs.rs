use longembed::data::{pack_documents, Tokenizer};
use longembed::synthetic::{SyntheticConfig, SyntheticCorpus, SyntheticWorld};
use longembed::trainer::{run_stage, Stage, StageData, TrainPlan};
use longembed::{Encoder, EncoderConfig, Error};

fn small_world() -> (Tokenizer, SyntheticCorpus) {
    let cfg = SyntheticConfig {
        families: 6,
        concepts_per_family: 4,
        fillers: 60,
        train_pairs: 256,
        eval_queries: 24,
        ..Default::default()
    };
    let world = SyntheticWorld::new(cfg, 4).unwrap();
    let vocab = world.vocabulary();
    let tokenizer = Tokenizer::build(vocab.iter().map(String::as_str), 4000, 1).unwrap();
    (tokenizer, world.corpus(9))
}

fn tiny_encoder(tokenizer: &Tokenizer) -> Encoder {
    let config = EncoderConfig {
        num_layers: 1,
        hidden_dim: 16,
        num_heads: 2,
        ffn_dim: 32,
        trained_context: 64,
        ..EncoderConfig::desk(tokenizer.raw_vocab_size())
    };
    Encoder::new(config, 1).unwrap()
}

fn contrastive_plan(stage: Stage, steps: usize) -> TrainPlan {
    TrainPlan {
        batch_size: 16,
        max_seq: 64,
        steps: Some(steps),
        gradcache_chunk: None,
        ..TrainPlan::desk(stage)
    }
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let (tok, corpus) = small_world();
    let mut enc = tiny_encoder(&tok);
    let before = enc.weights.clone();
    let plan = TrainPlan {
        lr: 0.0,
        gradcache_chunk: None,
        ..contrastive_plan(Stage::Pretrain, 3)
    };
    let report = run_stage(
        &plan,
        &mut enc,
        &tok,
        StageData::Pairs(&corpus.train),
        5,
        |_| {},
    )
    .unwrap();
    assert_eq!(report.records.len(), 3);
    assert_eq!(enc.weights, before);
}

#[test]
fn mlm_loss_falls() {
    let (tok, corpus) = small_world();
    let docs: Vec<Vec<u32>> = corpus.documents.iter().map(|d| tok.encode(d)).collect();
    let chunks = pack_documents(&docs, 32).unwrap();
    let mut enc = tiny_encoder(&tok);
    let plan = TrainPlan {
        batch_size: 8,
        max_seq: 32,
        steps: Some(150),
        ..TrainPlan::desk(Stage::Mlm)
    };
    let report = run_stage(&plan, &mut enc, &tok, StageData::Chunks(&chunks), 2, |_| {}).unwrap();
    let mean = |r: &[longembed::trainer::StepRecord]| {
        r.iter().map(|s| s.loss).sum::<f64>() / r.len() as f64
    };
    let head = mean(&report.records[..20]);
    let tail = mean(&report.records[130..]);
    assert!(tail < head - 0.5, "mlm loss {head} -> {tail}");
}

#[test]
fn gradcache_matches_the_monolithic_step() {
    let (tok, corpus) = small_world();
    let run = |chunk: Option<usize>| {
        let mut enc = tiny_encoder(&tok);
        let plan = TrainPlan {
            gradcache_chunk: chunk,
            ..contrastive_plan(Stage::Pretrain, 2)
        };
        let report = run_stage(
            &plan,
            &mut enc,
            &tok,
            StageData::Pairs(&corpus.train),
            7,
            |_| {},
        )
        .unwrap();
        (enc, report)
    };
    let (plain, plain_report) = run(None);
    for chunk in [4, 8] {
        let (cached, report) = run(Some(chunk));
        assert!(
            plain.weights.max_rel_diff(&cached.weights) < 1e-8,
            "chunk {chunk}"
        );
        for (a, b) in plain_report.records.iter().zip(&report.records) {
            assert!((a.loss - b.loss).abs() < 1e-10);
        }
    }
}

#[test]
fn same_seed_same_weights() {
    let (tok, corpus) = small_world();
    let run = |seed| {
        let mut enc = tiny_encoder(&tok);
        run_stage(
            &contrastive_plan(Stage::Pretrain, 2),
            &mut enc,
            &tok,
            StageData::Pairs(&corpus.train),
            seed,
            |_| {},
        )
        .unwrap();
        enc.weights
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn finetune_needs_enough_mined_negatives() {
    let (tok, corpus) = small_world();
    let mut enc = tiny_encoder(&tok);
    let mut pairs = corpus.train.clone();
    for (i, p) in pairs.iter_mut().enumerate() {
        let n = if i == 5 { 2 } else { 8 };
        let others = corpus.documents.iter().filter(|d| **d != p.document);
        p.hard_negatives = Some(others.take(n).cloned().collect());
    }
    let before = enc.weights.clone();
    let plan = contrastive_plan(Stage::Finetune, 1);
    let err = run_stage(&plan, &mut enc, &tok, StageData::Pairs(&pairs), 1, |_| {}).unwrap_err();
    assert!(
        matches!(
            err,
            Error::NotEnoughNegatives {
                pair: 5,
                available: 2,
                required: 7
            }
        ),
        "{err:?}"
    );
    assert_eq!(enc.weights, before);

    let others = corpus.documents.iter().filter(|d| **d != pairs[5].document);
    pairs[5].hard_negatives = Some(others.take(8).cloned().collect());
    let report = run_stage(&plan, &mut enc, &tok, StageData::Pairs(&pairs), 1, |_| {}).unwrap();
    assert!(report.last_loss().unwrap().is_finite());
}

#[test]
fn stage_and_data_must_agree() {
    let (tok, corpus) = small_world();
    let mut enc = tiny_encoder(&tok);
    let err = run_stage(
        &contrastive_plan(Stage::Mlm, 1),
        &mut enc,
        &tok,
        StageData::Pairs(&corpus.train),
        1,
        |_| {},
    )
    .unwrap_err();
    assert_eq!(err.kind(), "stage_data_mismatch");
}
