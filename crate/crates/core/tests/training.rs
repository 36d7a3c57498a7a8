mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::synth;
use tgnet::checkpoint::Checkpoint;
use tgnet::data::{make_batches, EncodedDocument};
use tgnet::model::{build_model, Ablation, Hyperparams, ModelParams};
use tgnet::tensor::Tensor;
use tgnet::train::{
    adam_step, batch_gradients, clip_gradients, corpus_nll, global_norm, train_loop, AdamConfig,
    LogRecord, OptimizerState, Plateau, PlateauEvent, TrainError, TrainSchedule,
};

fn scalar(x: f64) -> Tensor<f64> {
    Tensor::from_f64(&[1], &[x]).unwrap()
}

#[test]
fn zero_gradient_leaves_parameters_alone() {
    let mut p: Tensor<f64> = Tensor::from_f64(&[2, 2], &[0.5, -1.0, 2.0, 0.0]).unwrap();
    let before = p.clone();
    let mut opt = OptimizerState::new(&[&[2, 2]], 0.001);
    for _ in 0..3 {
        assert!(adam_step(
            &mut [&mut p],
            &[Tensor::zeros(&[2, 2])],
            &mut opt,
            &AdamConfig::default()
        )
        .unwrap());
    }
    assert_eq!(p, before);
    assert_eq!(opt.step, 3);
}

#[test]
fn first_step_moves_by_the_learning_rate() {
    let mut p = scalar(0.25);
    let mut opt = OptimizerState::new(&[&[1]], 0.001);
    adam_step(
        &mut [&mut p],
        &[scalar(1.0)],
        &mut opt,
        &AdamConfig::default(),
    )
    .unwrap();
    // m_hat = 1, v_hat = 1
    let want = 0.25 - 0.001 * 1.0 / (1.0 + 1e-8);
    assert!((p.item() - want).abs() < 1e-15);
    assert!((p.item() - 0.249).abs() < 1e-10);
}

#[test]
fn two_steps_match_hand_recursion() {
    let g = 0.5;
    let mut p = scalar(1.0);
    let mut opt = OptimizerState::new(&[&[1]], 0.01);
    for _ in 0..2 {
        adam_step(
            &mut [&mut p],
            &[scalar(g)],
            &mut opt,
            &AdamConfig::default(),
        )
        .unwrap();
    }
    // m1 = 0.05, v1 = 0.00025; m2 = 0.095, v2 = 0.00049975
    // m_hat2 = 0.095 / 0.19 = 0.5, v_hat2 = 0.00049975 / 0.001999 = 0.25
    let step1 = 0.01 * 0.5 / (0.25f64.sqrt() + 1e-8);
    let step2 = 0.01 * (0.095 / 0.19) / ((0.000_499_75 / 0.001_999f64).sqrt() + 1e-8);
    assert!((p.item() - (1.0 - step1 - step2)).abs() < 1e-14);
    assert!((opt.m[0].item() - 0.095).abs() < 1e-15);
    assert!((opt.v[0].item() - 0.000_499_75).abs() < 1e-15);
}

#[test]
fn non_finite_gradient_skips_the_update() {
    let mut p: Tensor<f64> = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
    let mut opt = OptimizerState::new(&[&[2]], 0.001);
    let g = Tensor::from_f64(&[2], &[0.1, f64::NAN]).unwrap();
    assert!(!adam_step(&mut [&mut p], &[g], &mut opt, &AdamConfig::default()).unwrap());
    assert_eq!(p.data(), &[1.0, 2.0]);
    assert_eq!(opt.step, 0);
    assert_eq!(opt.m[0].data(), &[0.0, 0.0]);
}

#[test]
fn mismatched_gradient_shape_is_an_error() {
    let mut p = scalar(1.0);
    let mut opt = OptimizerState::new(&[&[1]], 0.001);
    let g = Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap();
    assert!(matches!(
        adam_step(&mut [&mut p], &[g], &mut opt, &AdamConfig::default()),
        Err(TrainError::GradientShape { .. })
    ));
}

#[test]
fn clipping_examples() {
    let mut g: Vec<Tensor<f64>> = vec![Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap()];
    assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[0].data()[1] - 0.8).abs() < 1e-15);

    let mut g: Vec<Tensor<f64>> = vec![Tensor::from_f64(&[2], &[0.3, 0.4]).unwrap()];
    clip_gradients(&mut g, 1.0);
    assert_eq!(g[0].data(), &[0.3, 0.4]);
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_the_limit(
        parts in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..6), 1..5),
        max_norm in 0.01f64..10.0,
    ) {
        let mut g: Vec<Tensor<f32>> = parts.iter().map(|p| Tensor::from_f64(&[p.len()], p).unwrap()).collect();
        let before = global_norm(&g);
        clip_gradients(&mut g, max_norm);
        let after = global_norm(&g);
        prop_assert!(after <= max_norm + 1e-6);
        if before <= max_norm {
            prop_assert!((after - before).abs() < 1e-12);
        }
    }
}

#[test]
fn plateau_trace_stops_after_third_stale_evaluation() {
    let schedule = TrainSchedule::default();
    let mut plateau = Plateau::new(&schedule);
    let events: Vec<PlateauEvent> = [5.0, 6.0, 6.0, 6.0]
        .iter()
        .map(|&p| plateau.observe(p))
        .collect();
    use PlateauEvent::*;
    assert_eq!(events, [Improved, Decay, Decay, Stop]);
    assert_eq!(plateau.best, 5.0);
    assert_eq!(0.001 * schedule.decay, 0.0005);
}

#[test]
fn plateau_tolerance_is_absolute() {
    let mut plateau = Plateau::new(&TrainSchedule::default());
    assert_eq!(plateau.observe(5.0), PlateauEvent::Improved);
    assert_eq!(plateau.observe(5.0 - 5e-5), PlateauEvent::Decay);
    assert_eq!(plateau.observe(4.9), PlateauEvent::Improved);
    assert_eq!(plateau.stale, 0);
}

#[test]
fn schedule_validation() {
    let bad = [
        TrainSchedule {
            patience: 0,
            ..TrainSchedule::default()
        },
        TrainSchedule {
            decay: 1.0,
            ..TrainSchedule::default()
        },
        TrainSchedule {
            eval_every: Some(0),
            ..TrainSchedule::default()
        },
    ];
    for s in bad {
        assert!(s.validate().is_err());
    }
    assert!(TrainSchedule::default().validate().is_ok());
}

fn tiny_hp(vocab_size: usize) -> Hyperparams {
    Hyperparams {
        emb_dim: 8,
        hidden_dim: 8,
        vocab_size,
        batch_size: 8,
        dropout: 0.0,
        ..Hyperparams::default()
    }
}

fn tiny_corpus(seed: u64, n: usize) -> (tgnet::data::Vocabulary, Vec<EncodedDocument>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = synth::present_corpus(n, 60, 3, 1..=3, &mut rng);
    synth::vocab_and_encode(&docs, 40)
}

fn batch_loss(params: &ModelParams<f32>, docs: &[tgnet::data::BatchDoc]) -> f64 {
    batch_gradients(params, docs, 0.0, None).unwrap().loss
}

#[test]
fn frozen_batch_loss_decreases_for_ten_steps() {
    let mut holds = 0;
    for seed in 0..3 {
        let (vocab, docs) = tiny_corpus(100 + seed, 4);
        let hp = tiny_hp(vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: ModelParams<f32> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
        let batch = make_batches(&docs, 8, &mut rng).remove(0);
        let mut opt = OptimizerState::for_model(&params, 1e-3);
        let mut losses = vec![batch_loss(&params, &batch.docs)];
        for _ in 0..10 {
            let mut g = batch_gradients(&params, &batch.docs, 0.0, None)
                .unwrap()
                .grads;
            clip_gradients(&mut g, hp.clip_norm);
            adam_step(
                &mut params.tensors_mut(),
                &g,
                &mut opt,
                &AdamConfig::default(),
            )
            .unwrap();
            losses.push(batch_loss(&params, &batch.docs));
        }
        if losses.windows(2).all(|w| w[1] < w[0]) {
            holds += 1;
        }
    }
    assert!(holds >= 2, "strict decrease held for {holds} of 3 seeds");
}

#[test]
fn single_triplet_is_memorized() {
    let mut finals = Vec::new();
    for seed in 0..3 {
        let (vocab, mut docs) = tiny_corpus(200 + seed, 1);
        docs[0].targets.truncate(1);
        // 8x8 models stall on a plateau for most seeds.
        let hp = Hyperparams {
            emb_dim: 32,
            hidden_dim: 32,
            learning_rate: 0.005,
            ..tiny_hp(vocab.len())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: ModelParams<f32> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
        let batch = make_batches(&docs, 1, &mut rng).remove(0);
        assert_eq!(batch.triplet_count(), 1);
        let mut opt = OptimizerState::for_model(&params, hp.learning_rate);
        for _ in 0..200 {
            let mut g = batch_gradients(&params, &batch.docs, 0.0, None)
                .unwrap()
                .grads;
            clip_gradients(&mut g, hp.clip_norm);
            adam_step(
                &mut params.tensors_mut(),
                &g,
                &mut opt,
                &AdamConfig::default(),
            )
            .unwrap();
        }
        finals.push(batch_loss(&params, &batch.docs));
    }
    let mean = finals.iter().sum::<f64>() / 3.0;
    assert!(mean < 0.1, "final losses {finals:?}");
}

fn strip_time(log: &[LogRecord]) -> Vec<LogRecord> {
    log.iter()
        .cloned()
        .map(|r| LogRecord {
            wall_time: 0.0,
            ..r
        })
        .collect()
}

fn run(
    seed: u64,
    train: &[EncodedDocument],
    hp: &Hyperparams,
    sink: Option<&mut dyn std::io::Write>,
) -> tgnet::train::TrainOutcome<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: ModelParams<f32> = build_model(hp, Ablation::Full, &mut rng).unwrap();
    let schedule = TrainSchedule {
        max_epochs: 3,
        ..TrainSchedule::default()
    };
    train_loop(params, None, train, train, hp, &schedule, &mut rng, sink).unwrap()
}

#[test]
fn training_is_bitwise_reproducible() {
    let (vocab, docs) = tiny_corpus(7, 10);
    let hp = Hyperparams {
        dropout: 0.1,
        ..tiny_hp(vocab.len())
    };
    let mut sink = Vec::new();
    let a = run(11, &docs, &hp, Some(&mut sink));
    let b = run(11, &docs, &hp, None);
    assert_eq!(strip_time(&a.log), strip_time(&b.log));
    assert!(a.log.iter().any(|r| r.val_ppl.is_some()));

    let lines: Vec<LogRecord> = String::from_utf8(sink)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, a.log);

    let ckpt = |o: &tgnet::train::TrainOutcome<f32>| Checkpoint {
        hyperparams: hp.clone(),
        params: o.best.clone(),
        vocab: vocab.clone(),
        optimizer: Some(o.optimizer.clone()),
        best_perplexity: Some(o.best_perplexity),
    };
    assert_eq!(ckpt(&a).to_bytes().unwrap(), ckpt(&b).to_bytes().unwrap());

    let c = run(12, &docs, &hp, None);
    assert_ne!(strip_time(&a.log), strip_time(&c.log));
}

#[test]
fn loop_keeps_the_best_evaluation_and_decays_on_plateaus() {
    let (vocab, docs) = tiny_corpus(8, 6);
    let hp = Hyperparams {
        learning_rate: 0.05,
        ..tiny_hp(vocab.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params: ModelParams<f32> = build_model(&hp, Ablation::NoTitle, &mut rng).unwrap();
    let schedule = TrainSchedule {
        eval_every: Some(1),
        max_epochs: 40,
        ..TrainSchedule::default()
    };
    let out = train_loop(params, None, &docs, &docs, &hp, &schedule, &mut rng, None).unwrap();
    let evals: Vec<f64> = out.log.iter().filter_map(|r| r.val_ppl).collect();
    let min = evals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_perplexity, min);
    let (nll, tokens) = corpus_nll(&out.best, &docs).unwrap();
    assert!(((nll / tokens as f64).exp() - min).abs() < 1e-9);

    // Every stale evaluation halves the learning rate for the next batch.
    let mut plateau = Plateau::new(&schedule);
    let mut lr = hp.learning_rate;
    for r in &out.log {
        assert_eq!(r.lr, lr);
        if let Some(p) = r.val_ppl {
            if plateau.observe(p) == PlateauEvent::Decay {
                lr *= 0.5;
            }
        }
    }
    assert_eq!(out.stopped_early, plateau.stale >= schedule.patience);
    assert!(out.log.iter().all(|r| r.step >= 1));
}

#[test]
fn empty_validation_corpus_is_rejected() {
    let (vocab, docs) = tiny_corpus(9, 2);
    let hp = tiny_hp(vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params: ModelParams<f32> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
    let r = train_loop(
        params,
        None,
        &docs,
        &[],
        &hp,
        &TrainSchedule::default(),
        &mut rng,
        None,
    );
    assert!(matches!(r, Err(TrainError::EmptyCorpus("validation"))));
}

#[test]
fn non_finite_validation_perplexity_is_fatal() {
    let (vocab, docs) = tiny_corpus(10, 2);
    let hp = tiny_hp(vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params: ModelParams<f32> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
    params.output_bias.data_mut()[0] = f32::INFINITY;
    let schedule = TrainSchedule {
        max_epochs: 1,
        ..TrainSchedule::default()
    };
    let r = train_loop(params, None, &docs, &docs, &hp, &schedule, &mut rng, None);
    assert!(r.is_err(), "training on a broken model succeeded");
}
