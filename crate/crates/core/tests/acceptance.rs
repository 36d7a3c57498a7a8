//! Acceptance suite. Runs every primary criterion, prints one PASS/FAIL line
//! for each, and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::synth;
use tgnet::checkpoint::Checkpoint;
use tgnet::data::{
    build_vocab, tokenize_and_normalize, Document, EncodedDocument, Vocabulary, EOS,
};
use tgnet::eval::{
    bucket_by_title_ratio, compute_metrics, default_stopwords, evaluate, porter_stem,
    title_related_stats, EvalInput,
};
use tgnet::layers::{bigru_encode, DropoutCtx};
use tgnet::model::{
    build_model, decode_step, encode_context, encode_memory_bank, final_distribution,
    sequence_loss, Ablation, DecoderStep, Hyperparams, ModelParams, SourceView,
};
use tgnet::search::{beam_search, predict_documents, BeamConfig, PostMode};
use tgnet::tensor::{finite_difference_check, Tape, Tensor};
use tgnet::train::{corpus_nll, train_loop, TrainSchedule};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn p(s: &str) -> Vec<String> {
    tokenize_and_normalize(s)
}

fn ps(items: &[&str]) -> Vec<Vec<String>> {
    items.iter().map(|s| p(s)).collect()
}

fn randomize(params: &mut ModelParams<f64>, range: f64, rng: &mut ChaCha8Rng) {
    for t in params.tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-range..range));
    }
}

fn gradient_oracle() -> Check {
    let start = Instant::now();
    let hp = Hyperparams {
        emb_dim: 4,
        hidden_dim: 8,
        vocab_size: 12,
        init_range: 0.5,
        ..Hyperparams::default()
    };
    // L_x = 6, L_t = 2, one OOV word at extended id 12.
    let context = [5, 7, 1, 9, 5, 1];
    let ext = [5, 7, 12, 9, 5, 12];
    let targets: [&[usize]; 2] = [&[7, 12, EOS], &[9, EOS]];
    let mask = [true; 6];
    let view = SourceView {
        context_ids: &context,
        context_ext_ids: &ext,
        mask: &mask,
        title_len: 2,
    };
    let loss = |params: &ModelParams<f64>, track: bool| {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, track);
        let out = sequence_loss(
            &mut tape,
            &vars,
            view,
            &targets,
            &mut DropoutCtx::inference(),
        )
        .unwrap();
        let value = tape.value(out.loss).item();
        let grads = track.then(|| {
            let g = tape.backward(out.loss).unwrap();
            vars.vars()
                .iter()
                .map(|v| g.get(*v).unwrap().clone())
                .collect::<Vec<Tensor<f64>>>()
        });
        (value, grads)
    };
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let params: ModelParams<f64> =
            build_model(&hp, Ablation::Full, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let analytic = loss(&params, true).1.unwrap();
        let mut flat: Vec<Tensor<f64>> = params
            .named_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let mut probe = params.clone();
        let err = finite_difference_check(
            |ps| {
                for (dst, src) in probe.tensors_mut().into_iter().zip(ps) {
                    *dst = src.clone();
                }
                loss(&probe, false).0
            },
            &mut flat,
            &analytic,
            1e-3,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "max relative error {worst:.2e} over 3 models, {secs:.1}s"
    ))
}

fn distribution_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_sum: f64 = 0.0;
    let mut worst_decomp: f64 = 0.0;
    for case in 0..1000 {
        let v = rng.gen_range(5..10);
        let hp = Hyperparams {
            emb_dim: rng.gen_range(1..5),
            hidden_dim: 2 * rng.gen_range(1..4),
            vocab_size: v,
            ..Hyperparams::default()
        };
        let mut params: ModelParams<f64> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
        randomize(&mut params, 1.5, &mut rng);
        let len = rng.gen_range(1..8);
        let oov = rng.gen_range(0..3);
        let ext: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v + oov)).collect();
        let context: Vec<usize> = ext.iter().map(|&e| if e < v { e } else { 1 }).collect();
        let title_len = rng.gen_range(1..=len);
        let prev = rng.gen_range(0..v + oov);

        let (bank_rows, init) = common::encode(&params, &context, title_len);
        let d = params.hidden_dim();
        let att0: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let step = common::decode(&params, &init, &att0, prev, &bank_rows);
        let oracle = common::distribution(&params, &step, &ext, oov);

        let bank = encode_memory_bank(&params, &context, title_len).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let bank_var = tape.constant_ref(&bank.states);
        let start = DecoderStep {
            state: tape.constant(bank.init_state.clone()),
            attentional: tape.constant(Tensor::new(vec![1, d], att0).unwrap()),
        };
        let out = decode_step(
            &mut tape,
            &vars,
            start,
            &[prev],
            bank_var,
            &bank.mask,
            &mut DropoutCtx::inference(),
        )
        .map_err(|e| e.to_string())?;
        let logits = tape.value(out.logits).row_slice(0).to_vec();
        let weights = tape.value(out.weights).row_slice(0).to_vec();
        let att = tape.value(out.next.attentional).row_slice(0).to_vec();
        drop(tape);

        let dist = |bias: Option<f64>| {
            let mut copy = params.copy.clone().unwrap();
            if let Some(b) = bias {
                copy.bias = Tensor::from_f64(&[1, 1], &[b]).unwrap();
            }
            final_distribution(&logits, &weights, &att, Some(&copy), &ext, oov).unwrap()
        };
        let full = dist(None);
        let f32_sum: f32 = full.iter().map(|&x| x as f32).sum();
        worst_sum = worst_sum
            .max((f32_sum as f64 - 1.0).abs())
            .max((full.iter().sum::<f64>() - 1.0).abs());
        worst_decomp = worst_decomp.max(common::max_diff(&full, &oracle));

        let closed = dist(Some(-1e4));
        ensure(closed[v..].iter().all(|&x| x == 0.0), || {
            format!("case {case}: OOV mass with the copy switch closed")
        })?;
        let open = dist(Some(1e4));
        for y in 0..v + oov {
            if !ext.contains(&y) {
                ensure(open[y] == 0.0, || {
                    format!(
                        "case {case}: word {y} not in the source has mass {}",
                        open[y]
                    )
                })?;
            }
        }
    }
    ensure(worst_sum < 1e-5, || {
        format!("sum deviates by {worst_sum:.2e}")
    })?;
    ensure(worst_decomp < 1e-12, || {
        format!("decomposition off by {worst_decomp:.2e}")
    })?;
    Ok(format!(
        "1000 random models: |sum-1| <= {worst_sum:.1e}, oracle gap {worst_decomp:.1e}, saturated gates exact"
    ))
}

fn lambda_collapse() -> Check {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = Hyperparams {
            emb_dim: 4,
            hidden_dim: 8,
            vocab_size: 12,
            ..Hyperparams::default()
        };
        let mut params: ModelParams<f64> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
        randomize(&mut params, 0.8, &mut rng);
        params.lambda = 1.0;
        let context = [5, 7, 1, 9, 5, 11];
        let mask = [true; 6];
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let enc = encode_context(
            &mut tape,
            &vars,
            &context,
            &mask,
            &context[..2],
            &mut DropoutCtx::inference(),
        )
        .map_err(|e| e.to_string())?;
        let x = tape.gather(vars.embedding, &context).unwrap();
        let plain =
            bigru_encode(&mut tape, &vars.context_fwd, &vars.context_bwd, x, &mask).unwrap();
        ensure(tape.value(enc.bank) == tape.value(plain.states), || {
            format!("seed {seed}: bank differs")
        })?;
    }
    Ok("memory bank equals the plain bi-GRU states bit for bit (5 models)".into())
}

fn beam_oracle() -> Check {
    // |V| = 4 plus one OOV: a dynamic vocabulary of 5.
    const CONTEXT: [usize; 4] = [1, 0, 1, 2];
    const EXT: [usize; 4] = [4, 0, 4, 2];
    let doc = EncodedDocument {
        context_ids: CONTEXT.to_vec(),
        context_ext_ids: EXT.to_vec(),
        title_len: 2,
        oovs: vec!["zeta".into()],
        targets: vec![vec![4, 1, EOS], vec![4, EOS]],
        context_tokens: vec![],
        keyphrases: vec![],
    };
    let mut checked = 0;
    for (ablation, seed) in [
        (Ablation::Full, 1),
        (Ablation::NoTitle, 2),
        (Ablation::Full, 3),
    ] {
        let hp = Hyperparams {
            emb_dim: 3,
            hidden_dim: 4,
            vocab_size: 4,
            init_range: 1.0,
            learning_rate: 0.05,
            batch_size: 2,
            dropout: 0.0,
            ..Hyperparams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: ModelParams<f64> = build_model(&hp, ablation, &mut rng).unwrap();
        let schedule = TrainSchedule {
            max_epochs: 30,
            ..TrainSchedule::default()
        };
        let docs = [doc.clone()];
        let trained = train_loop(params, None, &docs, &docs, &hp, &schedule, &mut rng, None)
            .map_err(|e| e.to_string())?
            .last;

        let bank = encode_memory_bank(&trained, &CONTEXT, 2).map_err(|e| e.to_string())?;
        let cfg = BeamConfig {
            beam_size: 200,
            max_depth: 3,
            length_normalize: false,
        };
        let hyps = beam_search(&trained, &bank, &EXT, 1, &cfg).map_err(|e| e.to_string())?;
        let mut all: Vec<(Vec<usize>, f64)> = common::enumerate_sequences(5, 3)
            .into_iter()
            .map(|s| {
                let lp = common::sequence_log_prob(&trained, &CONTEXT, 2, &EXT, 1, &s);
                (s, lp)
            })
            .filter(|(_, lp)| lp.is_finite())
            .collect();
        all.sort_by(|a, b| {
            let done = |s: &[usize]| s.last() == Some(&EOS);
            done(&b.0)
                .cmp(&done(&a.0))
                .then(b.1.partial_cmp(&a.1).unwrap())
        });
        let got: Vec<&Vec<usize>> = hyps.iter().map(|h| &h.tokens).collect();
        let want: Vec<&Vec<usize>> = all.iter().map(|(s, _)| s).collect();
        ensure(got == want, || {
            format!("{ablation} seed {seed}: ranking differs from enumeration")
        })?;
        let mut got_set = got.clone();
        let mut want_set = want.clone();
        got_set.sort();
        want_set.sort();
        ensure(got_set == want_set, || {
            format!("{ablation} seed {seed}: sequence sets differ")
        })?;
        checked += want.len();
    }
    Ok(format!(
        "3 trained toy models, {checked} ranked sequences identical to enumeration"
    ))
}

fn eval_inputs(docs: &[EncodedDocument], preds: &[tgnet::search::Prediction]) -> Vec<EvalInput> {
    docs.iter()
        .zip(preds)
        .map(|(d, p)| EvalInput {
            context: d.context_tokens.clone(),
            title_len: d.title_len,
            targets: d.keyphrases.clone(),
            predictions: p.token_lists(),
        })
        .collect()
}

fn overfit() -> Check {
    let start = Instant::now();
    let mut nlls = Vec::new();
    let mut f1s = Vec::new();
    let mut epochs = Vec::new();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = synth::present_corpus(50, 700, 5, 3..=4, &mut rng);
        let (vocab, enc) = synth::vocab_and_encode(&docs, 500);
        ensure(vocab.len() == 500, || {
            format!("vocabulary has {} entries", vocab.len())
        })?;
        let hp = Hyperparams {
            emb_dim: 32,
            hidden_dim: 64,
            vocab_size: vocab.len(),
            batch_size: 16,
            learning_rate: 0.01,
            dropout: 0.0,
            ..Hyperparams::default()
        };
        let params: ModelParams<f32> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
        let schedule = TrainSchedule {
            max_epochs: 200,
            ..TrainSchedule::default()
        };
        let out = train_loop(params, None, &enc, &enc, &hp, &schedule, &mut rng, None)
            .map_err(|e| e.to_string())?;
        let (nll, tokens) = corpus_nll(&out.best, &enc).map_err(|e| e.to_string())?;
        let preds = predict_documents(
            &out.best,
            &enc,
            &vocab,
            &BeamConfig::default(),
            PostMode::TrainDomain,
        )
        .map_err(|e| e.to_string())?;
        nlls.push(nll / tokens as f64);
        f1s.push(evaluate(&eval_inputs(&enc, &preds)).present.f1_at_5);
        epochs.push(out.epochs);
    }
    let secs = start.elapsed().as_secs_f64();
    let nll = nlls.iter().sum::<f64>() / 3.0;
    let f1 = f1s.iter().sum::<f64>() / 3.0;
    let detail = format!(
        "mean NLL/token {nll:.4} {nlls:.3?}, present F1@5 {f1:.4} {f1s:.3?}, epochs {epochs:?}, {secs:.0}s"
    );
    ensure(nll < 0.5 && f1 >= 0.8 && secs < 600.0, || detail.clone())?;
    Ok(detail)
}

fn title_signal() -> Check {
    let mut scores = [Vec::new(), Vec::new()];
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let docs = synth::title_bigram_corpus(130, 2000, &mut rng);
        let (train, test) = docs.split_at(100);
        let vocab = build_vocab(train, 300).unwrap();
        let tr = synth::encode_all(train, &vocab);
        let te = synth::encode_all(test, &vocab);
        for (slot, ablation) in [Ablation::Full, Ablation::NoTitle].into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hp = Hyperparams {
                emb_dim: 16,
                hidden_dim: 32,
                vocab_size: vocab.len(),
                batch_size: 16,
                learning_rate: 0.01,
                dropout: 0.0,
                ..Hyperparams::default()
            };
            let params: ModelParams<f32> = build_model(&hp, ablation, &mut rng).unwrap();
            // A fixed budget: no early stopping.
            let schedule = TrainSchedule {
                max_epochs: 15,
                patience: usize::MAX,
                ..TrainSchedule::default()
            };
            let out = train_loop(params, None, &tr, &tr, &hp, &schedule, &mut rng, None)
                .map_err(|e| e.to_string())?;
            let beam = BeamConfig {
                beam_size: 50,
                max_depth: 4,
                length_normalize: false,
            };
            let preds = predict_documents(&out.last, &te, &vocab, &beam, PostMode::TrainDomain)
                .map_err(|e| e.to_string())?;
            scores[slot].push(evaluate(&eval_inputs(&te, &preds)).present.f1_at_5);
        }
    }
    let full = scores[0].iter().sum::<f64>() / 3.0;
    let no_title = scores[1].iter().sum::<f64>() / 3.0;
    let detail = format!(
        "held-out present F1@5: full {full:.4} {:.3?} vs no_title {no_title:.4} {:.3?}",
        scores[0], scores[1]
    );
    ensure(full >= no_title, || detail.clone())?;
    Ok(detail)
}

fn metric_fixtures() -> Check {
    let at = |preds: &[&str], targets: &[&str], k: usize| {
        let t = compute_metrics(&[ps(preds)], &[ps(targets)], &[k]);
        (t.at[0].precision, t.at[0].recall, t.at[0].f1)
    };
    let cases = [
        (
            at(&["a b", "c", "d e"], &["a b", "c", "d e"], 5),
            (1.0, 1.0, 1.0),
        ),
        (at(&["x", "y"], &["a", "b"], 5), (0.0, 0.0, 0.0)),
        (
            at(&["a", "x", "b", "y", "z", "c"], &["a", "b", "c", "d"], 5),
            (0.4, 0.5, 4.0 / 9.0),
        ),
        (at(&["a", "x"], &["a", "b", "c"], 5), (0.5, 1.0 / 3.0, 0.4)),
        (
            at(
                &["neural networks", "neural network", "svm"],
                &["neural network", "kernels"],
                10,
            ),
            (0.5, 0.5, 0.5),
        ),
    ];
    for (i, (got, want)) in cases.iter().enumerate() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        ensure(
            close(got.0, want.0) && close(got.1, want.1) && close(got.2, want.2),
            || format!("metric case {}: got {got:?}, want {want:?}", i + 1),
        )?;
    }
    ensure((cases[2].0 .2 - 0.4444).abs() < 1e-4, || {
        "F1 = 0.4444 case".into()
    })?;

    let text = include_str!("fixtures/porter_reference.tsv");
    let mut words = 0;
    let mut matched = 0;
    for line in text.lines() {
        let (word, stem) = line.split_once('\t').unwrap();
        words += 1;
        matched += usize::from(porter_stem(word) == stem);
    }
    ensure(words == 200 && matched == 200, || {
        format!("porter {matched}/{words}")
    })?;

    let doc = |title: &str, body: &str, keys: &[&str]| Document {
        title: p(title),
        r#abstract: p(body),
        keyphrases: ps(keys),
    };
    let corpus = [
        doc(
            "relevance profiling for interactive retrieval",
            "we study relevance profiling of search results",
            &[
                "relevance profiling",
                "search results",
                "interactive information retrieval",
                "user studies",
            ],
        ),
        doc(
            "the design of neural networks",
            "a neural approach to design",
            &["the grid", "neural approach", "deep learning"],
        ),
        doc(
            "graph mining",
            "mining of large graphs",
            &["graph mining", "large graphs", "data streams"],
        ),
        doc(
            "2019 survey",
            "a survey of methods",
            &["2020 benchmarks", "survey"],
        ),
    ];
    // Hand count: present 4 of 6 title-related, absent 1 of 6.
    let s = title_related_stats(&corpus, &default_stopwords());
    ensure(
        (
            s.present.total,
            s.present.title_related,
            s.absent.total,
            s.absent.title_related,
        ) == (6, 4, 6, 1)
            && s.present.percentage == 200.0 / 3.0
            && s.absent.percentage == 50.0 / 3.0,
        || format!("title-related stats {s:?}"),
    )?;
    Ok(format!(
        "5/5 metric cases, porter {matched}/200, title-related {:.2}% / {:.2}%",
        s.present.percentage, s.absent.percentage
    ))
}

fn determinism() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let docs = synth::present_corpus(12, 80, 3, 1..=3, &mut rng);
    let (vocab, enc) = synth::vocab_and_encode(&docs, 60);
    let hp = Hyperparams {
        emb_dim: 8,
        hidden_dim: 12,
        vocab_size: vocab.len(),
        batch_size: 8,
        ..Hyperparams::default()
    };
    let run = |vocab: &Vocabulary| -> Result<Vec<u8>, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: ModelParams<f32> = build_model(&hp, Ablation::Full, &mut rng).unwrap();
        let schedule = TrainSchedule {
            max_epochs: 3,
            ..TrainSchedule::default()
        };
        let out = train_loop(params, None, &enc, &enc, &hp, &schedule, &mut rng, None)
            .map_err(|e| e.to_string())?;
        Checkpoint {
            hyperparams: hp.clone(),
            params: out.best,
            vocab: vocab.clone(),
            optimizer: Some(out.optimizer),
            best_perplexity: Some(out.best_perplexity),
        }
        .to_bytes()
        .map_err(|e| e.to_string())
    };
    let a = run(&vocab)?;
    let b = run(&vocab)?;
    ensure(a == b, || {
        "two runs with the same seed wrote different checkpoints".into()
    })?;
    let back = Checkpoint::from_bytes(&a).map_err(|e| e.to_string())?;
    ensure(back.to_bytes().map_err(|e| e.to_string())? == a, || {
        "round trip changed the bytes".into()
    })?;
    Ok(format!(
        "identical {}-byte checkpoints from two runs; round trip exact",
        a.len()
    ))
}

fn bucket_analysis() -> Check {
    // (title length, context length) -> bucket by hand: 2%, 3%, 5%, 7%,
    // 11%, 12%.
    let fixture = [
        ((2, 100), 1),
        ((3, 100), 2),
        ((10, 200), 2),
        ((7, 100), 3),
        ((11, 100), 4),
        ((9, 75), 5),
    ];
    let mut seen = [false; 5];
    for ((t, x), want) in fixture {
        let got = bucket_by_title_ratio(t, x);
        ensure(got == Some(want), || {
            format!("{t}/{x}: got {got:?}, want {want}")
        })?;
        seen[usize::from(want - 1)] = true;
    }
    ensure(seen.iter().all(|&s| s), || "fixture misses a bucket".into())?;
    Ok("6 documents over all 5 groups assigned as computed by hand".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("gradient oracle", gradient_oracle),
        ("distribution invariants", distribution_invariants),
        ("lambda=1 collapse", lambda_collapse),
        ("beam oracle", beam_oracle),
        ("overfit", overfit),
        ("title signal", title_signal),
        ("metric fixtures", metric_fixtures),
        ("determinism", determinism),
        ("bucket analysis", bucket_analysis),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name:<24} {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<24} {detail} [{secs:.1}s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
