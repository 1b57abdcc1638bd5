//! Acceptance gate: ten behavioral checks that must hold before a release.
//! Each check prints one `ACCEPTANCE criterion-N: PASS (...)` line when it
//! succeeds (run with `--nocapture` to see them); a failed assertion marks
//! the criterion red.
//!
//! Tolerances are pinned here, next to the assertions, so a change to any
//! of them shows up in review.

use std::collections::HashSet;
use std::io::Cursor;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use onestop::data::{
    build_examples, make_batches, parse_corpus, prepare, tokenize_record, Example, Vocabulary,
    WindowConfig, EOS, FIRST_REAL_ID,
};
use onestop::inference::{extract_span, generate_question, DecodeMode};
use onestop::metrics::{corpus_bleu, rouge_l, rouge_n, span_token_f1, SpanMetrics};
use onestop::model::{ModelConfig, OneStopModel};
use onestop::numcore::{gradcheck::check_params, Params, Tape, Tensor};
use onestop::synthetic::generate_records;
use onestop::training::{evaluate, run_schedule, Stage, StageSpec, TrainConfig};
use onestop::transformer::{encoder_stack, init_encoder_layer, DropoutMode, Graph};

// ---------------------------------------------------------------------------
// Shared helpers

fn toy_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        dim: 16,
        ffn_dim: 32,
        heads: 2,
        enc_layers: 2,
        dec_layers: 2,
        max_doc: 12,
        max_question: 8,
        dropout: 0.0,
        eps: 1e-5,
    }
}

/// Random document, question (ending in `<eos>`), and valid span over the
/// real token ids of a `vocab`-sized model.
fn random_example(rng: &mut ChaCha8Rng, vocab: usize, max_doc: usize, max_q: usize) -> Example {
    let first = FIRST_REAL_ID;
    let doc_len = rng.random_range(3..=max_doc);
    let doc: Vec<u32> = (0..doc_len)
        .map(|_| rng.random_range(first..vocab as u32))
        .collect();
    let q_len = rng.random_range(2..max_q);
    let mut question: Vec<u32> = (0..q_len)
        .map(|_| rng.random_range(first..vocab as u32))
        .collect();
    question.push(EOS);
    let start = rng.random_range(0..doc_len);
    let end = rng.random_range(start..doc_len);
    Example {
        doc,
        question,
        start,
        end,
    }
}

// ---------------------------------------------------------------------------
// Criterion 1 — the self-attentive unit matches a hand-coded evaluation of
// its defining equations under a single-head, identity-projection setup.

fn identity_matrix(m: usize) -> Tensor<f64> {
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        data[i * m + i] = 1.0;
    }
    Tensor::from_vec(vec![m, m], data).unwrap()
}

/// Hand-coded layer norm: (v - mean) / sqrt(var + eps), population variance,
/// unit gain and zero bias.
fn hand_norm(row: &[f64], eps: f64) -> Vec<f64> {
    let m = row.len() as f64;
    let mean = row.iter().sum::<f64>() / m;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let inv = 1.0 / (var + eps).sqrt();
    row.iter().map(|v| (v - mean) * inv).collect()
}

/// Hand-coded single layer: Att = softmax(QK^T/sqrt(dk))V with Q = K = V = x,
/// X1 = norm(x + Att), FFN = relu(X1 w1 + b1) w2 + b2, X2 = norm(X1 + FFN).
#[allow(clippy::needless_range_loop)]
fn hand_unit(
    x: &[Vec<f64>],
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    hidden: usize,
    eps: f64,
) -> Vec<Vec<f64>> {
    let t = x.len();
    let m = x[0].len();
    let scale = 1.0 / (m as f64).sqrt();

    // Att(Q, K, V) = softmax(Q K^T / sqrt(dk)) V
    let mut att = vec![vec![0.0; m]; t];
    for i in 0..t {
        let scores: Vec<f64> = (0..t)
            .map(|j| x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..t {
            let p = exps[j] / z;
            for c in 0..m {
                att[i][c] += p * x[j][c];
            }
        }
    }

    // X1 = f_norm(Q + Att(Q, K, V))
    let x1: Vec<Vec<f64>> = (0..t)
        .map(|i| {
            let sum: Vec<f64> = x[i].iter().zip(&att[i]).map(|(a, b)| a + b).collect();
            hand_norm(&sum, eps)
        })
        .collect();

    // FFN(X1) = max(0, X1 W1 + b1) W2 + b2, then X2 = f_norm(X1 + FFN(X1))
    (0..t)
        .map(|i| {
            let mut h = vec![0.0; hidden];
            for k in 0..hidden {
                let mut acc = b1[k];
                for c in 0..m {
                    acc += x1[i][c] * w1[c * hidden + k];
                }
                h[k] = acc.max(0.0);
            }
            let mut y = vec![0.0; m];
            for c in 0..m {
                let mut acc = b2[c];
                for k in 0..hidden {
                    acc += h[k] * w2[k * m + c];
                }
                y[c] = acc;
            }
            let sum: Vec<f64> = x1[i].iter().zip(&y).map(|(a, b)| a + b).collect();
            hand_norm(&sum, eps)
        })
        .collect()
}

#[test]
fn criterion_01_attention_unit_equations() {
    const T: usize = 4;
    const M: usize = 8;
    const HIDDEN: usize = 16;
    const EPS: f64 = 1e-5;

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut params = Params::<f64>::new();
    let layer = init_encoder_layer(&mut params, "l0", M, HIDDEN, &mut rng);
    // Single head with identity projections: the unit reduces to its
    // defining equations with Q = K = V = the input.
    let eye = identity_matrix(M);
    params.set(layer.attn.wq, eye.clone());
    params.set(layer.attn.wk, eye.clone());
    params.set(layer.attn.wv, eye.clone());
    params.set(layer.attn.wo, eye);
    let w1 = params.get(layer.ffn.w1).data().to_vec();
    let b1 = params.get(layer.ffn.b1).data().to_vec();
    let w2 = params.get(layer.ffn.w2).data().to_vec();
    let b2 = params.get(layer.ffn.b2).data().to_vec();

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x: Vec<Vec<f64>> = (0..T)
            .map(|_| (0..M).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();

        let mut g = Graph::new(&params);
        let x_node = g
            .tape
            .constant(Tensor::from_vec(vec![T, M], x.concat()).unwrap());
        let out = encoder_stack(
            &mut g,
            &[layer],
            1,
            EPS,
            x_node,
            &[true; T],
            &mut DropoutMode::Eval,
        )
        .unwrap();
        let module = g.tape.value(out).data().to_vec();

        let hand = hand_unit(&x, &w1, &b1, &w2, &b2, HIDDEN, EPS);
        for (i, row) in hand.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                worst = worst.max((v - module[i * M + c]).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max deviation {worst:e}");
    println!("ACCEPTANCE criterion-1: PASS (20 random 4x8 inputs, max |delta| = {worst:.2e})");
}

// ---------------------------------------------------------------------------
// Criterion 2 — whole-model gradients match central finite differences.

#[test]
fn criterion_02_gradient_correctness() {
    let t0 = Instant::now();
    let model = OneStopModel::<f64>::new(toy_config(14), 21).unwrap();
    let n_tensors = model.params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let lambda = 0.4;

    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let ex = random_example(&mut rng, 14, 10, 6);
        let eval = |ps: &Params<f64>| {
            let mut g = Graph {
                tape: Tape::new(),
                params: ps,
            };
            let nodes = model
                .example_nodes(
                    &mut g,
                    &ex.doc,
                    ex.doc.len(),
                    &ex.question,
                    (ex.start, ex.end),
                    lambda,
                    &mut DropoutMode::Eval,
                )
                .unwrap();
            g.tape.scalar_value(nodes.phi_total)
        };

        let mut g = Graph::new(&model.params);
        let nodes = model
            .example_nodes(
                &mut g,
                &ex.doc,
                ex.doc.len(),
                &ex.question,
                (ex.start, ex.end),
                lambda,
                &mut DropoutMode::Eval,
            )
            .unwrap();
        g.tape.backward(nodes.phi_total).unwrap();
        let analytic: Vec<_> = model
            .params
            .ids()
            .filter_map(|id| g.tape.param_grad(id).map(|gr| (id, gr.to_vec())))
            .collect();
        // At an interior lambda every parameter receives gradient.
        assert_eq!(analytic.len(), model.params.len());

        let err = check_params(&model.params, &analytic, 1e-5, 3, &mut rng, eval);
        worst = worst.max(err);
    }
    assert!(worst < 1e-3, "worst relative error {worst:e}");
    println!(
        "ACCEPTANCE criterion-2: PASS (5 examples, all {} parameter tensors, worst rel err = {:.2e}, {:.1}s)",
        n_tensors,
        worst,
        t0.elapsed().as_secs_f64(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3 — the combined loss is the lambda blend of its terms, and the
// endpoints reduce exactly.

#[test]
fn criterion_03_loss_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);

    // The blend arithmetic itself, on 100 random value tuples, built from
    // the same tape operations the model uses.
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let phi_lm = rng.random_range(0.01..10.0);
        let phi_start = rng.random_range(0.01..10.0);
        let phi_end = rng.random_range(0.01..10.0);
        let lambda = rng.random_range(0.0..=1.0);

        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(vec![1], vec![phi_lm]).unwrap());
        let b = tape.constant(Tensor::from_vec(vec![1], vec![phi_start]).unwrap());
        let c = tape.constant(Tensor::from_vec(vec![1], vec![phi_end]).unwrap());
        let span = tape.add(b, c).unwrap();
        let lm_part = tape.scale(a, lambda).unwrap();
        let span_part = tape.scale(span, 1.0 - lambda).unwrap();
        let total = tape.add(lm_part, span_part).unwrap();
        let got = tape.scalar_value(total);

        let want = lambda * phi_lm + (1.0 - lambda) * (phi_start + phi_end);
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-6, "max blend deviation {worst:e}");

    // Endpoint exactness through the whole model.
    let model = OneStopModel::<f64>::new(toy_config(14), 33).unwrap();
    for _ in 0..5 {
        let ex = random_example(&mut rng, 14, 10, 6);
        let run = |lambda: f64| {
            let mut g = Graph::new(&model.params);
            let nodes = model
                .example_nodes(
                    &mut g,
                    &ex.doc,
                    ex.doc.len(),
                    &ex.question,
                    (ex.start, ex.end),
                    lambda,
                    &mut DropoutMode::Eval,
                )
                .unwrap();
            g.tape.backward(nodes.phi_total).unwrap();
            (
                g.tape.scalar_value(nodes.phi_lm),
                g.tape.scalar_value(nodes.phi_start),
                g.tape.scalar_value(nodes.phi_end),
                g.tape.scalar_value(nodes.phi_total),
            )
        };
        let (lm, _, _, total) = run(1.0);
        assert_eq!(total, lm, "lambda = 1 must reduce to the question term");
        let (_, s, e, total) = run(0.0);
        assert_eq!(total, s + e, "lambda = 0 must reduce to the span terms");
    }
    println!(
        "ACCEPTANCE criterion-3: PASS (100 random tuples, max |delta| = {worst:.2e}; endpoints exact)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4 — start/end distributions are proper softmaxes over the
// non-pad positions.

#[test]
fn criterion_04_span_softmax_normalization() {
    use onestop::data::PAD;
    let model = OneStopModel::<f32>::new(toy_config(20), 41).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let doc_len = rng.random_range(3..=12usize);
        let mut doc: Vec<u32> = (0..doc_len)
            .map(|_| rng.random_range(FIRST_REAL_ID..20))
            .collect();
        // Ragged padding: each instance pads to a different total width.
        let padded = rng.random_range(doc_len..=12usize);
        doc.resize(padded, PAD);
        let q_len = rng.random_range(2..6usize);
        let question: Vec<u32> = (0..q_len)
            .map(|_| rng.random_range(FIRST_REAL_ID..20))
            .chain(std::iter::once(EOS))
            .collect();

        let enc = model.encode_doc(&doc, doc_len).unwrap();
        let q_eos = model.force_decode(&enc, &question).unwrap();
        let (p_start, p_end) = model.span_distributions(&enc, &q_eos).unwrap();
        for p in [&p_start, &p_end] {
            assert_eq!(p.len(), padded);
            let sum: f64 = p[..doc_len].iter().map(|v| *v as f64).sum();
            worst = worst.max((sum - 1.0).abs());
            for &v in &p[doc_len..] {
                assert_eq!(v, 0.0, "pad positions must carry exactly zero mass");
            }
        }
    }
    assert!(worst < 1e-6, "max |sum - 1| = {worst:e}");
    println!(
        "ACCEPTANCE criterion-4: PASS (100 ragged instances, max |sum - 1| = {worst:.2e}, pads exactly 0)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5 — constrained span argmax equals brute-force enumeration.

#[test]
fn criterion_05_span_decoding_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for case in 0..100 {
        let doc_len = rng.random_range(1..=20usize);
        let max_answer_len = rng.random_range(1..=doc_len);
        let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..doc_len)
                .map(|_| {
                    // A tenth of the entries carry exactly zero probability.
                    if rng.random_range(0..10) == 0 {
                        0.0
                    } else {
                        rng.random_range(0.001..1.0)
                    }
                })
                .collect()
        };
        let p_start = sample(&mut rng);
        let p_end = sample(&mut rng);

        // Brute force over every valid (i, j): i <= j, span no longer than
        // max_answer_len, strictly-greater replacement so ties keep the
        // lexicographically first pair.
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        #[allow(clippy::needless_range_loop)]
        for i in 0..doc_len {
            for j in i..doc_len.min(i + max_answer_len) {
                let score = p_start[i].ln() + p_end[j].ln();
                if score > best.2 {
                    best = (i, j, score);
                }
            }
        }

        let got = extract_span(&p_start, &p_end, doc_len, max_answer_len);
        assert_eq!(
            (got.0, got.1),
            (best.0, best.1),
            "case {case}: doc_len {doc_len}, max {max_answer_len}"
        );
        if best.2.is_finite() || got.2.is_finite() {
            assert_eq!(got.2, best.2, "case {case}: scores must agree exactly");
        }
    }
    println!("ACCEPTANCE criterion-5: PASS (100 random instances, argmax == enumeration exactly)");
}

// ---------------------------------------------------------------------------
// Criterion 6 — the training schedule can drive the toy model to reproduce a
// 50-example synthetic corpus within 300 joint steps.

#[test]
fn criterion_06_overfit_capacity() {
    let t0 = Instant::now();
    let mut records = generate_records(120, 11);
    let mut seen = HashSet::new();
    records.retain(|r| seen.insert(r.document.clone()));
    records.truncate(50);
    assert_eq!(records.len(), 50);

    let tokenized: Vec<_> = records
        .iter()
        .enumerate()
        .map(|(i, r)| tokenize_record(i + 1, r).unwrap())
        .collect();
    let vocab = Vocabulary::build(
        tokenized.iter().flat_map(|t| {
            t.doc
                .iter()
                .chain(t.question.iter())
                .map(|s| s.text.as_str())
        }),
        1,
    );
    let (examples, rejected) = build_examples(&tokenized, &vocab, 32, 12);
    assert!(rejected.is_empty());

    let config = ModelConfig {
        vocab_size: vocab.len(),
        dim: 64,
        ffn_dim: 256,
        heads: 4,
        enc_layers: 2,
        dec_layers: 2,
        max_doc: 32,
        max_question: 12,
        dropout: 0.0,
        eps: 1e-5,
    };
    let mut model = OneStopModel::<f32>::new(config, 11).unwrap();
    let cfg = TrainConfig {
        lambda: 0.5,
        lr: 3e-3,
        batch_size: 16,
        warmup_ratio: 0.05,
        clip_norm: 1.0,
        patience: 1000,
        seed: 11,
        stages: vec![
            StageSpec {
                stage: Stage::QuestionOnly,
                epochs: 8,
            },
            StageSpec {
                stage: Stage::SpanOnly,
                epochs: 8,
            },
            StageSpec {
                stage: Stage::Joint,
                epochs: 75,
            },
        ],
    };
    let report = run_schedule(&mut model, &examples, &[], &cfg, None, &mut |_| ()).unwrap();
    let joint_steps = report.stages[2].steps_run;
    assert!(joint_steps <= 300, "{joint_steps} joint steps used");

    let val = evaluate(&model, &examples, 0.5).unwrap();
    let mut reproduced = 0usize;
    for ex in &examples {
        let enc = model.encode_doc(&ex.doc, ex.doc.len()).unwrap();
        let gen = generate_question(&model, &enc, DecodeMode::Greedy).unwrap();
        if gen.tokens == ex.question {
            reproduced += 1;
        }
    }
    let reproduction = reproduced as f64 / examples.len() as f64;
    assert!(val.exact_match >= 0.95, "span EM {}", val.exact_match);
    assert!(reproduction >= 0.95, "question reproduction {reproduction}");
    println!(
        "ACCEPTANCE criterion-6: PASS (span EM {:.3}, question reproduction {:.3}, {} joint steps, {:.1}s)",
        val.exact_match,
        reproduction,
        joint_steps,
        t0.elapsed().as_secs_f64(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7 — with the same total parameter budget, the joint model's
// held-out span exact-match meets or beats the two-model pipeline's
// (median over three seed repetitions; the margin is reported).

#[test]
fn criterion_07_joint_vs_pipeline() {
    let t0 = Instant::now();
    let mut records = generate_records(500, 31);
    let mut seen = HashSet::new();
    records.retain(|r| seen.insert(r.document.clone()));
    records.truncate(160);
    let (train_records, held_records) = records.split_at(120);

    let tokenize_all = |records: &[onestop::data::RawRecord]| {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| tokenize_record(i + 1, r).unwrap())
            .collect::<Vec<_>>()
    };
    let train_tok = tokenize_all(train_records);
    let held_tok = tokenize_all(held_records);
    let vocab = Vocabulary::build(
        train_tok.iter().flat_map(|t| {
            t.doc
                .iter()
                .chain(t.question.iter())
                .map(|s| s.text.as_str())
        }),
        1,
    );
    let (train, rejected) = build_examples(&train_tok, &vocab, 32, 12);
    assert!(rejected.is_empty());
    let (held, rejected) = build_examples(&held_tok, &vocab, 32, 12);
    assert!(rejected.is_empty());

    let joint_config = ModelConfig {
        vocab_size: vocab.len(),
        dim: 64,
        ffn_dim: 256,
        heads: 4,
        enc_layers: 2,
        dec_layers: 2,
        max_doc: 32,
        max_question: 12,
        dropout: 0.0,
        eps: 1e-5,
    };
    // The pipeline splits the same budget across two isolated single-task
    // models, so each one is narrower.
    let pipe_config = ModelConfig {
        dim: 44,
        ffn_dim: 176,
        ..joint_config.clone()
    };
    let joint_params = OneStopModel::<f32>::new(joint_config.clone(), 0)
        .unwrap()
        .params
        .numel();
    let pipe_params = OneStopModel::<f32>::new(pipe_config.clone(), 0)
        .unwrap()
        .params
        .numel();
    assert!(
        2 * pipe_params <= joint_params,
        "pipeline budget 2 x {pipe_params} exceeds joint budget {joint_params}"
    );

    let spec = |stage, epochs| StageSpec { stage, epochs };
    let train_cfg = |seed: u64, stages: Vec<StageSpec>| TrainConfig {
        lambda: 0.5,
        lr: 3e-3,
        batch_size: 16,
        warmup_ratio: 0.05,
        clip_norm: 1.0,
        patience: 1000,
        seed,
        stages,
    };

    let mut joint_ems = Vec::new();
    let mut pipe_ems = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut joint = OneStopModel::<f32>::new(joint_config.clone(), seed).unwrap();
        run_schedule(
            &mut joint,
            &train,
            &[],
            &train_cfg(
                seed,
                vec![
                    spec(Stage::QuestionOnly, 8),
                    spec(Stage::SpanOnly, 8),
                    spec(Stage::Joint, 25),
                ],
            ),
            None,
            &mut |_| (),
        )
        .unwrap();
        // Both pipeline models exist and train with the same seed and the
        // same per-model epoch total, even though only the span model's
        // exact-match enters the comparison.
        let mut qg = OneStopModel::<f32>::new(pipe_config.clone(), seed).unwrap();
        run_schedule(
            &mut qg,
            &train,
            &[],
            &train_cfg(seed, vec![spec(Stage::QuestionOnly, 41)]),
            None,
            &mut |_| (),
        )
        .unwrap();
        let mut span = OneStopModel::<f32>::new(pipe_config.clone(), seed).unwrap();
        run_schedule(
            &mut span,
            &train,
            &[],
            &train_cfg(seed, vec![spec(Stage::SpanOnly, 41)]),
            None,
            &mut |_| (),
        )
        .unwrap();

        let em_joint = evaluate(&joint, &held, 0.5).unwrap().exact_match;
        let em_pipe = evaluate(&span, &held, 0.0).unwrap().exact_match;
        println!(
            "  criterion-7 seed {seed}: joint em {em_joint:.3}, pipeline em {em_pipe:.3}, delta {:+.3}",
            em_joint - em_pipe
        );
        joint_ems.push(em_joint);
        pipe_ems.push(em_pipe);
    }
    joint_ems.sort_by(f64::total_cmp);
    pipe_ems.sort_by(f64::total_cmp);
    let margin = joint_ems[1] - pipe_ems[1];
    assert!(
        joint_ems[1] >= pipe_ems[1],
        "median joint em {} below median pipeline em {}",
        joint_ems[1],
        pipe_ems[1]
    );
    println!(
        "ACCEPTANCE criterion-7: PASS (median joint em {:.3} >= median pipeline em {:.3}, margin {:+.3}, budget 2x{} <= {}, {:.0}s)",
        joint_ems[1],
        pipe_ems[1],
        margin,
        pipe_params,
        joint_params,
        t0.elapsed().as_secs_f64(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 — the metric implementations reproduce hand-computed examples.

#[test]
fn criterion_08_metric_oracles() {
    let words = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };
    let tol = 1e-9;

    // BLEU-1 "the cat" vs "the dog": one of two unigrams matches.
    let b = corpus_bleu(&[words("the cat")], &[words("the dog")], 1).unwrap();
    assert!((b.bleu - 0.5).abs() < tol);

    // BLEU-4 "the cat sat" vs "the cat on the mat": unigrams 2/3; bigrams
    // 1 of 2 match, smoothed (1+1)/(2+1) = 2/3; trigrams 0 of 1, smoothed
    // 1/2; 4-grams 0 of 0, smoothed 1; brevity penalty e^(1 - 5/3).
    let b = corpus_bleu(&[words("the cat sat")], &[words("the cat on the mat")], 4).unwrap();
    assert!((b.brevity_penalty - 0.513_417_119_032_592).abs() < tol);
    assert!((b.bleu - 0.352_506_570_967_594_25).abs() < tol);
    let expected_prec = [2.0 / 3.0, 2.0 / 3.0, 0.5, 1.0];
    for (got, want) in b.precisions.iter().zip(expected_prec) {
        assert!((got - want).abs() < tol, "precision {got} vs {want}");
    }

    // Corpus pooling: counts pool across segments before dividing.
    let b = corpus_bleu(
        &[words("a b c"), words("d e")],
        &[words("a b x"), words("d e")],
        2,
    )
    .unwrap();
    assert!((b.bleu - 0.6f64.sqrt()).abs() < tol);

    // A corpus identical to its references scores exactly one.
    let b = corpus_bleu(
        &[words("a b c d"), words("e f")],
        &[words("a b c d"), words("e f")],
        4,
    )
    .unwrap();
    assert_eq!(b.bleu, 1.0);

    // ROUGE-1: hyp "the cat sat" vs ref "the cat on the mat":
    // recall 2/5, precision 2/3, F1 = 2PR/(P+R) = 1/2.
    let r = rouge_n(&[words("the cat sat")], &[words("the cat on the mat")], 1).unwrap();
    assert!((r.f1 - 0.5).abs() < tol);
    // ROUGE-2 on the same pair: one shared bigram of 2 and 4.
    let r = rouge_n(&[words("the cat sat")], &[words("the cat on the mat")], 2).unwrap();
    assert!((r.f1 - 1.0 / 3.0).abs() < tol);

    // ROUGE-L via longest common subsequence: lcs("a c b", "a b c") = 2,
    // lcs("c b a", "a b c") = 1.
    let r = rouge_l(&[words("a c b")], &[words("a b c")]).unwrap();
    assert!((r.f1 - 2.0 / 3.0).abs() < tol);
    let r = rouge_l(&[words("c b a")], &[words("a b c")]).unwrap();
    assert!((r.f1 - 1.0 / 3.0).abs() < tol);

    // Span exact-match and token F1: spans (2,4) vs (3,5) overlap on two of
    // three tokens each side.
    assert_eq!(span_token_f1((2, 4), (2, 4)), 1.0);
    assert!((span_token_f1((2, 4), (3, 5)) - 2.0 / 3.0).abs() < tol);
    let sm = SpanMetrics::compute(&[(2, 4), (1, 1)], &[(3, 5), (1, 1)]).unwrap();
    assert!((sm.exact_match - 0.5).abs() < tol);
    assert!((sm.token_f1 - (2.0 / 3.0 + 1.0) / 2.0).abs() < tol);

    println!("ACCEPTANCE criterion-8: PASS (BLEU/ROUGE/span oracles exact at 1e-9)");
}

// ---------------------------------------------------------------------------
// Criterion 9 — beam width 1 is greedy, and incremental decoding matches
// full-prefix recomputation.

#[test]
fn criterion_09_decoding_equivalences() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(91);

    // Beam(1) == greedy token-for-token on 50 model/document pairs.
    for m in 0..10u64 {
        let config = ModelConfig {
            vocab_size: 24,
            dim: 16,
            ffn_dim: 32,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            max_doc: 12,
            max_question: 8,
            dropout: 0.0,
            eps: 1e-5,
        };
        let model = OneStopModel::<f32>::new(config, 900 + m).unwrap();
        for _ in 0..5 {
            let doc_len = rng.random_range(3..=10usize);
            let doc: Vec<u32> = (0..doc_len)
                .map(|_| rng.random_range(FIRST_REAL_ID..24))
                .collect();
            let enc = model.encode_doc(&doc, doc_len).unwrap();
            let g = generate_question(&model, &enc, DecodeMode::Greedy).unwrap();
            let b = generate_question(&model, &enc, DecodeMode::Beam(1)).unwrap();
            assert_eq!(g.tokens, b.tokens, "model {m}: beam(1) diverged from greedy");
            assert_eq!(g.sum_logp, b.sum_logp);
        }
    }

    // Incremental cache decoding == full-prefix teacher forcing.
    let model = OneStopModel::<f32>::new(toy_config(20), 92).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let ex = random_example(&mut rng, 20, 10, 7);
        let enc = model.encode_doc(&ex.doc, ex.doc.len()).unwrap();
        let incremental = model.force_decode(&enc, &ex.question).unwrap();

        let mut g = Graph::new(&model.params);
        let nodes = model
            .example_nodes(
                &mut g,
                &ex.doc,
                ex.doc.len(),
                &ex.question,
                (ex.start, ex.end),
                0.5,
                &mut DropoutMode::Eval,
            )
            .unwrap();
        let full = g.tape.value(nodes.q_eos).clone();
        let diff = incremental.max_abs_diff(&full);
        worst = worst.max(diff);
    }
    assert!(worst < 1e-5, "max cache deviation {worst:e}");
    println!(
        "ACCEPTANCE criterion-9: PASS (beam(1) == greedy on 50 pairs; cache vs full max |delta| = {:.2e}; {:.1}s)",
        worst,
        t0.elapsed().as_secs_f64(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10 — corpus load, split, and batching preserve answer tokens.

#[test]
fn criterion_10_data_round_trips() {
    let records = generate_records(500, 77);
    assert_eq!(records.len(), 500);

    // Load: serialize to JSONL and parse back, then window.
    let mut buf = String::new();
    for r in &records {
        buf.push_str(&serde_json::to_string(r).unwrap());
        buf.push('\n');
    }
    let (parsed, rejections) = parse_corpus(Cursor::new(buf.clone())).unwrap();
    assert_eq!(parsed.len(), 500);
    assert!(rejections.is_empty());

    let prepared = prepare(
        Cursor::new(buf),
        &WindowConfig {
            window: 32,
            stride: 32,
        },
    )
    .unwrap();
    assert_eq!(prepared.records.len(), 500);
    assert!(prepared.rejections.is_empty());

    let mut violations = 0usize;
    // The prepared record's answer text must match the original's.
    for (orig, prep) in records.iter().zip(&prepared.records) {
        let orig_answer: String = orig
            .document
            .chars()
            .skip(orig.answer_start_char)
            .take(orig.answer_end_char - orig.answer_start_char)
            .collect();
        let prep_answer: String = prep
            .document
            .chars()
            .skip(prep.answer_start_char)
            .take(prep.answer_end_char - prep.answer_start_char)
            .collect();
        if orig_answer.to_lowercase() != prep_answer {
            violations += 1;
        }
    }

    // Encode and verify the token span decodes to the same answer.
    let tokenized: Vec<_> = prepared
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| tokenize_record(i + 1, r).unwrap())
        .collect();
    let vocab = Vocabulary::build(
        tokenized.iter().flat_map(|t| {
            t.doc
                .iter()
                .chain(t.question.iter())
                .map(|s| s.text.as_str())
        }),
        1,
    );
    let (examples, rejected) = build_examples(&tokenized, &vocab, 32, 12);
    assert!(rejected.is_empty());
    assert_eq!(examples.len(), 500);
    for (ex, prep) in examples.iter().zip(&prepared.records) {
        let answer_tokens = &ex.doc[ex.start..=ex.end];
        let decoded = vocab.decode(answer_tokens);
        let prep_answer: String = prep
            .document
            .chars()
            .skip(prep.answer_start_char)
            .take(prep.answer_end_char - prep.answer_start_char)
            .collect();
        if decoded != prep_answer {
            violations += 1;
        }
    }

    // Split: a seeded shuffle partitions the set without loss or change.
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    let (left, right) = order.split_at(100);
    let mut recombined: Vec<usize> = left.iter().chain(right.iter()).copied().collect();
    recombined.sort_unstable();
    assert_eq!(recombined, (0..examples.len()).collect::<Vec<_>>());

    // Batch: padding and unpadding reproduce every example exactly.
    let batches = make_batches(&examples, 7).unwrap();
    let round_tripped: Vec<Example> = batches.iter().flat_map(|b| b.examples()).collect();
    assert_eq!(round_tripped.len(), examples.len());
    for (a, b) in examples.iter().zip(&round_tripped) {
        if a != b {
            violations += 1;
        }
    }

    assert_eq!(violations, 0, "{violations} answer-identity violations");
    println!("ACCEPTANCE criterion-10: PASS (500 records, 0 violations across load/split/batch)");
}
