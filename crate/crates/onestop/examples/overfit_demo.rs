//! Overfits the toy model on a small synthetic corpus and reports how well
//! it reproduces the training questions and spans. Useful for sanity checks
//! and hyperparameter calibration:
//!
//! ```text
//! cargo run --example overfit_demo
//! ```

use std::time::Instant;

use onestop::data::{build_examples, tokenize_record, Vocabulary};
use onestop::inference::{generate_question, DecodeMode};
use onestop::model::{ModelConfig, OneStopModel};
use onestop::synthetic::generate_records;
use onestop::training::{evaluate, run_schedule, Stage, StageSpec, TrainConfig, TrainEvent};

fn main() {
    let t0 = Instant::now();
    // Unique documents so greedy reproduction is well-posed.
    let mut records = generate_records(120, 11);
    let mut seen = std::collections::HashSet::new();
    records.retain(|r| seen.insert(r.document.clone()));
    records.truncate(50);
    assert_eq!(records.len(), 50);

    let tokenized: Vec<_> = records
        .iter()
        .enumerate()
        .map(|(i, r)| tokenize_record(i + 1, r).expect("synthetic records are clean"))
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
    println!(
        "corpus: {} examples, vocab {} tokens",
        examples.len(),
        vocab.len()
    );

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
    let mut steps = 0usize;
    let mut last_print = Instant::now();
    run_schedule(&mut model, &examples, &[], &cfg, None, &mut |e| {
        if let TrainEvent::Step(s) = e {
            steps = s.global_step;
            if last_print.elapsed().as_secs() >= 5 {
                println!(
                    "step {:>4}  phi_total {:.4}  phi_lm {:.4}  span {:.4}",
                    s.global_step,
                    s.loss.phi_total,
                    s.loss.phi_lm,
                    s.loss.phi_start + s.loss.phi_end
                );
                last_print = Instant::now();
            }
        }
    })
    .unwrap();

    let val = evaluate(&model, &examples, 0.5).unwrap();
    let mut reproduced = 0usize;
    for ex in &examples {
        let enc = model.encode_doc(&ex.doc, ex.doc.len()).unwrap();
        let gen = generate_question(&model, &enc, DecodeMode::Greedy).unwrap();
        if gen.tokens == ex.question {
            reproduced += 1;
        }
    }
    println!(
        "steps {}  span EM {:.3}  token F1 {:.3}  question reproduction {}/{}  ({:.1?} total)",
        steps,
        val.exact_match,
        val.token_f1,
        reproduced,
        examples.len(),
        t0.elapsed()
    );
}
