//! Compares the joint model against a two-model pipeline on held-out
//! synthetic documents. Both routes get the same total parameter budget:
//! the joint model spends all of it on one model that generates questions
//! and extracts spans; the pipeline splits it across an isolated
//! question-generation model and an isolated span model. Span exact-match
//! is measured with gold questions, the standard way to score an answering
//! stage.
//!
//! ```text
//! cargo run --example compat_demo
//! ```

use std::collections::HashSet;
use std::time::Instant;

use onestop::data::{build_examples, tokenize_record, Vocabulary};
use onestop::model::{ModelConfig, OneStopModel};
use onestop::synthetic::generate_records;
use onestop::training::{evaluate, run_schedule, Stage, StageSpec, TrainConfig};

fn main() {
    let t0 = Instant::now();
    let mut records = generate_records(500, 31);
    let mut seen = HashSet::new();
    records.retain(|r| seen.insert(r.document.clone()));
    records.truncate(160);
    let (train_records, heldout_records) = records.split_at(120);

    let tokenize_all = |records: &[onestop::data::RawRecord]| {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| tokenize_record(i + 1, r).unwrap())
            .collect::<Vec<_>>()
    };
    let train_tok = tokenize_all(train_records);
    let held_tok = tokenize_all(heldout_records);
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

    // Joint model: the full budget in one model.
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
    // Pipeline models: roughly half the budget each, so the pair together
    // stays within the joint model's parameter count.
    let pipe_config = ModelConfig {
        dim: 44,
        ffn_dim: 176,
        ..joint_config.clone()
    };

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

    {
        let joint = OneStopModel::<f32>::new(joint_config.clone(), 0).unwrap();
        let pipe = OneStopModel::<f32>::new(pipe_config.clone(), 0).unwrap();
        println!(
            "params: joint {}  pipeline 2 x {} = {}  (ratio {:.3})",
            joint.params.numel(),
            pipe.params.numel(),
            2 * pipe.params.numel(),
            2.0 * pipe.params.numel() as f64 / joint.params.numel() as f64,
        );
    }

    let mut joint_ems = Vec::new();
    let mut pipe_ems = Vec::new();
    for seed in [1u64, 2, 3] {
        let t_seed = Instant::now();
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
        // The pipeline's two single-task models, trained with the same seed
        // and the same total epoch count each.
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
        let qg_val = evaluate(&qg, &held, 1.0).unwrap().phi_lm;
        joint_ems.push(em_joint);
        pipe_ems.push(em_pipe);
        println!(
            "seed {seed}: joint em {em_joint:.3}  pipeline em {em_pipe:.3}  delta {:+.3}  (qg phi_lm {qg_val:.3}, {:.0?})",
            em_joint - em_pipe,
            t_seed.elapsed()
        );
    }
    joint_ems.sort_by(f64::total_cmp);
    pipe_ems.sort_by(f64::total_cmp);
    println!(
        "median: joint {:.3}  pipeline {:.3}  margin {:+.3}  (total {:.0?})",
        joint_ems[1],
        pipe_ems[1],
        joint_ems[1] - pipe_ems[1],
        t0.elapsed()
    );
}
