//! Acceptance suite. Runs every criterion in turn, prints one PASS/FAIL
//! line each and exits nonzero when any fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sketchfill::checkpoint::Checkpoint;
use sketchfill::corpus::synthetic::{generate, SyntheticConfig};
use sketchfill::corpus::{
    load_dataset, slot_statistics, tokenize, DatasetFormat, DialogueExample, StopWordSet, Vocabulary, EOS, PAD,
};
use sketchfill::eval::{novelty_stats, question_rate, CompositionReport};
use sketchfill::inference::{beam_search, generate_response, FillMode, GenerationConfig};
use sketchfill::lm::{rank, train_lm, CandidateScorer, LmConfig, ScoredCandidate};
use sketchfill::model::decoder::decode_step;
use sketchfill::model::{Dropout, ModelConfig, SketchModel, Variant};
use sketchfill::numeric::{relative_error, Gradients, Graph, Precision};
use sketchfill::trainer::{example_loss, train, TrainConfig, TrainOptions};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_check() -> Outcome {
    let mut words: Vec<String> = ["hi", ",", "what's", "up", "?", "papaya", "bees", "farmer", "grow", "keep", "and", "."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    words.extend((words.len()..46).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_words(&words);
    ensure(vocab.len() == 50, || format!("vocab has {} entries", vocab.len()))?;
    let ex = DialogueExample::new(
        &["i grow papaya", "i keep bees"],
        &["hi , what's up ?"],
        "i grow papaya and keep bees .",
        &StopWordSet::default(),
    );
    let config = ModelConfig { variant: Variant::SfAR, d_emb: 16, d_hid: 16, dropout: 0.0, ..ModelConfig::default() };
    let model = SketchModel::with_precision(config, vocab, 7, None, Precision::F64).map_err(err)?;
    let prep = model.prepare(&ex, None);
    ensure(prep.history.len() == 5, || format!("history has {} tokens", prep.history.len()))?;
    ensure(prep.global_labels.iter().filter(|&&l| l == 1.0).count() >= 2, || "pointer labels missing".into())?;

    let loss_of = |m: &SketchModel| -> f64 {
        let mut g = Graph::new(&m.store);
        let (loss, _) = example_loss(&mut g, m, &prep, 1.0, 1.0, &mut Dropout::inference()).unwrap();
        g.scalar(loss)
    };
    let mut g = Graph::new(&model.store);
    let (loss, _) = example_loss(&mut g, &model, &prep, 1.0, 1.0, &mut Dropout::inference()).map_err(err)?;
    let mut grads = Gradients::new();
    g.backward(loss, &mut grads).map_err(err)?;

    let h = 1e-4;
    let entries: Vec<(usize, usize)> =
        model.store.iter().flat_map(|(id, p)| (0..p.data.len()).map(move |k| (id.index(), k))).collect();
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    let worst = entries
        .par_iter()
        .map(|&(pi, k)| {
            let id = ids[pi];
            let mut m = model.clone();
            m.store.param_mut(id).data[k] += h;
            let up = loss_of(&m);
            m.store.param_mut(id).data[k] -= 2.0 * h;
            let down = loss_of(&m);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |gr| gr[k]);
            (relative_error(analytic, numeric, 1e-7), pi, k)
        })
        .reduce(|| (0.0, 0, 0), |a, b| if b.0 > a.0 { b } else { a });
    let name = &model.store.param(ids[worst.1]).name;
    ensure(worst.0 < 1e-3, || format!("{name}[{}] relative error {:.2e}", worst.2, worst.0))?;
    Ok(format!("{} entries, max relative error {:.2e} ({name})", entries.len(), worst.0))
}

fn memorization() -> Outcome {
    let data: Vec<DialogueExample> = generate(&SyntheticConfig { dialogues: 10, ..Default::default() })[..10].to_vec();
    let config = TrainConfig {
        model: ModelConfig { variant: Variant::SfAR, d_emb: 32, d_hid: 32, dropout: 0.0, ..ModelConfig::default() },
        lr: 1e-2,
        batch_size: 10,
        max_epochs: 500,
        max_steps: Some(500),
        patience: 500,
        ..TrainConfig::default()
    };
    let out = train(&data, &data, &config, &TrainOptions::default()).map_err(err)?;
    let first = out.history.iter().find(|e| e.val_ppl < 1.5).map(|e| e.step);
    ensure(out.best_val_ppl < 1.5, || format!("best training perplexity {:.3}", out.best_val_ppl))?;
    Ok(format!("training perplexity {:.3}, below 1.5 at step {}", out.best_val_ppl, first.unwrap_or(0)))
}

fn variant_ordering() -> Outcome {
    let data = generate(&SyntheticConfig { dialogues: 800, seed: 0, ..Default::default() });
    ensure(data.len() >= 2500, || format!("only {} examples", data.len()))?;
    let (train_set, val_set) = (&data[..2000], &data[2000..2500]);
    let run = |variant| -> Result<f64, String> {
        let config = TrainConfig {
            model: ModelConfig { variant, d_emb: 32, d_hid: 32, dropout: 0.1, ..ModelConfig::default() },
            lr: 1e-2,
            batch_size: 32,
            max_epochs: 40,
            patience: 3,
            seed: 0,
            ..TrainConfig::default()
        };
        Ok(train(train_set, val_set, &config, &TrainOptions::default()).map_err(err)?.best_val_ppl)
    };
    let sf = run(Variant::Sf)?;
    let sfa = run(Variant::SfA)?;
    let sfr = run(Variant::SfR)?;
    ensure(sfa < sf, || format!("SF-A {sfa:.3} is not below SF {sf:.3}"))?;
    ensure(sfr == sf, || format!("SF-R {sfr} differs from SF {sf}"))?;
    Ok(format!("SF {sf:.3}, SF-R {sfr:.3}, SF-A {sfa:.3}"))
}

fn sketch_statistics() -> Outcome {
    match std::env::var_os("PERSONA_CHAT_DIR") {
        Some(dir) => {
            let dir = Path::new(&dir);
            let mut report = Vec::new();
            for (file, expected) in [("train_self_original.txt", 124_298.0 / 1_505_395.0), ("valid_self_original.txt", 8_307.0 / 92_586.0)] {
                let examples = load_dataset(&dir.join(file), DatasetFormat::ParlaiText).map_err(err)?;
                let (slots, total) = slot_statistics(&examples);
                let pct = 100.0 * slots as f64 / total as f64;
                ensure((pct - 100.0 * expected).abs() <= 1.0, || {
                    format!("{file}: {pct:.2}% persona tags, expected {:.2}%", 100.0 * expected)
                })?;
                report.push(format!("{file} {pct:.2}%"));
            }
            Ok(report.join(", "))
        }
        None => {
            let data = generate(&SyntheticConfig { dialogues: 300, seed: 5, ..Default::default() });
            for ex in &data {
                ensure(ex.unsketch() == ex.response, || format!("round trip failed for {:?}", ex.response))?;
                let rare: HashSet<&String> = ex.personas.iter().flat_map(|p| &p.rare_words).collect();
                let expected = ex.response.iter().filter(|t| rare.contains(t)).count();
                ensure(ex.sketch.slot_positions.len() == expected, || format!("slot count for {:?}", ex.response))?;
            }
            let (slots, total) = slot_statistics(&data);
            Ok(format!(
                "dataset not available; synthetic round trip on {} examples ({:.2}% persona tags)",
                data.len(),
                100.0 * slots as f64 / total as f64
            ))
        }
    }
}

/// Every complete output of length at most `depth` with its log
/// probability. Outputs cut at `depth` end with EOS at no extra cost.
#[allow(clippy::too_many_arguments)]
fn enumerate(
    g: &mut Graph<'_>,
    model: &SketchModel,
    enc: &sketchfill::model::EncoderOutput,
    state: sketchfill::model::DecoderState,
    prefix: Vec<usize>,
    lp: f64,
    depth: usize,
    out: &mut Vec<(Vec<usize>, f64)>,
) {
    if prefix.len() == depth {
        let mut full = prefix;
        full.push(EOS);
        out.push((full, lp));
        return;
    }
    let prev = prefix.last().copied().unwrap_or(EOS);
    let step = decode_step(g, model, prev, state, enc, None, &mut Dropout::inference()).unwrap();
    let logp = step.log_dist(g).unwrap();
    for (tok, l) in logp.iter().enumerate().filter(|(t, _)| *t != PAD) {
        let mut next = prefix.clone();
        next.push(tok);
        if tok == EOS {
            out.push((next, lp + l));
        } else {
            enumerate(g, model, enc, step.state, next, lp + l, depth, out);
        }
    }
}

fn beam_oracle() -> Outcome {
    let stop = StopWordSet::default();
    let ex = DialogueExample::new(&["x y"], &["y x x"], "x", &stop);
    let cfg = GenerationConfig { beam_size: 216, max_len: 3, min_len: 0, candidate_cap: 216, ..GenerationConfig::default() };
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let config = ModelConfig { variant: Variant::SfAR, d_emb: 6, d_hid: 6, dropout: 0.0, ..ModelConfig::default() };
        let vocab = Vocabulary::from_words(["x", "y"]);
        ensure(vocab.len() == 6, || "vocabulary size".into())?;
        let mut model = SketchModel::with_precision(config, vocab, seed, None, Precision::F64).map_err(err)?;
        // Larger weights make the output distributions peaked.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for w in &mut model.store.param_mut(id).data {
                *w += rng.random_range(-1.0..1.0);
            }
        }
        let prep = model.prepare(&ex, None);
        let mut g = Graph::new(&model.store);
        let ctx = model
            .encode_context(&mut g, &prep.history, &prep.traits, &prep.bank, &mut Dropout::inference())
            .map_err(err)?;
        let hyps = beam_search(&mut g, &model, &ctx, &cfg).map_err(err)?;
        let mut all = Vec::new();
        enumerate(&mut g, &model, &ctx.enc, ctx.init, Vec::new(), 0.0, 3, &mut all);
        let best = all.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        ensure(hyps[0].tokens == best.0, || format!("seed {seed}: beam {:?}, oracle {:?}", hyps[0].tokens, best.0))?;
        worst = worst.max((hyps[0].log_prob - best.1).abs());
        ensure(worst < 1e-9, || format!("seed {seed}: log probability differs by {worst:.2e}"))?;
    }
    Ok(format!("20 seeds, top hypothesis matches enumeration (max log-prob gap {worst:.1e})"))
}

fn reranker_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words = ["a", "b", "c"];
    for case in 0..100 {
        let n = rng.random_range(1..12);
        let candidates: Vec<ScoredCandidate> = (0..n)
            .map(|_| ScoredCandidate {
                tokens: (0..rng.random_range(1..4)).map(|_| words[rng.random_range(0..3)].to_string()).collect(),
                score: [1.5, 2.0, 2.25, 3.0][rng.random_range(0..4)],
                beam: rng.random_range(0..3),
                fill: Vec::new(),
            })
            .collect();
        let mut best = 0;
        for (i, c) in candidates.iter().enumerate().skip(1) {
            let b = &candidates[best];
            let better = c.score < b.score
                || (c.score == b.score && (c.beam < b.beam || (c.beam == b.beam && c.tokens < b.tokens)));
            if better {
                best = i;
            }
        }
        let got = rank(&candidates).map_err(err)?;
        let same = candidates[got].score == candidates[best].score
            && candidates[got].beam == candidates[best].beam
            && candidates[got].tokens == candidates[best].tokens;
        ensure(same, || format!("case {case}: rank chose {got}, oracle {best}"))?;
    }
    Ok("100 randomized candidate sets".into())
}

fn novelty_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let words = ["i", "like", "papaya", "bees", ".", "?", "you"];
    let corpus = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<String>> {
        (0..n)
            .map(|_| (0..rng.random_range(0..7)).map(|_| words[rng.random_range(0..words.len())].to_string()).collect())
            .collect()
    };
    for case in 0..50 {
        let (nt, ng) = (rng.random_range(0..8), rng.random_range(1..8));
        let training = corpus(&mut rng, nt);
        let generated = corpus(&mut rng, ng);
        let report = novelty_stats(&generated, &training).map_err(err)?;
        let got = [report.novel_unigram, report.novel_bigram, report.novel_trigram];
        for n in 1..=3 {
            let (mut novel, mut total) = (0usize, 0usize);
            for r in &generated {
                for i in 0..r.len().saturating_sub(n - 1) {
                    total += 1;
                    let gram = &r[i..i + n];
                    let seen = training.iter().any(|t| (0..t.len().saturating_sub(n - 1)).any(|j| &t[j..j + n] == gram));
                    novel += usize::from(!seen);
                }
            }
            let expected = if total == 0 { 0.0 } else { 100.0 * novel as f64 / total as f64 };
            ensure(got[n - 1] == expected, || format!("case {case} n={n}: {} vs {expected}", got[n - 1]))?;
        }
        let novel_resp = generated.iter().filter(|r| !training.iter().any(|t| t == *r)).count();
        let expected = 100.0 * novel_resp as f64 / generated.len() as f64;
        ensure(report.novel_response == expected, || format!("case {case}: response novelty"))?;
    }
    Ok("50 randomized corpora".into())
}

fn question_rate_check() -> Outcome {
    let utterances = [
        "what is your favorite papaya ?",
        "i am a bee farmer .",
        "how are you ?",
        "do you have any hobbies ?",
        "i love papaya food .",
        "george . what is your favorite name ?",
    ];
    let responses: Vec<Vec<String>> = utterances.iter().map(|u| tokenize(u)).collect();
    let report = question_rate(&responses);
    let expected = CompositionReport { questions: 4, statement_and_question: 1, total: 6 };
    ensure(report == expected, || format!("{report:?}"))?;
    Ok("4 questions, 1 statement+question of 6".into())
}

fn determinism_and_round_trip() -> Outcome {
    let data = generate(&SyntheticConfig { dialogues: 30, seed: 9, ..Default::default() });
    let (train_set, val_set) = data.split_at(data.len() - 20);
    let config = TrainConfig {
        model: ModelConfig { variant: Variant::SfAR, d_emb: 16, d_hid: 16, dropout: 0.2, ..ModelConfig::default() },
        lr: 1e-2,
        batch_size: 8,
        max_epochs: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train(train_set, val_set, &config, &TrainOptions::default()).map_err(err)?;
    let b = train(train_set, val_set, &config, &TrainOptions::default()).map_err(err)?;
    ensure(a.step_losses == b.step_losses, || "loss curves differ".into())?;
    ensure(a.model.store == b.model.store, || "weights differ".into())?;

    let responses: Vec<Vec<String>> = train_set.iter().map(|e| e.response.clone()).collect();
    let lm_cfg = LmConfig { dim: 8, max_epochs: 1, batch_size: 8, ..LmConfig::default() };
    let lm = train_lm(&responses, &a.model.vocab, &lm_cfg).map_err(err)?.model;

    let dir = tempfile::tempdir().map_err(err)?;
    let (ck_path, lm_path) = (dir.path().join("model.ck"), dir.path().join("lm.ck"));
    a.checkpoint.save(&ck_path).map_err(err)?;
    Checkpoint::from_lm(&lm, lm_cfg).save(&lm_path).map_err(err)?;
    let model2 = Checkpoint::load(&ck_path).and_then(|c| c.to_model()).map_err(err)?;
    let lm2 = Checkpoint::load(&lm_path).and_then(|c| c.to_lm()).map_err(err)?;

    let cfg = GenerationConfig { fill_mode: FillMode::Rerank, max_len: 15, ..GenerationConfig::default() };
    for ex in val_set.iter().take(5) {
        let r1 = generate_response(&a.model, Some(&lm as &dyn CandidateScorer), &ex.personas, &ex.turns, &cfg)
            .map_err(err)?;
        let r2 = generate_response(&model2, Some(&lm2 as &dyn CandidateScorer), &ex.personas, &ex.turns, &cfg)
            .map_err(err)?;
        ensure(r1.response == r2.response, || format!("{:?} vs {:?}", r1.response, r2.response))?;
        ensure(r1.debug.candidates == r2.debug.candidates, || "candidate scores differ".into())?;
    }
    Ok(format!("{} identical step losses; 5 replies identical after reload", a.step_losses.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_check),
        ("memorization", memorization),
        ("variant perplexity ordering", variant_ordering),
        ("sketchification statistics", sketch_statistics),
        ("beam search exactness", beam_oracle),
        ("reranker contract", reranker_contract),
        ("novelty oracle", novelty_oracle),
        ("question-rate classifier", question_rate_check),
        ("determinism and checkpoint round trip", determinism_and_round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
