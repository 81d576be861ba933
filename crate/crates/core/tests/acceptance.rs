//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Set `ACCEPTANCE_ONLY=<substring>` to run a subset.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_best, RandomToy};
use refgen::baselines::only_names;
use refgen::corpus::vocab::{BOS_ID, SPECIALS};
use refgen::corpus::{generate_synthetic_corpus, generate_with_min_instances, Corpus, Split, Vocabulary};
use refgen::evaluation::{
    corpus_bleu, evaluate, modified_precision, string_edit_distance, FrequencyPredictor, OnlyNamesPredictor,
    PronounLexicon, DEFAULT_PRONOUNS,
};
use refgen::inference::{beam_search, greedy_decode, length_penalty, DecodeConfig, ModelPredictor};
use refgen::model::{DecoderVariant, IndexedInstance, ModelConfig, RefexModel};
use refgen::numerics::{Graph, ParamId};
use refgen::training::{train, train_model, TrainConfig};

type Check = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = fn() -> Check;

fn word_vocab(total: usize) -> Vocabulary {
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend((0..total - SPECIALS.len()).map(|i| format!("w{i:02}")));
    Vocabulary::from_tokens(tokens).unwrap()
}

fn lexicon() -> PronounLexicon {
    PronounLexicon::new(DEFAULT_PRONOUNS.iter().copied()).unwrap()
}

fn randomize(m: &mut RefexModel, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = m.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        for x in m.store_mut().value_mut(id).data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let vocab = word_vocab(30);
    let inst = IndexedInstance {
        pre: vec![4, 9, 17, 5, 22],
        entity: 12,
        pos: vec![6, 28, 11],
        target: vec![12, 20],
    };
    let loss = |m: &RefexModel| -> f64 {
        let mut g = Graph::new(m.store());
        let (l, _) = m.sequence_nll(&mut g, &inst, &mut None).unwrap();
        g.value(l).data()[0]
    };
    let eps = 1e-5;
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0;
    for variant in DecoderVariant::ALL {
        let cfg = ModelConfig::with_dims(variant, vocab.len(), 8, 16);
        let mut m = RefexModel::new(cfg, vocab.clone(), 3)?;
        randomize(&mut m, 17, 0.5);
        let mut g = Graph::new(m.store());
        let (l, _) = m.sequence_nll(&mut g, &inst, &mut None)?;
        let grads = g.backward(l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut probe = m.clone();
        for (id, p) in m.store().iter() {
            let analytic = grads
                .get(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.value.len()]);
            let n = p.value.len();
            let picks: Vec<usize> = if n <= 200 {
                (0..n).collect()
            } else {
                (0..200).map(|_| rng.gen_range(0..n)).collect()
            };
            let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
            for i in picks {
                let orig = probe.store().value(id).data()[i];
                probe.store_mut().value_mut(id).data_mut()[i] = orig + eps;
                let up = loss(&probe);
                probe.store_mut().value_mut(id).data_mut()[i] = orig - eps;
                let down = loss(&probe);
                probe.store_mut().value_mut(id).data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                diff += (numeric - analytic[i]).powi(2);
                na += analytic[i].powi(2);
                nn += numeric.powi(2);
                checked += 1;
            }
            let err = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(f64::MIN_POSITIVE);
            if err > worst.0 {
                worst = (err, format!("{variant} {}", p.name));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst.0 < 1e-4 && secs < 60.0,
        format!(
            "{checked} entries, worst per-tensor relative error {:.2e} ({}), {secs:.1}s (limits 1e-4, 60s)",
            worst.0, worst.1
        ),
    ))
}

fn attention_soundness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut vectors, mut worst, mut negative) = (0usize, 0.0f64, 0usize);
    for config in 0..100 {
        let variant = if config % 2 == 0 {
            DecoderVariant::CAtt
        } else {
            DecoderVariant::HierAtt
        };
        let vocab = word_vocab(rng.gen_range(8..30));
        let v = vocab.len();
        let cfg = ModelConfig::with_dims(variant, v, rng.gen_range(2..12), rng.gen_range(2..12));
        let m = RefexModel::new(cfg, vocab, rng.gen())?;
        let mut tokens = |n: usize| (0..n).map(|_| rng.gen_range(4..v)).collect::<Vec<_>>();
        let inst = IndexedInstance {
            pre: tokens(config % 7),
            entity: tokens(1)[0],
            pos: tokens((config / 7) % 5),
            target: Vec::new(),
        };
        let prevs = tokens(5);
        let mut g = Graph::new(m.store());
        let enc = m.encode_instance(&mut g, &inst, &mut None)?;
        let mut state = m.initial_state(&mut g)?;
        for prev in std::iter::once(BOS_ID).chain(prevs) {
            let (next, _, trace) = m.decoder_step(&mut g, &state, &enc, prev, &mut None)?;
            let weights = [trace.alpha_pre, trace.alpha_pos, trace.beta.map(|b| b.to_vec())];
            for w in weights.into_iter().flatten() {
                vectors += 1;
                worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
                negative += w.iter().filter(|&&x| x < 0.0).count();
            }
            state = next;
        }
    }
    Ok((
        worst <= 1e-12 && negative == 0 && vectors > 0,
        format!("{vectors} weight vectors over 100 configurations, max |sum - 1| = {worst:.1e}, {negative} negative weights"),
    ))
}

fn decoding_oracle() -> Check {
    let start = Instant::now();
    let (mut full_ok, mut greedy_ok) = (0, 0);
    for seed in 0..50u64 {
        let mut toy = RandomToy {
            n: 2 + (seed % 3) as usize,
            seed: 1000 + seed,
            sharpness: 0.5 + (seed % 5) as f64,
        };
        let max_len = 1 + (seed % 4) as usize;
        let width = toy.n.pow(max_len as u32);
        let (oracle, _) = brute_force_best(&mut toy, max_len, 0.6);
        let full = beam_search(
            &mut toy,
            &DecodeConfig {
                beam_size: width,
                max_len,
                alpha: 0.6,
            },
        )?;
        full_ok += usize::from(full == oracle);
        let one = beam_search(
            &mut toy,
            &DecodeConfig {
                beam_size: 1,
                max_len,
                alpha: 0.6,
            },
        )?;
        greedy_ok += usize::from(one == greedy_decode(&mut toy, max_len)?);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        full_ok == 50 && greedy_ok == 50 && secs < 30.0,
        format!(
            "full-width beam = brute force on {full_ok}/50, beam 1 = greedy on {greedy_ok}/50, {secs:.2}s (limit 30s)"
        ),
    ))
}

fn length_penalty_values() -> Check {
    let one = length_penalty(1, 0.6);
    let seven = length_penalty(7, 0.6);
    let err = (seven - 2f64.powf(0.6)).abs();
    Ok((
        one == 1.0 && err < 1e-9,
        format!("lp(1, 0.6) = {one}, |lp(7, 0.6) - 2^0.6| = {err:.1e}"),
    ))
}

/// Plain recursive edit distance over chars.
fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) if x == y => levenshtein_oracle(ra, rb),
        ([_, ra @ ..], [_, rb @ ..]) => {
            1 + levenshtein_oracle(ra, b)
                .min(levenshtein_oracle(a, rb))
                .min(levenshtein_oracle(ra, rb))
        }
    }
}

fn metric_oracles() -> Check {
    let mut strings = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..6 {
        frontier = frontier
            .iter()
            .flat_map(|s| ['a', 'b', 'c'].map(|c| format!("{s}{c}")))
            .collect();
        strings.extend(frontier.iter().cloned());
    }
    let chars: Vec<Vec<char>> = strings.iter().map(|s| s.chars().collect()).collect();
    let mut mismatches = 0usize;
    for (i, a) in strings.iter().enumerate() {
        for (j, b) in strings.iter().enumerate() {
            if string_edit_distance(a, b) != levenshtein_oracle(&chars[i], &chars[j]) {
                mismatches += 1;
            }
        }
    }
    let pairs = strings.len() * strings.len();

    let sents: Vec<Vec<&str>> = vec![
        "the cat sat on the mat".split(' ').collect(),
        "alan shepard was born in new hampshire".split(' ').collect(),
    ];
    let self_bleu = corpus_bleu(&sents, &sents)?;

    // Seven copies of "the" against a reference holding it twice: 2/7.
    let hyp: Vec<&str> = "the the the the the the the".split(' ').collect();
    let reference: Vec<&str> = "the cat is on the mat".split(' ').collect();
    let clipped = modified_precision(&hyp, &[&reference[..]], 1);

    Ok((
        mismatches == 0 && self_bleu == 100.0 && clipped == (2, 7),
        format!(
            "Levenshtein = oracle on {}/{pairs} pairs, BLEU(h,h) = {self_bleu}, clipped unigram precision {}/{}",
            pairs - mismatches,
            clipped.0,
            clipped.1
        ),
    ))
}

/// The first 50 instances of a synthetic corpus, used as both train and dev.
fn memorization_corpus() -> refgen::Result<Corpus> {
    let full = generate_with_min_instances(11, 4, 50)?;
    let fifty: Vec<_> = full.instances().take(50).cloned().collect();
    Ok(Corpus {
        train: fifty.clone(),
        dev: fifty,
        test: Vec::new(),
        templates: full.templates,
    })
}

fn memorization() -> Check {
    let corpus = memorization_corpus()?;
    let vocab = Vocabulary::build(&corpus, 1)?;
    let tc = TrainConfig {
        batch_size: 1,
        max_epochs: 60,
        patience: 60,
        ..TrainConfig::default()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for variant in DecoderVariant::ALL {
        let start = Instant::now();
        let mut cfg = ModelConfig::with_dims(variant, vocab.len(), 32, 64);
        cfg.dropout_p = 0.0;
        let model = RefexModel::new(cfg, vocab.clone(), 1)?;
        let out = train_model(model, &tc, &corpus)?;
        let first = out.log.records.iter().find(|r| r.dev_accuracy == 1.0).map(|r| r.epoch);
        let secs = start.elapsed().as_secs_f64();
        ok &= first.is_some() && secs < 300.0;
        parts.push(match first {
            Some(e) => format!("{variant} 1.0 at epoch {e} ({secs:.0}s)"),
            None => format!("{variant} best {:.2} ({secs:.0}s)", out.log.best_dev_accuracy),
        });
    }
    Ok((
        ok,
        format!(
            "50 instances, dev = train; {} (limit 60 epochs, 300s each)",
            parts.join(", ")
        ),
    ))
}

fn salience() -> Check {
    let start = Instant::now();
    let corpus = generate_with_min_instances(7, 6, 2000)?;
    let vocab = Vocabulary::build(&corpus, 1)?;
    let mut cfg = ModelConfig::with_dims(DecoderVariant::CAtt, vocab.len(), 32, 64);
    cfg.dropout_p = SALIENCE_DROPOUT;
    let tc = TrainConfig {
        batch_size: SALIENCE_BATCH,
        max_epochs: SALIENCE_EPOCHS,
        patience: SALIENCE_EPOCHS,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &tc, &corpus)?;
    let lex = lexicon();
    let mut catt = ModelPredictor {
        model: &out.model,
        decode: DecodeConfig::default(),
    };
    let (report, _) = evaluate(&mut catt, &corpus, Split::Test, &lex)?;
    let (freq, _) = evaluate(&mut FrequencyPredictor::fit(&corpus, &lex), &corpus, Split::Test, &lex)?;
    let (names, _) = evaluate(&mut OnlyNamesPredictor, &corpus, Split::Test, &lex)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        report.pronoun_f1 >= 0.90 && report.pronoun_f1 >= freq.pronoun_f1 + 0.05 && secs < 1200.0,
        format!(
            "{} instances, {} test; pronoun F1 CAtt {:.4} vs frequency {:.4} (refex accuracy CAtt {:.4}, frequency {:.4}, OnlyNames {:.4}); best epoch {}, {secs:.0}s (limits F1 >= 0.90, margin 0.05, 1200s)",
            corpus.len(),
            corpus.test.len(),
            report.pronoun_f1,
            freq.pronoun_f1,
            report.refex_accuracy,
            freq.refex_accuracy,
            names.refex_accuracy,
            out.log.best_epoch
        ),
    ))
}

const SALIENCE_DROPOUT: f64 = 0.2;
const SALIENCE_BATCH: usize = 10;
const SALIENCE_EPOCHS: usize = 60;

fn baseline_determinism() -> Check {
    let name = only_names("Alan_Shepard").join(" ");
    let lex = lexicon();
    let mut recalls = Vec::new();
    for seed in 0..8u64 {
        let corpus = generate_synthetic_corpus(seed, 60, 2 + seed as usize)?;
        for split in Split::ALL {
            if corpus.split(split).is_empty() {
                continue;
            }
            let (r, _) = evaluate(&mut OnlyNamesPredictor, &corpus, split, &lex)?;
            recalls.push(r.pronoun_recall);
        }
    }
    let all_zero = recalls.iter().all(|&r| r == 0.0);
    Ok((
        name == "alan shepard" && all_zero,
        format!(
            "only_names(Alan_Shepard) = \"{name}\"; OnlyNames pronoun recall 0 on {}/{} splits",
            recalls.iter().filter(|&&r| r == 0.0).count(),
            recalls.len()
        ),
    ))
}

fn reproducibility() -> Check {
    let corpus = generate_synthetic_corpus(5, 40, 5)?;
    let vocab = Vocabulary::build(&corpus, 1)?;
    let lex = lexicon();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let cfg = ModelConfig::with_dims(DecoderVariant::HierAtt, vocab.len(), 16, 16);
        let tc = TrainConfig {
            batch_size: 8,
            max_epochs: 3,
            patience: 3,
            seed: 42,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tc, &corpus)?;
        let mut p = ModelPredictor {
            model: &out.model,
            decode: DecodeConfig::with_beam(3),
        };
        let (report, preds) = evaluate(&mut p, &corpus, Split::Test, &lex)?;
        runs.push((
            out.model.to_bytes()?,
            serde_json::to_vec(&report)?,
            serde_json::to_vec(&preds)?,
            out.log.to_csv(),
        ));
    }
    let same = runs[0] == runs[1];
    Ok((
        same,
        format!(
            "two seeded runs: checkpoint {} bytes, report, predictions and log {}",
            runs[0].0.len(),
            if same { "identical" } else { "differ" }
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("attention soundness", attention_soundness),
        ("decoding oracle", decoding_oracle),
        ("length penalty", length_penalty_values),
        ("metric oracles", metric_oracles),
        ("memorization", memorization),
        ("salience learning", salience),
        ("baseline determinism", baseline_determinism),
        ("reproducibility", reproducibility),
    ];
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let (mut passed, mut failed) = (0, 0);
    for (name, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
        if pass {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
