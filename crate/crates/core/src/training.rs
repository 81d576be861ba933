//! Mini-batch training with Adadelta, greedy dev-accuracy early stopping and
//! the dropout x beam grid search.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RefexInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::inference::{decode_instance, DecodeConfig};
use crate::model::{IndexedInstance, ModelConfig, RefexModel};
use crate::numerics::{adadelta_step, AdadeltaConfig, Gradients, Graph, ParameterStore};

/// Batches are drawn from pools of this many batches sorted by context length.
const POOL_BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once this many epochs have passed since the best one.
    pub patience: usize,
    pub dropout_grid: Vec<f64>,
    pub beam_grid: Vec<usize>,
    pub seed: u64,
    /// Decoding length cap for dev evaluation.
    pub max_len: usize,
    pub rho: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 40,
            max_epochs: 60,
            patience: 20,
            dropout_grid: vec![0.2, 0.3],
            beam_grid: vec![1, 5],
            seed: 0,
            max_len: 30,
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_len == 0 {
            return bad("batch_size, max_epochs and max_len must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if self.dropout_grid.is_empty() || self.beam_grid.is_empty() {
            return bad("dropout_grid and beam_grid must be non-empty".into());
        }
        if let Some(p) = self.dropout_grid.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("dropout {p} not in [0,1)"));
        }
        if self.beam_grid.contains(&0) {
            return bad("beam sizes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 {
            return bad("Adadelta needs rho in [0,1) and eps > 0".into());
        }
        Ok(())
    }

    pub fn adadelta(&self) -> AdadeltaConfig {
        AdadeltaConfig {
            rho: self.rho,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

impl TrainLog {
    /// `epoch,train_loss,dev_accuracy`; wall time is left out so the file is
    /// reproducible.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,dev_accuracy\n");
        for r in &self.records {
            writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.dev_accuracy).unwrap();
        }
        s
    }

    /// Equality ignoring wall time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.best_epoch == other.best_epoch
            && self.best_dev_accuracy == other.best_dev_accuracy
            && self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.epoch == b.epoch && a.train_loss == b.train_loss && a.dev_accuracy == b.dev_accuracy)
    }

    pub fn total_wall_time_secs(&self) -> f64 {
        self.records.iter().map(|r| r.wall_time_secs).sum()
    }
}

/// Token-averaged teacher-forced NLL of a batch and its gradient. Each
/// target is `gold ++ [EOS, EOS]`. Dropout is active iff `rng` is given.
pub fn nll_loss(
    model: &RefexModel,
    batch: &[IndexedInstance],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("loss over an empty batch"));
    }
    let total_tokens: usize = batch.iter().map(|i| i.target.len() + 2).sum();
    let scale = 1.0 / total_tokens as f64;
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for inst in batch {
        let mut g = Graph::new(model.store());
        let (nll, _) = model.sequence_nll(&mut g, inst, &mut rng.as_deref_mut())?;
        let l = g.scale(nll, scale)?;
        loss += g.value(l).data()[0];
        g.backward_into(l, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Mean loss without dropout or gradients.
pub fn evaluate_loss(model: &RefexModel, instances: &[IndexedInstance]) -> Result<f64> {
    let total: usize = instances.iter().map(|i| i.target.len() + 2).sum();
    let mut sum = 0.0;
    for inst in instances {
        let mut g = Graph::new(model.store());
        let (nll, _) = model.sequence_nll(&mut g, inst, &mut None)?;
        sum += g.value(nll).data()[0];
    }
    Ok(sum / total as f64)
}

/// Exact-match accuracy of decoded refexes.
pub fn split_accuracy(model: &RefexModel, instances: &[RefexInstance], decode: &DecodeConfig) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("accuracy over an empty split"));
    }
    let mut hits = 0usize;
    for inst in instances {
        if decode_instance(model, inst, decode)? == inst.gold_refex {
            hits += 1;
        }
    }
    Ok(hits as f64 / instances.len() as f64)
}

/// Shuffle, sort pools of batches by context length, chunk, shuffle batches.
fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(batch_size * POOL_BATCHES) {
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

pub struct TrainOutcome {
    /// Parameters of the best dev-accuracy epoch.
    pub model: RefexModel,
    pub log: TrainLog,
}

/// Builds the vocabulary, initializes a model and trains it.
pub fn train(model_cfg: &ModelConfig, train_cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    let vocab = Vocabulary::build(corpus, model_cfg.min_count)?;
    let model = RefexModel::new(*model_cfg, vocab, train_cfg.seed)?;
    train_model(model, train_cfg, corpus)
}

/// Trains an initialized model with early stopping on greedy dev accuracy.
pub fn train_model(mut model: RefexModel, cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if corpus.dev.is_empty() {
        return Err(Error::Empty("dev split"));
    }
    let train: Vec<IndexedInstance> = corpus.train.iter().map(|i| model.index_instance(i)).collect();
    let lengths: Vec<usize> = train.iter().map(|i| i.pre.len() + i.pos.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let greedy = DecodeConfig {
        beam_size: 1,
        max_len: cfg.max_len,
        alpha: 0.6,
    };
    let adadelta = cfg.adadelta();
    let mut log = TrainLog {
        best_dev_accuracy: f64::NEG_INFINITY,
        ..TrainLog::default()
    };
    let mut best: Option<ParameterStore> = None;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut weighted_loss = 0.0;
        for batch in make_batches(&lengths, cfg.batch_size, &mut rng) {
            let items: Vec<IndexedInstance> = batch.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = nll_loss(&model, &items, Some(&mut rng))?;
            weighted_loss += loss * items.len() as f64;
            let store = model.store_mut();
            store.zero_grads();
            store.accumulate(&grads);
            adadelta_step(store, adadelta);
        }
        let dev_accuracy = split_accuracy(&model, &corpus.dev, &greedy)?;
        let record = EpochRecord {
            epoch,
            train_loss: weighted_loss / train.len() as f64,
            dev_accuracy,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, dev accuracy {:.4}",
            record.train_loss,
            record.dev_accuracy
        );
        log.records.push(record);
        if dev_accuracy > log.best_dev_accuracy {
            log.best_dev_accuracy = dev_accuracy;
            log.best_epoch = epoch;
            best = Some(model.store().clone());
        } else if epoch - log.best_epoch > cfg.patience {
            break;
        }
    }
    *model.store_mut() = best.expect("at least one epoch");
    Ok(TrainOutcome { model, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub dropout_p: f64,
    pub beam_size: usize,
    pub dev_accuracy: f64,
}

pub struct GridOutcome {
    pub dropout_p: f64,
    pub beam_size: usize,
    pub dev_accuracy: f64,
    pub model: RefexModel,
    pub cells: Vec<GridCell>,
    /// One training log per dropout value, in grid order.
    pub logs: Vec<(f64, TrainLog)>,
}

/// Trains once per dropout value and scores every beam size on dev. Ties go
/// to the smaller dropout, then the smaller beam.
pub fn grid_select(model_cfg: &ModelConfig, train_cfg: &TrainConfig, corpus: &Corpus) -> Result<GridOutcome> {
    train_cfg.validate()?;
    let mut dropouts = train_cfg.dropout_grid.clone();
    dropouts.sort_by(f64::total_cmp);
    dropouts.dedup();
    let mut beams = train_cfg.beam_grid.clone();
    beams.sort_unstable();
    beams.dedup();

    let mut cells = Vec::new();
    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, f64, RefexModel)> = None;
    for &p in &dropouts {
        let mut mc = *model_cfg;
        mc.dropout_p = p;
        let outcome = train(&mc, train_cfg, corpus)?;
        logs.push((p, outcome.log));
        let mut winner_here: Option<(usize, f64)> = None;
        for &b in &beams {
            let decode = DecodeConfig {
                beam_size: b,
                max_len: train_cfg.max_len,
                alpha: 0.6,
            };
            let acc = split_accuracy(&outcome.model, &corpus.dev, &decode)?;
            cells.push(GridCell {
                dropout_p: p,
                beam_size: b,
                dev_accuracy: acc,
            });
            if winner_here.is_none_or(|(_, a)| acc > a) {
                winner_here = Some((b, acc));
            }
        }
        let (b, acc) = winner_here.expect("non-empty beam grid");
        if best.as_ref().is_none_or(|(_, _, a, _)| acc > *a) {
            best = Some((p, b, acc, outcome.model));
        }
    }
    let (dropout_p, beam_size, dev_accuracy, model) = best.expect("non-empty dropout grid");
    Ok(GridOutcome {
        dropout_p,
        beam_size,
        dev_accuracy,
        model,
        cells,
        logs,
    })
}
