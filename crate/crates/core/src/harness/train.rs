//! Mini-batch training loops for both model families.
//!
//! Each batch is cut into a fixed number of shards whose gradients are
//! computed under the execution policy and summed in shard order, so the
//! parallel and sequential paths produce identical parameters.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierConfig, ClassifierModel, HeadKind, SeqInput};
use crate::data::prep::EncodedInstance;
use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, checkpoint, lr_schedule, AdamConfig, AdamState, Grads, Graph, ParamStore,
};
use crate::parallel::{self, Exec};
use crate::seq2res::{Seq2ResConfig, Seq2ResModel};

use super::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Halve the learning rate every this many epochs; 0 keeps it constant.
    pub lr_half_every: usize,
    pub batch: usize,
    /// Gradient shards per batch.
    pub shards: usize,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn seq2res() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            lr_half_every: 80,
            batch: 100,
            shards: 4,
            checkpoint_every: 20,
        }
    }

    pub fn classifier() -> Self {
        Self {
            epochs: 100,
            lr: 1e-4,
            lr_half_every: 0,
            batch: 100,
            shards: 4,
            checkpoint_every: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.shards == 0 {
            return Err(Error::Config("batch and shards must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_half_every == 0 {
            self.lr
        } else {
            lr_schedule(self.lr, epoch, self.lr_half_every)
        }
    }
}

/// Where periodic and final checkpoints go: `<dir>/<prefix>-epochNNNN.ckpt`
/// and `<dir>/<prefix>-final.ckpt`.
#[derive(Clone, Copy, Debug)]
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub prefix: &'a str,
}

impl CheckpointSink<'_> {
    fn write(&self, store: &ParamStore, tag: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(self.dir)?;
        let path = self.dir.join(format!("{}-{tag}.ckpt", self.prefix));
        checkpoint::save(store, &path)?;
        Ok(path)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Example-weighted mean training loss of every epoch.
    pub epoch_loss: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

pub trait Trainable: Sync {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

impl Trainable for Seq2ResModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl Trainable for ClassifierModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

/// One shard: mean loss over its examples, the gradient of that mean, and
/// the example weight (tokens or instances) used to combine shards.
pub type ShardOutput = (f64, Grads, usize);

/// Generic loop: seeded shuffle per epoch, Adam with the step schedule,
/// sharded gradients, NaN guard, periodic checkpoints.
pub fn fit<M, F>(
    model: &mut M,
    n: usize,
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
    sink: Option<CheckpointSink>,
    shard: F,
) -> Result<TrainLog>
where
    M: Trainable,
    F: Fn(&M, &[usize], &mut ChaCha8Rng) -> Result<ShardOutput> + Sync,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(
        model.store(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0usize);
        for (bi, batch) in order.chunks(cfg.batch).enumerate() {
            let per = batch.len().div_ceil(cfg.shards);
            let jobs: Vec<(&[usize], u64)> = batch.chunks(per).map(|c| (c, rng.gen())).collect();
            let outs = parallel::map(exec, &jobs, |(idx, s)| {
                shard(&*model, idx, &mut ChaCha8Rng::seed_from_u64(*s))
            });
            let mut grads = Grads::zeros_like(model.store());
            let mut batch_loss = 0.0;
            let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
            let total: usize = outs.iter().map(|o| o.2).sum();
            for (loss, mut g, w) in outs {
                let frac = w as f64 / total as f64;
                g.scale(frac);
                grads.add_assign(&g);
                batch_loss += loss * frac;
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {bi}"
                )));
            }
            adam_step(model.store_mut(), &grads, &mut adam)?;
            loss_sum += batch_loss * total as f64;
            weight_sum += total;
        }
        let mean = loss_sum / weight_sum as f64;
        log::debug!("epoch {epoch}: loss {mean:.6} lr {:.2e}", adam.lr);
        log.epoch_loss.push(mean);
        if let Some(s) = &sink {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                log.checkpoints
                    .push(s.write(model.store(), &format!("epoch{:04}", epoch + 1))?);
            }
        }
    }
    if let Some(s) = &sink {
        log.checkpoints.push(s.write(model.store(), "final")?);
    }
    Ok(log)
}

/// Teacher-forced training on `(mixed window, serialized target)` pairs.
pub fn train_seq2res(
    cfg: Seq2ResConfig,
    vocab_size: usize,
    pairs: &[(Vec<usize>, Vec<usize>)],
    tc: &TrainConfig,
    seed: u64,
    exec: Exec,
    sink: Option<CheckpointSink>,
) -> Result<(Seq2ResModel, TrainLog)> {
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Seq2ResModel::new(cfg, vocab_size, &mut init)?;
    let log = fit(
        &mut model,
        pairs.len(),
        tc,
        seed ^ 0x5eed,
        exec,
        sink,
        |m, idx, rng| {
            let inputs: Vec<&[usize]> = idx.iter().map(|&i| pairs[i].0.as_slice()).collect();
            let targets: Vec<&[usize]> = idx.iter().map(|&i| pairs[i].1.as_slice()).collect();
            let mut g = Graph::new(&m.store, true);
            let out = m.forward_teacher(&mut g, &inputs, &targets, rng)?;
            let loss = g.value(out.loss).data()[0];
            g.backward(out.loss)?;
            Ok((loss, g.param_grads(), out.tokens))
        },
    )?;
    Ok((model, log))
}

#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    cfg: ClassifierConfig,
    kind: HeadKind,
    vocab_size: usize,
    inputs: &[SeqInput],
    labels: &[Vec<f64>],
    tc: &TrainConfig,
    seed: u64,
    exec: Exec,
    sink: Option<CheckpointSink>,
) -> Result<(ClassifierModel, TrainLog)> {
    if inputs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: labels.len(),
        });
    }
    let num_labels = labels.first().map_or(0, Vec::len);
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ClassifierModel::new(cfg, kind, vocab_size, num_labels, &mut init)?;
    let log = fit(
        &mut model,
        inputs.len(),
        tc,
        seed ^ 0x5eed,
        exec,
        sink,
        |m, idx, rng| {
            let xs: Vec<&SeqInput> = idx.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<&[f64]> = idx.iter().map(|&i| labels[i].as_slice()).collect();
            let mut g = Graph::new(&m.store, true);
            let loss = m.loss(&mut g, &xs, &ys, rng)?;
            let value = g.value(loss).data()[0];
            g.backward(loss)?;
            Ok((value, g.param_grads(), idx.len()))
        },
    )?;
    Ok((model, log))
}

/// Greedy separation of many windows, in chunks under the policy.
pub fn generate_all(
    sep: &Seq2ResModel,
    windows: &[&[usize]],
    max_len: usize,
    chunk: usize,
    exec: Exec,
) -> Result<Vec<crate::seq2res::Generated>> {
    let chunks: Vec<&[&[usize]]> = windows.chunks(chunk.max(1)).collect();
    let parts = parallel::map(exec, &chunks, |c| sep.generate(c, max_len));
    let mut out = Vec::with_capacity(windows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Classifier inputs for a scenario: the raw window, the ground-truth
/// separation, or the separation model's probability rows.
pub fn scenario_inputs(
    scenario: Scenario,
    instances: &[EncodedInstance],
    sep: Option<&Seq2ResModel>,
    max_len: usize,
    exec: Exec,
) -> Result<Vec<SeqInput>> {
    Ok(match scenario {
        Scenario::NoSep => instances
            .iter()
            .map(|i| SeqInput::Tokens(i.window.clone()))
            .collect(),
        Scenario::GtSep => instances
            .iter()
            .map(|i| SeqInput::Tokens(i.gt_input.clone()))
            .collect(),
        Scenario::S2sSep => {
            let sep = sep
                .ok_or_else(|| Error::Config("S2S_Sep requires a trained Seq2Res model".into()))?;
            let windows: Vec<&[usize]> = instances.iter().map(|i| i.window.as_slice()).collect();
            generate_all(sep, &windows, max_len, 50, exec)?
                .into_iter()
                .map(|g| SeqInput::Probs(g.classifier_rows().to_vec()))
                .collect()
        }
    })
}
