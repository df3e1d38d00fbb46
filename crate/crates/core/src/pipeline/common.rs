use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Adam, Checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, MetricsCsv, Stage, Term};
use crate::morph::ModelDims;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::objective::ViewTarget;
use crate::synth::{Dataset, Split};

pub const STAGE_GUIDE: &str = "guide";
pub const STAGE_GAUSSIAN_INIT: &str = "gaussian-init";
pub const STAGE_GAUSSIAN: &str = "gaussian";

/// Losses of one optimizer step, averaged over its views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub terms: Vec<(Term, f64)>,
    pub psnr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<StepRecord>,
    /// Mean PSNR over the scored training views after the last step.
    pub final_psnr: f64,
}

impl TrainReport {
    /// Mean total loss over steps `[from, to)` of the history.
    pub fn mean_total(&self, from: usize, to: usize) -> f64 {
        let xs: Vec<f64> = self
            .history
            .iter()
            .filter(|r| r.step >= from && r.step < to)
            .map(|r| r.total)
            .collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }
}

/// Learning-rate groups: codes, the mean model, everything else.
pub fn configure_rates<T: crate::real::Real>(adam: &mut Adam<T>, store: &ParamStore<T>, cfg: &TrainConfig) {
    for (id, p) in store.iter() {
        let lr = if p.name.starts_with("codes.") {
            cfg.lr_code
        } else if p.name.starts_with("mean.") || p.name.starts_with("landmarks.") {
            cfg.lr_mean
        } else {
            cfg.lr_net
        };
        adam.set_lr(id, lr);
    }
}

pub fn train_indices(data: &Dataset) -> Vec<usize> {
    (0..data.samples.len()).filter(|&i| data.samples[i].split == Split::Train).collect()
}

pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, pool: &[usize], batch: usize) -> Vec<usize> {
    (0..batch).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

pub fn build_targets(data: &Dataset, indices: &[usize], factor: usize) -> Result<BTreeMap<usize, ViewTarget<f32>>> {
    indices
        .iter()
        .map(|&i| Ok((i, ViewTarget::new(&data.samples[i], factor)?)))
        .collect()
}

/// Averages per-view term lists that share one layout.
pub fn mean_terms(views: &[Vec<(Term, f64)>]) -> Vec<(Term, f64)> {
    let mut out = views[0].clone();
    for v in &views[1..] {
        for (o, (t, x)) in out.iter_mut().zip(v) {
            debug_assert_eq!(o.0, *t);
            o.1 += x;
        }
    }
    let n = views.len() as f64;
    out.iter_mut().for_each(|o| o.1 /= n);
    out
}

pub fn finish_record(step: usize, stage: Stage, weights: &LossWeights, terms: Vec<(Term, f64)>, psnr: f64) -> Result<StepRecord> {
    let total = weights.total(stage, &terms)?;
    if !total.is_finite() {
        return Err(Error::Diverged {
            stage: stage.name().into(),
            step,
            loss: total,
        });
    }
    Ok(StepRecord { step, total, terms, psnr })
}

pub fn log_record(csv: &mut MetricsCsv, rec: &StepRecord) -> Result<()> {
    for (t, v) in &rec.terms {
        csv.row(rec.step, "train", t.name(), *v)?;
    }
    csv.row(rec.step, "train", "total", rec.total)?;
    csv.row(rec.step, "train", "psnr", rec.psnr)
}

pub fn checkpoint_for(store: ParamStore<f32>, stage: &str, cfg: &TrainConfig, data: &Dataset) -> Checkpoint {
    Checkpoint::new(store)
        .with_meta("stage", stage)
        .with_meta("config", serde_json::to_string(cfg).expect("config serializes"))
        .with_meta("dims", serde_json::to_string(&cfg.dims).expect("dims serialize"))
        .with_meta("n_id", data.manifest.n_train_ids().to_string())
        .with_meta("n_exp", data.manifest.config.n_exp.to_string())
        .with_meta("resolution", data.resolution().to_string())
}

pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<TrainConfig> {
    TrainConfig::from_json(ckpt.meta("config")?)
}

pub fn checkpoint_dims(ckpt: &Checkpoint) -> Result<ModelDims> {
    serde_json::from_str(ckpt.meta("dims")?).map_err(|e| Error::format("checkpoint dims", e.to_string()))
}

pub fn expect_stage(ckpt: &Checkpoint, allowed: &[&str]) -> Result<()> {
    let s = ckpt.stage()?;
    if !allowed.contains(&s) {
        return Err(Error::Invalid(format!("checkpoint stage is `{s}`, expected one of {allowed:?}")));
    }
    Ok(())
}

/// Runs `f` on a single worker thread when `deterministic` is set.
pub fn with_threads<R: Send>(deterministic: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    if deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}
