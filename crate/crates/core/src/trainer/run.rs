use super::{Batch, StepMetrics, TrainConfig, TrainState, Trainer};
use crate::checkpoint::Checkpoint;
use crate::dataset::{load_many, worker_pool, Dataset};
use crate::error::{Error, Result};
use crate::export::atomic_write;
use crate::features::{representation_stats, FrozenEncoder};
use crate::nn::Scalar;
use crate::rng::{stream, Purpose};
use rand::seq::SliceRandom;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const METRICS_HEADER: &str = "step,loss,grad_norm,momentum,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointLabel {
    /// Written when a run has no steps to take.
    Initial,
    /// End of the given 1-based epoch.
    Epoch(usize),
    /// Periodic checkpoint after the given step.
    Step(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: u64,
    /// Mean per-dimension std of pooled teacher embeddings.
    pub collapse_indicator: f64,
}

/// Receives checkpoints and metrics as training proceeds.
pub trait CheckpointSink {
    fn checkpoint(&mut self, label: CheckpointLabel, checkpoint: &Checkpoint) -> Result<()>;

    fn step(&mut self, _metrics: &StepMetrics) -> Result<()> {
        Ok(())
    }

    fn epoch(&mut self, _summary: &EpochSummary) -> Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory; handy for tests.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub checkpoints: Vec<(CheckpointLabel, Checkpoint)>,
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochSummary>,
}

impl CheckpointSink for MemorySink {
    fn checkpoint(&mut self, label: CheckpointLabel, checkpoint: &Checkpoint) -> Result<()> {
        self.checkpoints.push((label, checkpoint.clone()));
        Ok(())
    }

    fn step(&mut self, m: &StepMetrics) -> Result<()> {
        self.steps.push(*m);
        Ok(())
    }

    fn epoch(&mut self, s: &EpochSummary) -> Result<()> {
        self.epochs.push(*s);
        Ok(())
    }
}

/// Writes `metrics.csv` and `epochs.csv` (append-only) and checkpoint files
/// into a directory. `latest.mefe` always names the newest checkpoint.
#[derive(Debug)]
pub struct DirSink {
    dir: PathBuf,
}

impl DirSink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(DirSink {
            dir: dir.to_path_buf(),
        })
    }

    pub fn latest(&self) -> PathBuf {
        self.dir.join("latest.mefe")
    }

    /// Appends by rewriting through a temp file, so a crash never leaves a
    /// torn row.
    fn append(&self, name: &str, header: &str, line: &str) -> Result<()> {
        let path = self.dir.join(name);
        let mut text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        if text.is_empty() {
            text.push_str(header);
            text.push('\n');
        }
        text.push_str(line);
        text.push('\n');
        atomic_write(&path, text.as_bytes())
    }
}

impl CheckpointSink for DirSink {
    fn checkpoint(&mut self, label: CheckpointLabel, checkpoint: &Checkpoint) -> Result<()> {
        let name = match label {
            CheckpointLabel::Initial => "initial.mefe".to_string(),
            CheckpointLabel::Epoch(e) => format!("epoch-{e:04}.mefe"),
            CheckpointLabel::Step(s) => format!("step-{s:08}.mefe"),
        };
        checkpoint.save(&self.dir.join(name))?;
        checkpoint.save(&self.latest())
    }

    fn step(&mut self, m: &StepMetrics) -> Result<()> {
        self.append(
            "metrics.csv",
            METRICS_HEADER,
            &format!("{},{},{},{},{:.3}", m.step, m.loss, m.grad_norm, m.momentum, m.wall_ms),
        )
    }

    fn epoch(&mut self, s: &EpochSummary) -> Result<()> {
        self.append(
            "epochs.csv",
            "epoch,mean_loss,steps,collapse_indicator",
            &format!("{},{},{},{}", s.epoch, s.mean_loss, s.steps, s.collapse_indicator),
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome<F> {
    pub trainer: Trainer,
    pub state: TrainState<F>,
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochSummary>,
}

/// Runs steps until `state.step == until` (clamped to the schedule length).
///
/// Batch composition depends only on the seed and the epoch, and every step
/// draws from its own random stream, so stopping and resuming at any step
/// reproduces an uninterrupted run exactly.
pub fn run_steps<F: Scalar>(
    trainer: &Trainer,
    state: &mut TrainState<F>,
    dataset: &dyn Dataset,
    sink: &mut dyn CheckpointSink,
    until: u64,
) -> Result<(Vec<StepMetrics>, Vec<EpochSummary>)> {
    let cfg = trainer.config();
    if dataset.len() != trainer.dataset_len() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} images, run was planned for {}",
            dataset.len(),
            trainer.dataset_len()
        )));
    }
    let pool = worker_pool(cfg.workers)?;
    let spe = trainer.steps_per_epoch();
    let until = until.min(trainer.total_steps());
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut order: Option<(u64, Vec<usize>)> = None;
    while state.step < until {
        let started = Instant::now();
        let epoch = state.step / spe;
        let pos = (state.step % spe) as usize;
        if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut ids: Vec<usize> = (0..dataset.len()).collect();
            ids.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, epoch));
            order = Some((epoch, ids));
        }
        let ids = &order.as_ref().expect("order set").1;
        let lo = pos * cfg.batch_size;
        let batch_ids = &ids[lo..(lo + cfg.batch_size).min(ids.len())];
        let images = load_many(dataset, batch_ids, pool.as_ref())?;
        let batch = Batch {
            ids: batch_ids,
            images: &images,
        };
        let mut rng = stream(cfg.seed, Purpose::Step, state.step);
        let mut m = trainer.train_step(state, &batch, &mut rng)?;
        m.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        state.epoch_loss.0 += m.loss;
        state.epoch_loss.1 += 1;
        sink.step(&m)?;
        steps.push(m);

        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step % spe != 0 {
            sink.checkpoint(CheckpointLabel::Step(state.step), &trainer.checkpoint(state))?;
        }
        if state.step % spe == 0 {
            let n = cfg.stats_samples.min(dataset.len());
            let collapse_indicator = if n >= 2 {
                let src = FrozenEncoder {
                    encoder: trainer.encoder(),
                    store: &state.teacher,
                };
                representation_stats(&src, dataset, n)?.collapse_indicator
            } else {
                f64::NAN
            };
            let summary = EpochSummary {
                epoch: (state.step / spe) as usize,
                mean_loss: state.epoch_loss.0 / state.epoch_loss.1 as f64,
                steps: state.epoch_loss.1,
                collapse_indicator,
            };
            state.epoch_loss = (0.0, 0);
            sink.epoch(&summary)?;
            epochs.push(summary);
            sink.checkpoint(CheckpointLabel::Epoch(summary.epoch), &trainer.checkpoint(state))?;
        }
    }
    Ok((steps, epochs))
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train_loop<F: Scalar>(
    config: TrainConfig,
    dataset: &dyn Dataset,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainOutcome<F>> {
    let trainer = Trainer::new(config, dataset.len())?;
    let mut state = trainer.init_state::<F>()?;
    if trainer.total_steps() == 0 {
        sink.checkpoint(CheckpointLabel::Initial, &trainer.checkpoint(&state))?;
    }
    let total = trainer.total_steps();
    let (steps, epochs) = run_steps(&trainer, &mut state, dataset, sink, total)?;
    Ok(TrainOutcome {
        trainer,
        state,
        steps,
        epochs,
    })
}

/// Continues a run from a checkpoint to the end of its schedule.
pub fn resume<F: Scalar>(
    checkpoint: &Checkpoint,
    dataset: &dyn Dataset,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainOutcome<F>> {
    let (trainer, mut state) = Trainer::restore::<F>(checkpoint)?;
    let total = trainer.total_steps();
    let (steps, epochs) = run_steps(&trainer, &mut state, dataset, sink, total)?;
    Ok(TrainOutcome {
        trainer,
        state,
        steps,
        epochs,
    })
}
