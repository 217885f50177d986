//! Self-supervised training: the weighted latent-prediction loss, one
//! optimization step with the EMA teacher update, and the checkpointed loop.
//!
//! A step samples a mask and CLS routing per image, encodes the source tokens
//! with the student, encodes the target tokens with the teacher (no
//! gradient), predicts the target latents and backpropagates into the student
//! and the predictor only. The teacher then moves toward the student by EMA.

mod config;
mod loss;
mod run;

pub use config::{MaskKind, TrainConfig};
pub use loss::{jepa_loss, jepa_loss_grad, unweighted_loss, Distance, LossConfig};
pub use run::{
    resume, run_steps, train_loop, CheckpointLabel, CheckpointSink, DirSink, EpochSummary,
    MemorySink, TrainOutcome, METRICS_HEADER,
};

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::lossweights::WeightMatrix;
use crate::nn::{Grads, ParamStore, Scalar};
use crate::optim::{AdamState, AdamWConfig, LrSchedule, MomentumSchedule};
use crate::rng::{stream, Purpose, Rng};
use crate::tokens::{assign_cls, ClsSide, TokenPartition};
use crate::vit::{ema_update, Encoder, Predictor};
use ndarray::{s, Array2, ArrayD, IxDyn};
use std::collections::BTreeMap;

/// Parameter values and optimizer moments. Layouts live in [`Trainer`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<F> {
    pub student: ParamStore<F>,
    pub teacher: ParamStore<F>,
    pub predictor: ParamStore<F>,
    pub student_opt: AdamState<F>,
    pub predictor_opt: AdamState<F>,
    /// Completed optimizer steps.
    pub step: u64,
    /// Loss sum and step count of the epoch in progress.
    pub epoch_loss: (f64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// 1-based index of the step just taken.
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub momentum: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Images of one batch with their dataset indices.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub ids: &'a [usize],
    pub images: &'a [Image],
}

/// Loss and gradients of one batch, before any update.
#[derive(Debug, Clone)]
pub struct StepGrads<F> {
    pub loss: f64,
    pub student: Grads<F>,
    pub predictor: Grads<F>,
    pub partitions: Vec<TokenPartition>,
}

/// Model layouts, schedules and loss weights for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    encoder: Encoder,
    predictor: Predictor,
    weights: WeightMatrix,
    adam: AdamWConfig,
    dataset_len: usize,
}

fn side_code(side: ClsSide) -> u8 {
    match side {
        ClsSide::Source => 0,
        ClsSide::Target => 1,
        ClsSide::Excluded => 2,
    }
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset_len: usize) -> Result<Self> {
        config.validate()?;
        if dataset_len == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        let mut rng = stream(config.seed, Purpose::Init, 0);
        let (encoder, _) = Encoder::new::<f32, _>(&config.encoder, &mut rng)?;
        let (predictor, _) = Predictor::new::<f32, _>(&config.predictor, &config.encoder, &mut rng)?;
        let weights = WeightMatrix::build(&config.grid(), &config.loss.weights)?;
        Ok(Trainer {
            config,
            encoder,
            predictor,
            weights,
            adam: AdamWConfig::default(),
            dataset_len,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn dataset_len(&self) -> usize {
        self.dataset_len
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.dataset_len.div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.epochs as u64
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        let total = self.total_steps();
        let warmup = self
            .config
            .warmup_steps
            .unwrap_or_else(|| (total as f64 * 0.1).round() as u64)
            .max(1);
        LrSchedule {
            base_lr: self.config.lr,
            min_lr: self.config.min_lr.min(self.config.lr),
            warmup_steps: warmup,
            total_steps: total,
        }
    }

    pub fn momentum_schedule(&self) -> MomentumSchedule {
        MomentumSchedule {
            start: self.config.ema_start,
            end: self.config.ema_end,
            total_steps: self.total_steps(),
        }
    }

    /// Fresh parameters from the seed; the teacher starts as a copy of the
    /// student.
    pub fn init_state<F: Scalar>(&self) -> Result<TrainState<F>> {
        let mut rng = stream(self.config.seed, Purpose::Init, 0);
        let (_, student) = Encoder::new::<F, _>(&self.config.encoder, &mut rng)?;
        let (_, predictor) = Predictor::new::<F, _>(&self.config.predictor, &self.config.encoder, &mut rng)?;
        Ok(TrainState {
            teacher: student.clone(),
            student_opt: AdamState::for_store(&student),
            predictor_opt: AdamState::for_store(&predictor),
            student,
            predictor,
            step: 0,
            epoch_loss: (0.0, 0),
        })
    }

    /// Draws a mask and CLS routing for each of `n` samples.
    pub fn plan(&self, n: usize, rng: &mut Rng) -> Result<Vec<TokenPartition>> {
        let grid = self.config.grid();
        let strategy = self.config.mask_strategy();
        (0..n)
            .map(|_| {
                let mask = strategy.sample(&grid, rng)?;
                assign_cls(mask, &self.config.cls, &grid, rng)
            })
            .collect()
    }

    fn teacher_reference<F: Scalar>(
        &self,
        teacher: &ParamStore<F>,
        images: &[&Image],
        targets: &[&[usize]],
        cls: bool,
    ) -> Result<Array2<F>> {
        if !self.config.target_full_context {
            return Ok(self.encoder.forward_batch(teacher, images, targets, cls)?.0);
        }
        let n = self.config.grid().num_patches();
        let all: Vec<usize> = (0..n).collect();
        let with_cls = self.config.cls.enabled;
        let lists = vec![all.as_slice(); images.len()];
        let (full, _) = self.encoder.forward_batch(teacher, images, &lists, with_cls)?;
        let seq = n + with_cls as usize;
        let rows = targets[0].len() + cls as usize;
        let mut out = Array2::zeros((images.len() * rows, full.ncols()));
        for (j, t) in targets.iter().enumerate() {
            let mut r = j * rows;
            if cls {
                out.row_mut(r).assign(&full.row(j * seq));
                r += 1;
            }
            for (k, &p) in t.iter().enumerate() {
                out.row_mut(r + k).assign(&full.row(j * seq + with_cls as usize + p));
            }
        }
        Ok(out)
    }

    fn diagnostic(&self, step: u64, batch: &Batch, plans: &[TokenPartition]) -> String {
        let masks: Vec<String> = plans
            .iter()
            .map(|p| format!("{:?}/cls={:?}", p.mask().origin(), p.cls()))
            .collect();
        format!(
            "seed {}, step {}, batch ids {:?}, masks [{}]",
            self.config.seed,
            step + 1,
            batch.ids,
            masks.join(", ")
        )
    }

    /// Batch loss (mean of per-sample losses) and gradients for the student
    /// and the predictor. The teacher gets no gradient buffer at all.
    pub fn loss_and_grads<F: Scalar>(
        &self,
        state: &TrainState<F>,
        batch: &Batch,
        rng: &mut Rng,
    ) -> Result<StepGrads<F>> {
        let b = batch.images.len();
        if b == 0 || batch.ids.len() != b {
            return Err(Error::InvalidArgument(format!(
                "batch has {b} images and {} ids",
                batch.ids.len()
            )));
        }
        let plans = self.plan(b, rng)?;
        let mut buckets: BTreeMap<(usize, usize, u8), Vec<usize>> = BTreeMap::new();
        for (i, p) in plans.iter().enumerate() {
            buckets
                .entry((p.source_patches().len(), p.target_patches().len(), side_code(p.cls())))
                .or_default()
                .push(i);
        }

        let mut g_student = state.student.zeros_like();
        let mut g_pred = state.predictor.zeros_like();
        let inv_b = F::lit(1.0 / b as f64);
        let distance = self.config.loss.distance;
        let cls_pos = self.encoder.cls_position();
        let mut total = 0.0;
        for members in buckets.values() {
            let parts: Vec<&TokenPartition> = members.iter().map(|&i| &plans[i]).collect();
            let images: Vec<&Image> = members.iter().map(|&i| &batch.images[i]).collect();
            let cls_src = parts[0].cls_in_source();
            let cls_tgt = parts[0].cls_in_target();
            let sources: Vec<&[usize]> = parts.iter().map(|p| p.source_patches()).collect();
            let targets: Vec<&[usize]> = parts.iter().map(|p| p.target_patches()).collect();

            let reference = self.teacher_reference(&state.teacher, &images, &targets, cls_tgt)?;
            let (latent, enc_cache) =
                self.encoder
                    .forward_batch(&state.student, &images, &sources, cls_src)?;
            let positions: Vec<Vec<usize>> = parts
                .iter()
                .map(|p| {
                    let mut v = Vec::with_capacity(p.source_len());
                    if cls_src {
                        v.push(cls_pos);
                    }
                    v.extend_from_slice(p.source_patches());
                    v
                })
                .collect();
            let pos_refs: Vec<&[usize]> = positions.iter().map(Vec::as_slice).collect();
            let (pred, pcache) =
                self.predictor
                    .forward_batch(&state.predictor, latent, &pos_refs, &targets, cls_tgt)?;

            let nq = targets[0].len() + cls_tgt as usize;
            let mut d_pred = Array2::<F>::zeros(pred.dim());
            for (j, p) in parts.iter().enumerate() {
                let rows = s![j * nq..(j + 1) * nq, ..];
                let (pv, rv) = (pred.slice(rows), reference.slice(rows));
                if pv.iter().chain(rv.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        step: state.step + 1,
                        diagnostic: self.diagnostic(state.step, batch, &plans),
                    });
                }
                let w = self.weights.token_weights(cls_tgt, p.target_patches());
                let (l, g) = jepa_loss_grad(pv, rv, &w, distance)?;
                let l = l.to_f64_lossy();
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: state.step + 1,
                        diagnostic: self.diagnostic(state.step, batch, &plans),
                    });
                }
                total += l;
                d_pred.slice_mut(rows).assign(&(g * inv_b));
            }
            let d_src = self
                .predictor
                .backward(&state.predictor, &mut g_pred, &pcache, d_pred.view());
            self.encoder
                .backward(&state.student, &mut g_student, &enc_cache, d_src.view());
        }
        Ok(StepGrads {
            loss: total / b as f64,
            student: g_student,
            predictor: g_pred,
            partitions: plans,
        })
    }

    /// One optimizer step on the student and predictor, then the EMA update
    /// of the teacher. State is untouched when an error is returned.
    pub fn train_step<F: Scalar>(
        &self,
        state: &mut TrainState<F>,
        batch: &Batch,
        rng: &mut Rng,
    ) -> Result<StepMetrics> {
        let g = self.loss_and_grads(state, batch, rng)?;
        let t = state.step;
        let grad_norm = (g.student.norm_sq() + g.predictor.norm_sq()).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: t + 1,
                diagnostic: format!(
                    "gradient norm {grad_norm}; {}",
                    self.diagnostic(t, batch, &g.partitions)
                ),
            });
        }
        let lr = self.lr_schedule().at(t);
        let momentum = self.momentum_schedule().at(t);
        let wd = self.config.weight_decay;
        state
            .student_opt
            .step(&self.adam, &mut state.student, &g.student, lr, wd, t + 1)?;
        state
            .predictor_opt
            .step(&self.adam, &mut state.predictor, &g.predictor, lr, wd, t + 1)?;
        ema_update(&mut state.teacher, &state.student, momentum)?;
        state.step += 1;
        Ok(StepMetrics {
            step: t + 1,
            loss: g.loss,
            grad_norm,
            momentum,
            lr,
            wall_ms: 0.0,
        })
    }

    pub fn checkpoint<F: Scalar>(&self, state: &TrainState<F>) -> Checkpoint {
        let mut c = Checkpoint {
            config: self.config.to_kv(),
            seed: self.config.seed,
            step: state.step,
            tensors: Vec::new(),
        };
        c.push_store("student", &state.student);
        c.push_store("teacher", &state.teacher);
        c.push_store("predictor", &state.predictor);
        c.push_aligned("adam.student.m", &state.student, &state.student_opt.first);
        c.push_aligned("adam.student.v", &state.student, &state.student_opt.second);
        c.push_aligned("adam.predictor.m", &state.predictor, &state.predictor_opt.first);
        c.push_aligned("adam.predictor.v", &state.predictor, &state.predictor_opt.second);
        let progress = ArrayD::from_shape_vec(
            IxDyn(&[3]),
            vec![state.epoch_loss.0, state.epoch_loss.1 as f64, self.dataset_len as f64],
        )
        .expect("shape");
        c.tensors.push(Tensor::from_array("loop.progress", &progress));
        c
    }

    /// Rebuilds the trainer and state saved by [`Trainer::checkpoint`].
    pub fn restore<F: Scalar>(checkpoint: &Checkpoint) -> Result<(Trainer, TrainState<F>)> {
        let config = TrainConfig::from_text(&checkpoint.config)?;
        if config.seed != checkpoint.seed {
            return Err(Error::Checkpoint("seed disagrees with the stored config".into()));
        }
        let progress = checkpoint
            .tensor("loop.progress")
            .ok_or_else(|| Error::Checkpoint("missing loop.progress".into()))?
            .to_array::<f64>()?;
        if progress.len() != 3 {
            return Err(Error::Checkpoint("malformed loop.progress".into()));
        }
        let trainer = Trainer::new(config, progress[2] as usize)?;
        let mut state = trainer.init_state::<F>()?;
        checkpoint.read_store("student", &mut state.student)?;
        checkpoint.read_store("teacher", &mut state.teacher)?;
        checkpoint.read_store("predictor", &mut state.predictor)?;
        state.student_opt.first = checkpoint.read_aligned("adam.student.m", &state.student)?;
        state.student_opt.second = checkpoint.read_aligned("adam.student.v", &state.student)?;
        state.predictor_opt.first = checkpoint.read_aligned("adam.predictor.m", &state.predictor)?;
        state.predictor_opt.second = checkpoint.read_aligned("adam.predictor.v", &state.predictor)?;
        state.step = checkpoint.step;
        state.epoch_loss = (progress[0], progress[1] as u64);
        Ok((trainer, state))
    }
}
