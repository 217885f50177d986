//! Frozen-feature probes.
//!
//! Two heads are available: an attentive pooler over patch tokens (optionally
//! with the CLS embedding as one more token) and a one-hidden-layer
//! perceptron over the CLS embedding. Only the head is trained; the encoder
//! is reached solely through precomputed [`TokenFeatures`].

mod heads;

pub use heads::{AttentivePooler, MlpHead};

use crate::error::{Error, Result};
use crate::export::atomic_write;
use crate::features::TokenFeatures;
use crate::kv;
use crate::nn::ParamStore;
use crate::optim::{AdamState, AdamWConfig};
use crate::rng::{stream, Purpose};
use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Patches,
    Cls,
    PatchesPlusCls,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::Patches, FeatureMode::Cls, FeatureMode::PatchesPlusCls];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "patches" => Ok(FeatureMode::Patches),
            "cls" => Ok(FeatureMode::Cls),
            "patches_plus_cls" => Ok(FeatureMode::PatchesPlusCls),
            _ => Err(Error::Config(format!(
                "unknown feature mode `{s}` (patches, cls, patches_plus_cls)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Patches => "patches",
            FeatureMode::Cls => "cls",
            FeatureMode::PatchesPlusCls => "patches_plus_cls",
        }
    }

    /// The head this feature mode is evaluated with.
    pub fn default_head(self) -> HeadKind {
        match self {
            FeatureMode::Cls => HeadKind::Mlp,
            _ => HeadKind::AttentivePooler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    AttentivePooler,
    Mlp,
}

impl HeadKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "attentive_pooler" => Ok(HeadKind::AttentivePooler),
            "mlp" => Ok(HeadKind::Mlp),
            _ => Err(Error::Config(format!("unknown head `{s}` (attentive_pooler, mlp)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::AttentivePooler => "attentive_pooler",
            HeadKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub feature_mode: FeatureMode,
    pub head: HeadKind,
    pub hidden_dim: usize,
    /// Pooler heads; `None` uses a default chosen from the feature width.
    pub pooler_heads: Option<usize>,
    pub task: Task,
    /// Share of samples used for fitting (including the validation slice).
    pub train_fraction: f64,
    /// Share of the fitting samples held back for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Free text folded into the config hash, e.g. which encoder was probed.
    pub label: String,
}

impl ProbeConfig {
    pub fn new(feature_mode: FeatureMode, task: Task, seed: u64) -> Self {
        ProbeConfig {
            feature_mode,
            head: feature_mode.default_head(),
            hidden_dim: 512,
            pooler_heads: None,
            task,
            train_fraction: 0.8,
            val_fraction: 0.1,
            seed,
            epochs: 50,
            patience: 10,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            label: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let paired = match self.feature_mode {
            FeatureMode::Cls => self.head == HeadKind::Mlp,
            _ => self.head == HeadKind::AttentivePooler,
        };
        if !paired {
            return Err(Error::Config(format!(
                "feature mode `{}` cannot be used with head `{}`; use cls with mlp and patch modes with attentive_pooler",
                self.feature_mode.name(),
                self.head.name()
            )));
        }
        if self.hidden_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("probe sizes must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::Config("classification needs at least 2 classes".into()));
            }
        }
        if self.pooler_heads == Some(0) {
            return Err(Error::Config("pooler_heads must be positive".into()));
        }
        Ok(())
    }

    fn task_name(&self) -> String {
        match self.task {
            Task::Regression => "regression".into(),
            Task::Classification { classes } => format!("classification:{classes}"),
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("feature_mode".into(), self.feature_mode.name().into()),
            ("head".into(), self.head.name().into()),
            ("hidden_dim".into(), self.hidden_dim.to_string()),
            (
                "pooler_heads".into(),
                self.pooler_heads.map_or("auto".into(), |h| h.to_string()),
            ),
            ("task".into(), self.task_name()),
            ("train_fraction".into(), self.train_fraction.to_string()),
            ("val_fraction".into(), self.val_fraction.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("label".into(), self.label.clone()),
        ]
    }

    /// First 16 hex digits of the SHA-256 of the rendered config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(kv::render(&self.to_pairs()).as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Disjoint index sets drawn from one seeded permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Result<Split> {
    let fit = ((n as f64) * train_fraction).round() as usize;
    let val = ((fit as f64) * val_fraction).round().max(1.0) as usize;
    if n < 3 || fit >= n || val >= fit {
        return Err(Error::InvalidArgument(format!(
            "{n} samples are too few for a train/val/test split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Probe, 0));
    Ok(Split {
        train: order[..fit - val].to_vec(),
        val: order[fit - val..fit].to_vec(),
        test: order[fit..].to_vec(),
    })
}

/// `1 - SS_res / SS_tot`; `None` when the targets have no variance.
pub fn r_squared(predicted: &[f64], actual: &[f64]) -> Option<f64> {
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, y)| (y - p).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

pub fn mean_absolute_error(predicted: &[f64], actual: &[f64]) -> f64 {
    predicted.iter().zip(actual).map(|(p, y)| (p - y).abs()).sum::<f64>() / actual.len() as f64
}

pub fn accuracy(predicted: &[usize], actual: &[usize]) -> f64 {
    predicted.iter().zip(actual).filter(|(p, y)| p == y).count() as f64 / actual.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub config_hash: String,
    pub feature_mode: FeatureMode,
    pub head: HeadKind,
    pub task: Task,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    /// `None` for classification or when test labels are constant.
    pub r_squared: Option<f64>,
    pub mae: Option<f64>,
    pub accuracy: Option<f64>,
}

fn opt(v: Option<f64>, undefined: &str) -> String {
    v.map_or(undefined.to_string(), |x| x.to_string())
}

pub const RESULTS_HEADER: &str =
    "config_hash,feature_mode,head,task,seed,n_train,n_val,n_test,epochs_run,r_squared,mae,accuracy";

impl ProbeReport {
    /// Flat `key: value` text, one field per line.
    pub fn to_text(&self) -> String {
        let task = match self.task {
            Task::Regression => "regression".to_string(),
            Task::Classification { classes } => format!("classification:{classes}"),
        };
        let r2 = match (self.task, self.r_squared) {
            (Task::Regression, None) => "undefined".to_string(),
            (_, v) => opt(v, "n/a"),
        };
        let lines = [
            ("config_hash", self.config_hash.clone()),
            ("feature_mode", self.feature_mode.name().into()),
            ("head", self.head.name().into()),
            ("task", task),
            ("seed", self.seed.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_val", self.n_val.to_string()),
            ("n_test", self.n_test.to_string()),
            ("epochs_run", self.epochs_run.to_string()),
            ("best_val_loss", self.best_val_loss.to_string()),
            ("r_squared", r2),
            ("mae", opt(self.mae, "n/a")),
            ("accuracy", opt(self.accuracy, "n/a")),
        ];
        lines.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    pub fn csv_row(&self) -> String {
        let task = match self.task {
            Task::Regression => "regression".to_string(),
            Task::Classification { classes } => format!("classification:{classes}"),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.config_hash,
            self.feature_mode.name(),
            self.head.name(),
            task,
            self.seed,
            self.n_train,
            self.n_val,
            self.n_test,
            self.epochs_run,
            opt(self.r_squared, ""),
            opt(self.mae, ""),
            opt(self.accuracy, "")
        )
    }

    /// Appends a row to `path` (creating it with a header), rewriting the
    /// file atomically.
    pub fn append_to_csv(&self, path: &Path) -> Result<()> {
        let mut text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{RESULTS_HEADER}\n"),
            Err(e) => return Err(Error::io(path, e)),
        };
        if !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&self.csv_row());
        text.push('\n');
        atomic_write(path, text.as_bytes())
    }
}

/// Standardized probe inputs for one feature mode.
struct Inputs<'a> {
    feats: &'a [TokenFeatures],
    mode: FeatureMode,
    mean: Array1<f64>,
    inv_std: Array1<f64>,
}

impl<'a> Inputs<'a> {
    fn fit(feats: &'a [TokenFeatures], mode: FeatureMode, train: &[usize]) -> Self {
        let d = feats[0].cls.len();
        let mut sum = Array1::<f64>::zeros(d);
        let mut sq = Array1::<f64>::zeros(d);
        let mut count = 0.0;
        let mut add = |row: ndarray::ArrayView1<f32>| {
            for k in 0..d {
                let v = row[k] as f64;
                sum[k] += v;
                sq[k] += v * v;
            }
            count += 1.0;
        };
        for &i in train {
            let f = &feats[i];
            if mode != FeatureMode::Patches {
                add(f.cls.view());
            }
            if mode != FeatureMode::Cls {
                f.patches.rows().into_iter().for_each(&mut add);
            }
        }
        let mean = &sum / count;
        let var = &sq / count - &mean * &mean;
        let inv_std = var.mapv(|v| 1.0 / v.max(0.0).sqrt().max(1e-6));
        Inputs {
            feats,
            mode,
            mean,
            inv_std,
        }
    }

    fn tokens(&self, i: usize) -> Array2<f64> {
        let f = &self.feats[i];
        let extra = (self.mode == FeatureMode::PatchesPlusCls) as usize;
        let mut x = Array2::zeros((f.patches.nrows() + extra, f.cls.len()));
        if extra == 1 {
            x.row_mut(0).assign(&f.cls.mapv(|v| v as f64));
        }
        x.slice_mut(s![extra.., ..]).assign(&f.patches.mapv(|v| v as f64));
        (x - &self.mean) * &self.inv_std
    }

    fn vectors(&self, ids: &[usize]) -> Array2<f64> {
        let d = self.mean.len();
        let mut x = Array2::zeros((ids.len(), d));
        for (r, &i) in ids.iter().enumerate() {
            let v = self.feats[i].cls.mapv(|v| v as f64);
            x.row_mut(r).assign(&((v - &self.mean) * &self.inv_std));
        }
        x
    }
}

enum Head {
    Pooler(AttentivePooler),
    Mlp(MlpHead),
}

/// Trained head plus the feature standardization it expects.
pub struct FittedProbe {
    head_store: ParamStore<f64>,
    report: ProbeReport,
}

impl FittedProbe {
    pub fn report(&self) -> &ProbeReport {
        &self.report
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.head_store
    }
}

fn pick_heads(dim: usize, requested: Option<usize>) -> Result<usize> {
    match requested {
        Some(h) if dim % h == 0 => Ok(h),
        Some(h) => Err(Error::Config(format!("{h} pooler heads do not divide width {dim}"))),
        None => Ok((1..=dim.min(4)).rev().find(|h| dim % h == 0).unwrap_or(1)),
    }
}

/// Batch loss and `dL/d outputs`. Regression targets are standardized.
fn loss_grad(out: &Array2<f64>, targets: &[f64], task: Task) -> (f64, Array2<f64>) {
    let n = out.nrows() as f64;
    let mut grad = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    match task {
        Task::Regression => {
            for (r, &y) in targets.iter().enumerate() {
                let e = out[[r, 0]] - y;
                loss += e * e;
                grad[[r, 0]] = 2.0 * e / n;
            }
        }
        Task::Classification { .. } => {
            for (r, &y) in targets.iter().enumerate() {
                let row = out.row(r);
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let exp = row.mapv(|v| (v - max).exp());
                let z = exp.sum();
                let c = y as usize;
                loss += z.ln() + max - row[c];
                for k in 0..row.len() {
                    grad[[r, k]] = (exp[k] / z - (k == c) as u8 as f64) / n;
                }
            }
        }
    }
    (loss / n, grad)
}

/// Fits a head on frozen features and evaluates it on the held-out split.
///
/// Regression labels are standardized with training statistics for fitting;
/// reported metrics are in the original units. Classification labels are
/// class indices stored as `f64`.
pub fn fit_probe(features: &[TokenFeatures], labels: &[f64], config: &ProbeConfig) -> Result<FittedProbe> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::InvalidArgument("no samples to probe".into()));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite label".into()));
    }
    let outputs = match config.task {
        Task::Regression => 1,
        Task::Classification { classes } => {
            if labels.iter().any(|&y| y < 0.0 || y.fract() != 0.0 || y as usize >= classes) {
                return Err(Error::InvalidArgument(format!(
                    "classification labels must be integers in 0..{classes}"
                )));
            }
            classes
        }
    };
    let split = split_indices(features.len(), config.train_fraction, config.val_fraction, config.seed)?;
    let inputs = Inputs::fit(features, config.feature_mode, &split.train);
    let dim = features[0].cls.len();

    let (y_mean, y_std) = match config.task {
        Task::Regression => {
            let ys: Vec<f64> = split.train.iter().map(|&i| labels[i]).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64;
            (m, if v > 0.0 { v.sqrt() } else { 1.0 })
        }
        Task::Classification { .. } => (0.0, 1.0),
    };
    let target = |i: usize| (labels[i] - y_mean) / y_std;

    let mut rng = stream(config.seed, Purpose::Probe, 1);
    let mut store = ParamStore::new();
    let head = match config.head {
        HeadKind::AttentivePooler => {
            let heads = pick_heads(dim, config.pooler_heads)?;
            Head::Pooler(AttentivePooler::new(&mut store, dim, heads, outputs, &mut rng))
        }
        HeadKind::Mlp => Head::Mlp(MlpHead::new(&mut store, dim, config.hidden_dim, outputs, &mut rng)),
    };

    let forward = |store: &ParamStore<f64>, ids: &[usize]| -> Array2<f64> {
        match &head {
            Head::Pooler(p) => {
                let xs: Vec<Array2<f64>> = ids.iter().map(|&i| inputs.tokens(i)).collect();
                p.forward(store, &xs).0
            }
            Head::Mlp(m) => m.forward(store, inputs.vectors(ids).view()).0,
        }
    };
    let eval_loss = |store: &ParamStore<f64>, ids: &[usize]| -> f64 {
        let mut total = 0.0;
        for chunk in ids.chunks(256) {
            let out = forward(store, chunk);
            let t: Vec<f64> = chunk.iter().map(|&i| target(i)).collect();
            total += loss_grad(&out, &t, config.task).0 * chunk.len() as f64;
        }
        total / ids.len() as f64
    };

    let adam = AdamWConfig::default();
    let mut opt = AdamState::for_store(&store);
    let mut best = (eval_loss(&store, &split.val), store.clone());
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut t = 0u64;
    let mut order = split.train.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream(config.seed, Purpose::Probe, 2 + epoch as u64));
        for chunk in order.chunks(config.batch_size) {
            let targets: Vec<f64> = chunk.iter().map(|&i| target(i)).collect();
            let mut grads = store.zeros_like();
            match &head {
                Head::Pooler(p) => {
                    let xs: Vec<Array2<f64>> = chunk.iter().map(|&i| inputs.tokens(i)).collect();
                    let (out, cache) = p.forward(&store, &xs);
                    let (_, g) = loss_grad(&out, &targets, config.task);
                    p.backward(&store, &mut grads, &xs, &cache, g.view());
                }
                Head::Mlp(m) => {
                    let x = inputs.vectors(chunk);
                    let (out, cache) = m.forward(&store, x.view());
                    let (_, g) = loss_grad(&out, &targets, config.task);
                    m.backward(&store, &mut grads, x.view(), &cache, g.view());
                }
            }
            t += 1;
            opt.step(&adam, &mut store, &grads, config.lr, config.weight_decay, t)?;
        }
        epochs_run = epoch + 1;
        let val = eval_loss(&store, &split.val);
        if val < best.0 {
            best = (val, store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_val_loss, store) = best;

    let mut out = Array2::zeros((0, outputs));
    for chunk in split.test.chunks(256) {
        out.append(Axis(0), forward(&store, chunk).view())
            .expect("matching widths");
    }
    let (r2, mae, acc) = match config.task {
        Task::Regression => {
            let pred: Vec<f64> = out.column(0).iter().map(|v| v * y_std + y_mean).collect();
            let actual: Vec<f64> = split.test.iter().map(|&i| labels[i]).collect();
            (r_squared(&pred, &actual), Some(mean_absolute_error(&pred, &actual)), None)
        }
        Task::Classification { .. } => {
            let pred: Vec<usize> = out
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
                        .0
                })
                .collect();
            let actual: Vec<usize> = split.test.iter().map(|&i| labels[i] as usize).collect();
            (None, None, Some(accuracy(&pred, &actual)))
        }
    };
    Ok(FittedProbe {
        head_store: store,
        report: ProbeReport {
            config_hash: config.hash(),
            feature_mode: config.feature_mode,
            head: config.head,
            task: config.task,
            seed: config.seed,
            n_train: split.train.len(),
            n_val: split.val.len(),
            n_test: split.test.len(),
            epochs_run,
            best_val_loss,
            r_squared: r2,
            mae,
            accuracy: acc,
        },
    })
}

#[cfg(test)]
mod tests;
