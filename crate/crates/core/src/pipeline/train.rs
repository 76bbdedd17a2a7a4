use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{draw_samples, PoseProvider, SequenceSpec};
use super::model::{frame_input, predict, sequence_graph, sequence_plans, Model};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::metrics::{class_weights, iou_from_confusion, ClassWeights, ConfusionMatrix, IouReport, DEFAULT_EPSILON};
use crate::nn::{Adam, Graph, Precision, Tensor4, Var};
use crate::odometry::PoseSource;
use crate::sequencing::{SequenceSample, Spacing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    /// First-moment decay of the optimizer.
    pub momentum: f64,
    pub seed: u64,
    pub sequence_length: usize,
    pub spacing: Spacing,
    pub delta_max: usize,
    pub validate_every: usize,
    pub pose_source: PoseSource,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            initial_lr: 1e-3,
            lr_decay: 0.8,
            lr_step_epochs: 100,
            momentum: 0.8,
            seed: 0,
            sequence_length: 5,
            spacing: Spacing::Regular,
            delta_max: 6,
            validate_every: 5,
            pose_source: PoseSource::GroundTruth,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 || self.delta_max == 0 || self.batch_size == 0 || self.lr_step_epochs == 0 {
            return Err(Error::Config(
                "sequence length, delta_max, batch size and lr step must be at least 1".into(),
            ));
        }
        if !(self.initial_lr >= 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("learning rate settings must be non-negative".into()));
        }
        Ok(())
    }

    pub fn sequence_spec(&self) -> SequenceSpec {
        SequenceSpec {
            length: self.sequence_length,
            spacing: self.spacing,
            delta_max: self.delta_max,
        }
    }

    /// Step schedule: decays by `lr_decay` every `lr_step_epochs` epochs.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_decay.powi((epoch / self.lr_step_epochs) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_miou: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation mIoU.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub log: Vec<EpochRecord>,
    pub class_weights: ClassWeights,
}

/// Class weights from the label areas of `indices`.
pub fn dataset_class_weights(ds: &Dataset, indices: &[usize], classes: usize) -> Result<ClassWeights> {
    let mut areas = vec![0u64; classes];
    for i in indices {
        let l = ds.labels.get(i).ok_or_else(|| Error::Config(format!("frame {i} is not labeled")))?;
        for (a, b) in areas.iter_mut().zip(l.class_areas(classes)) {
            *a += b;
        }
    }
    class_weights(&areas, DEFAULT_EPSILON)
}

/// Weighted cross-entropy of one sample and, when `grads` is given, its
/// parameter gradients added into it.
pub fn sample_loss(
    model: &Model,
    sample: &SequenceSample,
    ds: &Dataset,
    weights: &Rc<Vec<f64>>,
    grads: Option<&mut [Tensor4]>,
) -> Result<f64> {
    let plans = sequence_plans(&model.config, &sample.frames, &sample.poses, &ds.intrinsics, &ds.extrinsics)?;
    let mut g = Graph::new();
    let (mv, vars) = model.bind(&mut g);
    let images: Vec<Var> = sample.frames.iter().map(|f| g.leaf(frame_input(f))).collect();
    let logits = sequence_graph(&mut g, &model.config, &mv, &images, &plans)?;
    let loss = g.cross_entropy(logits, Rc::new(sample.labels.data.clone()), Rc::clone(weights))?;
    let value = g.value(loss).data()[0];
    if let Some(acc) = grads {
        let mut gr = g.backward(loss)?;
        for (a, v) in acc.iter_mut().zip(&vars) {
            if let Some(t) = gr.take(*v) {
                a.add_assign(&t);
            }
        }
    }
    Ok(value)
}

/// Trains `model` on the labeled frames `train`, validating on `val`.
pub fn train_toy(
    mut model: Model,
    ds: &Dataset,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.config.num_classes;
    let weights = dataset_class_weights(ds, train, classes)?;
    let w = Rc::new(weights.weights.clone());
    let poses = PoseProvider::new(ds, cfg.pose_source)?;
    let spec = cfg.sequence_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.precision == Precision::F32 {
        model.round_to_f32();
    }
    let mut adam = Adam::new(cfg.momentum, 0.999);
    let eval_cfg = EvalConfig {
        sequence: spec,
        pose_source: cfg.pose_source,
        seed: cfg.seed ^ 0x7a1,
        threads: 1,
    };
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut log = Vec::with_capacity(cfg.epochs);
    let shapes: Vec<[usize; 4]> = model.named_params().iter().map(|(_, t)| t.shape()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let mut order = train.to_vec();
        order.shuffle(&mut rng);
        let samples = draw_samples(ds, &order, &spec, &poses, &mut rng)?;
        let mut total = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            let mut grads: Vec<Tensor4> = shapes.iter().map(|s| Tensor4::zeros(*s)).collect();
            for s in batch {
                total += sample_loss(&model, s, ds, &w, Some(&mut grads))?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale_assign(scale));
            let mut params: Vec<&mut Tensor4> = Vec::with_capacity(grads.len());
            collect_params_mut(&mut model, &mut params);
            adam.step(lr, &mut params, &grads);
            if cfg.precision == Precision::F32 {
                model.round_to_f32();
            }
        }
        let loss = total / samples.len() as f64;
        let validate = (epoch + 1) % cfg.validate_every.max(1) == 0 || epoch + 1 == cfg.epochs;
        let val_miou = if validate && !val.is_empty() {
            let r = evaluate(&model, ds, val, &eval_cfg, Some(&weights))?;
            Some(r.iou.miou)
        } else {
            None
        };
        log::info!(
            "{} epoch {epoch}: lr {lr:.2e} loss {loss:.4}{}",
            model.config.variant,
            val_miou.map(|m| format!(" val mIoU {m:.2}")).unwrap_or_default()
        );
        if let Some(m) = val_miou {
            if m > best.2 {
                best = (model.clone(), epoch, m);
            }
        }
        log.push(EpochRecord {
            epoch,
            lr,
            loss,
            val_miou,
        });
    }
    if val.is_empty() {
        best = (model, cfg.epochs.saturating_sub(1), f64::NAN);
    }
    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_val_miou: best.2,
        log,
        class_weights: weights,
    })
}

fn collect_params_mut<'m>(model: &'m mut Model, out: &mut Vec<&'m mut Tensor4>) {
    for p in model.encoder.iter_mut().chain(model.decoder.iter_mut()).chain(std::iter::once(&mut model.head)) {
        out.push(&mut p.weight);
        if let Some(b) = &mut p.bias {
            out.push(b);
        }
    }
    for cell in model.fusion.values_mut() {
        let convs: Vec<&mut crate::nn::ConvParams> = match cell {
            crate::fusion::FusionCell::Ssma(p) => vec![&mut p.compress1, &mut p.expand, &mut p.compress2],
            crate::fusion::FusionCell::ConvGru(p) => {
                vec![&mut p.wz, &mut p.uz, &mut p.wr, &mut p.ur, &mut p.w, &mut p.u]
            }
        };
        for p in convs {
            out.push(&mut p.weight);
            if let Some(b) = &mut p.bias {
                out.push(b);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub sequence: SequenceSpec,
    pub pose_source: PoseSource,
    /// Seeds random spacing draws, so repeated evaluations see the same sequences.
    pub seed: u64,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sequence: SequenceSpec::default(),
            pose_source: PoseSource::GroundTruth,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou: IouReport,
    pub samples: usize,
}

/// Confusion matrix of the model's last-frame predictions over `samples`.
pub fn confusion_over(model: &Model, ds: &Dataset, samples: &[SequenceSample], threads: usize) -> Result<ConfusionMatrix> {
    let classes = model.config.num_classes;
    let one = |s: &SequenceSample| -> Result<ConfusionMatrix> {
        let logits = super::model::forward_sequence(model, &s.frames, &s.poses, &ds.intrinsics, &ds.extrinsics)?;
        let mut cm = ConfusionMatrix::new(classes);
        cm.accumulate(&s.labels.data, &predict(&logits))?;
        Ok(cm)
    };
    let threads = threads.max(1).min(samples.len().max(1));
    let mut total = ConfusionMatrix::new(classes);
    if threads == 1 {
        for s in samples {
            total.merge(&one(s)?)?;
        }
        return Ok(total);
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<Result<ConfusionMatrix>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|c| {
                scope.spawn(move || {
                    let mut cm = ConfusionMatrix::new(classes);
                    for s in c {
                        cm.merge(&one(s)?)?;
                    }
                    Ok(cm)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    for p in parts {
        total.merge(&p?)?;
    }
    Ok(total)
}

/// Evaluates on sequences ending at the labeled frames `indices`.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    indices: &[usize],
    cfg: &EvalConfig,
    weights: Option<&ClassWeights>,
) -> Result<EvalReport> {
    let poses = PoseProvider::new(ds, cfg.pose_source)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = draw_samples(ds, indices, &cfg.sequence, &poses, &mut rng)?;
    let cm = confusion_over(model, ds, &samples, cfg.threads)?;
    Ok(EvalReport {
        iou: iou_from_confusion(&cm, weights)?,
        samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::Split;
    use crate::pipeline::model::{build_model, ModelConfig, Variant};
    use crate::synthscene::{Preset, Scene, SceneConfig};

    fn small_dataset() -> Dataset {
        let cfg = SceneConfig {
            image_w: 32,
            image_h: 16,
            label_every: 2,
            ..SceneConfig::preset(Preset::Sb, 30, 11)
        };
        Scene::new(cfg).unwrap().dataset().unwrap()
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 1e-3);
        assert_eq!(cfg.learning_rate(99), 1e-3);
        assert!((cfg.learning_rate(250) - 6.4e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let ds = small_dataset();
        let split = Split::along_trajectory(&ds, 3).unwrap();
        let mut model = build_model(&ModelConfig::new(Variant::StGru, 3), 1).unwrap();
        model.round_to_f32();
        let cfg = TrainConfig {
            epochs: 2,
            initial_lr: 0.0,
            sequence_length: 3,
            ..Default::default()
        };
        let out = train_toy(model.clone(), &ds, &split.train, &[], &cfg).unwrap();
        assert_eq!(out.model, model);
    }

    #[test]
    fn loss_decreases_on_small_set() {
        let ds = small_dataset();
        let train: Vec<usize> = ds.labeled_indices().into_iter().filter(|&i| i >= 2).take(10).collect();
        assert_eq!(train.len(), 10);
        let model = build_model(&ModelConfig::new(Variant::StAtte, 3), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 10,
            initial_lr: 1e-2,
            sequence_length: 3,
            precision: Precision::F64,
            ..Default::default()
        };
        let out = train_toy(model, &ds, &train, &[], &cfg).unwrap();
        let first = out.log[0].loss;
        let last = out.log.last().unwrap().loss;
        assert!(last < 0.8 * first, "{first} -> {last}");
    }

    #[test]
    fn empty_training_set_rejected() {
        let ds = small_dataset();
        let model = build_model(&ModelConfig::new(Variant::Bl, 3), 0).unwrap();
        assert!(matches!(
            train_toy(model, &ds, &[], &[], &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn evaluation_is_order_independent_and_parallel_safe() {
        let ds = small_dataset();
        let model = build_model(&ModelConfig::new(Variant::TGru, 3), 3).unwrap();
        let idx: Vec<usize> = ds.labeled_indices().into_iter().filter(|&i| i >= 4).collect();
        let cfg = EvalConfig::default();
        let a = evaluate(&model, &ds, &idx, &cfg, None).unwrap();
        let mut rev = idx.clone();
        rev.reverse();
        let b = evaluate(&model, &ds, &rev, &cfg, None).unwrap();
        let c = evaluate(&model, &ds, &idx, &EvalConfig { threads: 3, ..cfg }, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.samples, idx.len());
    }
}
