use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Graph, Mat};
use super::{to_predicted_set, Model};
use crate::error::{Error, Result};
use crate::matching::{match_and_loss, LossBreakdown, LossWeights, TruthSet};
use crate::par;
use crate::scene::derive_seed;

/// One standardized input with its normalized ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Mat,
    pub truth: TruthSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_breakdown: LossBreakdown,
}

/// Loss of one sample without gradients.
pub fn sample_loss(model: &Model, sample: &TrainSample, weights: &LossWeights) -> Result<LossBreakdown> {
    let raw = model.forward_raw(&sample.input)?;
    let (_, loss, _) = match_and_loss(&raw, &sample.truth, &model.norm, weights)?;
    Ok(loss)
}

/// Loss and its gradient with respect to every parameter slot.
pub fn sample_loss_grad(model: &Model, sample: &TrainSample, weights: &LossWeights) -> Result<(LossBreakdown, Vec<Mat>)> {
    let mut g = Graph::new();
    let (geo, logits) = model.build_graph(&mut g, &sample.input);
    let raw = to_predicted_set(g.value(geo), g.value(logits));
    let (_, loss, dl) = match_and_loss(&raw, &sample.truth, &model.norm, weights)?;
    let n = raw.len();
    let geo_seed = Mat::from_vec(n, 4, dl.geometry.iter().flatten().copied().collect());
    let c = model.config.n_classes;
    let logit_seed = Mat::from_vec(n, c, dl.logits.iter().flatten().copied().collect());
    let mut grads: Vec<Mat> = model.params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
    for (slot, gm) in g.backward(&[(geo, geo_seed), (logits, logit_seed)]) {
        for (a, b) in grads[slot].data.iter_mut().zip(&gm.data) {
            *a += b;
        }
    }
    Ok((loss, grads))
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Mat], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (i, (w, &gi)) in p.data.iter_mut().zip(&g.data).enumerate() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * self.weight_decay * *w;
                *w -= self.lr * (*m / b1c) / ((*v / b2c).sqrt() + self.eps);
            }
        }
    }
}

fn clip(grads: &mut [Mat], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.data.iter_mut()).for_each(|v| *v *= s);
    }
}

fn mean_breakdown(items: &[LossBreakdown], weights: LossWeights) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut out = LossBreakdown { weights, ..Default::default() };
    for b in items {
        out.l1 += b.l1;
        out.giou += b.giou;
        out.nll += b.nll;
        out.total += b.total;
    }
    out.l1 /= n;
    out.giou /= n;
    out.nll /= n;
    out.total /= n;
    out
}

/// Mini-batch training. Each epoch shuffles the training indices with a seed
/// derived from the model seed and epoch; per-sample gradients are computed
/// in parallel and summed in batch order. `on_epoch` sees every log entry as
/// it is produced.
pub fn train(
    model: &mut Model,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let cfg = model.config.clone();
    let weights = cfg.loss_weights;
    let mut opt = AdamW::new(&model.params, cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(train_set.len());
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = par::map_slice(batch, |&i| sample_loss_grad(model, &train_set[i], &weights));
            let mut total: Vec<Mat> = model.params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
            for r in results {
                let (loss, grads) = r?;
                if !loss.total.is_finite() || grads.iter().flat_map(|g| &g.data).any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        detail: format!("non-finite loss or gradient (loss {})", loss.total),
                    });
                }
                for (t, g) in total.iter_mut().zip(&grads) {
                    for (a, b) in t.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
                epoch_losses.push(loss);
            }
            let scale = 1.0 / batch.len() as f64;
            total.iter_mut().flat_map(|g| g.data.iter_mut()).for_each(|v| *v *= scale);
            clip(&mut total, cfg.grad_clip);
            opt.step(&mut model.params, &total);
        }
        let train_breakdown = mean_breakdown(&epoch_losses, weights);
        let val_loss = if val_set.is_empty() {
            None
        } else {
            let losses = par::map_slice(val_set, |s| sample_loss(model, s, &weights));
            let mut sum = 0.0;
            for l in losses {
                sum += l?.total;
            }
            Some(sum / val_set.len() as f64)
        };
        let entry = EpochLog { epoch, train_loss: train_breakdown.total, val_loss, train_breakdown };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Relative-error floor: `|a − n| / max(|a|, |n|, floor)`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare reverse-mode gradients of the total loss against central
/// differences with step `h` for every parameter entry.
pub fn grad_check(model: &Model, sample: &TrainSample, weights: &LossWeights, h: f64) -> Result<GradCheckReport> {
    let (_, grads) = sample_loss_grad(model, sample, weights)?;
    let coords: Vec<(usize, usize)> =
        model.params.iter().enumerate().flat_map(|(s, p)| (0..p.data.len()).map(move |i| (s, i))).collect();
    let numeric = par::map_slice(&coords, |&(s, i)| -> Result<f64> {
        let mut m = model.clone();
        let x0 = m.params[s].data[i];
        m.params[s].data[i] = x0 + h;
        let fp = sample_loss(&m, sample, weights)?.total;
        m.params[s].data[i] = x0 - h;
        let fm = sample_loss(&m, sample, weights)?.total;
        Ok((fp - fm) / (2.0 * h))
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    for (&(s, i), n) in coords.iter().zip(numeric) {
        let n = n?;
        let a = grads[s].data[i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR);
        if rel > report.max_rel_error || report.worst_parameter.is_empty() {
            report.max_rel_error = rel;
            report.worst_parameter = model.param_specs()[s].name.clone();
            report.worst_index = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Standardizer;
    use crate::matching::GeometryNorm;
    use crate::model::ModelConfig;
    use rand_distr::{Distribution, Normal};

    fn tiny(seed: u64) -> Model {
        let cfg = ModelConfig {
            input_channels: 6,
            grid: (2, 2),
            hidden_dim: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ff_dim: 8,
            n_queries: 4,
            n_classes: 4,
            seed,
            ..Default::default()
        };
        let norm = GeometryNorm { lo: [-1.5, -3.5, 1.75, 0.25], hi: [1.5, 3.5, 2.25, 0.5] };
        Model::init(cfg, Standardizer::identity(6), norm).unwrap()
    }

    fn sample(seed: u64) -> TrainSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        TrainSample {
            input: Mat::from_vec(4, 6, (0..24).map(|_| d.sample(&mut rng)).collect()),
            truth: TruthSet {
                geometry: vec![[0.2, 0.7, 0.4, 0.6], [0.8, 0.3, 0.5, 0.3]],
                labels: vec![1, 3],
            },
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = tiny(3);
        let r = grad_check(&m, &sample(4), &LossWeights::default(), 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn truth_permutation_is_bit_exact() {
        let m = tiny(5);
        let s = sample(6);
        let mut p = s.clone();
        p.truth.geometry.reverse();
        p.truth.labels.reverse();
        let w = LossWeights::default();
        let (la, ga) = sample_loss_grad(&m, &s, &w).unwrap();
        let (lb, gb) = sample_loss_grad(&m, &p, &w).unwrap();
        assert_eq!(la.total.to_bits(), lb.total.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn l1_weight_scales_gradient_linearly() {
        let m = tiny(7);
        let s = sample(8);
        let one = LossWeights { l1: 1.0, giou: 0.0, class: 0.0, no_object: 0.0 };
        let two = LossWeights { l1: 2.0, ..one };
        let (_, ga) = sample_loss_grad(&m, &s, &one).unwrap();
        let (_, gb) = sample_loss_grad(&m, &s, &two).unwrap();
        for (a, b) in ga.iter().zip(&gb) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn memorizes_one_sample_deterministically() {
        let mut a = tiny(9);
        a.config.learning_rate = 1e-3;
        a.config.epochs = 3000;
        a.config.batch_size = 1;
        a.config.grad_clip = 0.0;
        let mut b = a.clone();
        let s = [sample(10)];
        let log = train(&mut a, &s, &[], |_| {}).unwrap();
        train(&mut b, &s, &[], |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        let last = &log.last().unwrap().train_breakdown;
        assert!(last.l1 < 1e-2 && last.giou < 1e-2, "{last:?}");
        assert!(last.total < log[0].train_loss);
    }
}
