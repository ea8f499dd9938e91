//! Detection transformer over the antenna grid: a linear projection of the
//! per-antenna features plus fixed 2D sinusoidal positions feeds a pre-norm
//! encoder; learned object queries decode into sphere geometry (sigmoid,
//! normalized) and material logits (class 0 is ∅).

pub mod tape;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::{FeatureMap, Standardizer};
use crate::geom::Sphere;
use crate::matching::{softmax, GeometryNorm, LossWeights, PredictedSet, NO_OBJECT};
use tape::{Graph, Mat, NodeId};

pub use train::{
    grad_check, sample_loss, sample_loss_grad, train, AdamW, EpochLog, GradCheckReport, TrainSample, GRAD_CHECK_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature channels per antenna (`N_f · C`).
    pub input_channels: usize,
    /// (columns along x, rows along z) of the antenna grid.
    pub grid: (usize, usize),
    pub hidden_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ff_dim: usize,
    pub n_queries: usize,
    /// Material classes plus ∅.
    pub n_classes: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 20,
            grid: (8, 8),
            hidden_dim: 32,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ff_dim: 64,
            n_queries: 16,
            n_classes: 6,
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 100,
            grad_clip: 0.1,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    /// Reference hyperparameters of the full-size model.
    pub fn paper_scale() -> Self {
        Self {
            hidden_dim: 64,
            heads: 8,
            encoder_layers: 4,
            decoder_layers: 4,
            ff_dim: 512,
            n_queries: 64,
            batch_size: 128,
            epochs: 300,
            ..Self::default()
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_channels == 0 || self.n_antennas() == 0 {
            return bad("model input shape must be non-empty");
        }
        if self.hidden_dim == 0 || self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return bad("hidden_dim must be a positive multiple of heads");
        }
        if self.hidden_dim % 4 != 0 {
            return bad("hidden_dim must be divisible by 4 for the 2D positional encoding");
        }
        if self.ff_dim == 0 || self.n_queries == 0 || self.n_classes < 2 {
            return bad("ff_dim, n_queries must be ≥ 1 and n_classes ≥ 2");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("optimizer settings out of range");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        let w = &self.loss_weights;
        if [w.l1, w.giou, w.class, w.no_object].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("loss weights must be finite and ≥ 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    n1: Norm,
    attn: Attention,
    n2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    n1: Norm,
    self_attn: Attention,
    n2: Norm,
    cross: Attention,
    n3: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    input: Linear,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    queries: usize,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    geo_hidden: Linear,
    geo_out: Linear,
    class_out: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: Init,
}

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec { name, rows, cols, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.w"), fan_in, fan_out, Init::Xavier),
            b: self.add(format!("{name}.b"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.g"), 1, d, Init::Ones),
            b: self.add(format!("{name}.b"), 1, d, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let d = c.hidden_dim;
    let mut b = Builder::default();
    let input = b.linear("input", c.input_channels, d);
    let encoder = (0..c.encoder_layers)
        .map(|i| EncoderLayer {
            n1: b.norm(&format!("enc{i}.n1"), d),
            attn: b.attention(&format!("enc{i}.attn"), d),
            n2: b.norm(&format!("enc{i}.n2"), d),
            ff1: b.linear(&format!("enc{i}.ff1"), d, c.ff_dim),
            ff2: b.linear(&format!("enc{i}.ff2"), c.ff_dim, d),
        })
        .collect();
    let encoder_norm = b.norm("enc.norm", d);
    let queries = b.add("queries".into(), c.n_queries, d, Init::Normal(1.0));
    let decoder = (0..c.decoder_layers)
        .map(|i| DecoderLayer {
            n1: b.norm(&format!("dec{i}.n1"), d),
            self_attn: b.attention(&format!("dec{i}.self"), d),
            n2: b.norm(&format!("dec{i}.n2"), d),
            cross: b.attention(&format!("dec{i}.cross"), d),
            n3: b.norm(&format!("dec{i}.n3"), d),
            ff1: b.linear(&format!("dec{i}.ff1"), d, c.ff_dim),
            ff2: b.linear(&format!("dec{i}.ff2"), c.ff_dim, d),
        })
        .collect();
    let decoder_norm = b.norm("dec.norm", d);
    let geo_hidden = b.linear("geo.hidden", d, d);
    let geo_out = b.linear("geo.out", d, 4);
    let class_out = b.linear("class.out", d, c.n_classes);
    let layout = Layout {
        input,
        encoder,
        encoder_norm,
        queries,
        decoder,
        decoder_norm,
        geo_hidden,
        geo_out,
        class_out,
    };
    (layout, b.specs)
}

/// Fixed 2D sinusoidal encoding: the first half of the channels encodes the
/// column (x) index, the second half the row (z) index, each as sin/cos
/// pairs over geometrically spaced frequencies.
pub fn positional_encoding(grid: (usize, usize), d: usize) -> Mat {
    let (cols, rows) = grid;
    let half = d / 2;
    let mut pe = Mat::zeros(cols * rows, d);
    for r in 0..rows {
        for c in 0..cols {
            let n = r * cols + c;
            for (offset, idx, count) in [(0, c, cols), (half, r, rows)] {
                let pos = (idx as f64 + 0.5) / count as f64 * std::f64::consts::TAU;
                for i in 0..half / 2 {
                    let freq = 10000f64.powf(-((2 * i) as f64) / half as f64);
                    pe.data[n * d + offset + 2 * i] = (pos * freq).sin();
                    pe.data[n * d + offset + 2 * i + 1] = (pos * freq).cos();
                }
            }
        }
    }
    pe
}

/// One query's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query: usize,
    /// Normalized `(x, y, z, r)` in [0, 1]⁴.
    pub normalized: [f64; 4],
    pub sphere: Sphere,
    /// Softmax over ∅ (index 0) and the materials.
    pub class_probs: Vec<f64>,
    /// Most probable material (∅ excluded).
    pub label: usize,
    /// Probability of `label`.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub tau: f64,
    pub predictions: Vec<Prediction>,
}

/// Keep predictions with confidence ≥ τ, in query order.
pub fn filter_detections(predictions: &[Prediction], tau: f64) -> DetectionSet {
    DetectionSet {
        tau,
        predictions: predictions.iter().filter(|p| p.confidence >= tau).cloned().collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Mat>,
    pub standardizer: Standardizer,
    pub norm: GeometryNorm,
    specs: Vec<ParamSpec>,
    layout: Layout,
    pe: Mat,
}

impl Model {
    /// Fresh weights drawn from `config.seed`.
    pub fn init(config: ModelConfig, standardizer: Standardizer, norm: GeometryNorm) -> Result<Self> {
        config.validate()?;
        let (_, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Xavier => {
                        let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                        let u = Uniform::new_inclusive(-a, a).expect("finite bound");
                        (0..n).map(|_| u.sample(&mut rng)).collect()
                    }
                    Init::Normal(sd) => {
                        let d = Normal::new(0.0, sd).expect("finite sd");
                        (0..n).map(|_| d.sample(&mut rng)).collect()
                    }
                };
                Mat::from_vec(s.rows, s.cols, data)
            })
            .collect();
        Self::from_parts(config, params, standardizer, norm)
    }

    /// Rebuild from stored weights; shapes must match the configuration.
    pub fn from_parts(config: ModelConfig, params: Vec<Mat>, standardizer: Standardizer, norm: GeometryNorm) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if params.len() != specs.len()
            || params.iter().zip(&specs).any(|(p, s)| p.rows != s.rows || p.cols != s.cols || p.data.len() != s.rows * s.cols)
        {
            return Err(invalid("parameter shapes do not match the model configuration"));
        }
        if standardizer.mean.len() != config.input_channels || standardizer.std.len() != config.input_channels {
            return Err(invalid("standardizer does not match input channels"));
        }
        let pe = positional_encoding(config.grid, config.hidden_dim);
        Ok(Self { config, params, standardizer, norm, specs, layout, pe })
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Zero the final geometry and class layers.
    pub fn zero_heads(&mut self) {
        for l in [self.layout.geo_out, self.layout.class_out] {
            self.params[l.w].data.fill(0.0);
            self.params[l.b].data.fill(0.0);
        }
    }

    /// Standardize a feature map into the network input.
    pub fn prepare_input(&self, features: &FeatureMap) -> Result<Mat> {
        if features.channels() != self.config.input_channels || features.grid != self.config.grid {
            return Err(invalid(format!(
                "feature map {}×{} on grid {:?} does not match model input {}×{} on grid {:?}",
                features.n_antennas,
                features.channels(),
                features.grid,
                self.config.n_antennas(),
                self.config.input_channels,
                self.config.grid
            )));
        }
        features.validate()?;
        Ok(Mat::from_vec(features.n_antennas, features.channels(), self.standardizer.apply(features)))
    }

    fn linear(&self, g: &mut Graph, x: NodeId, l: Linear) -> NodeId {
        let w = g.param(l.w, &self.params[l.w]);
        let b = g.param(l.b, &self.params[l.b]);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn norm_layer(&self, g: &mut Graph, x: NodeId, n: Norm) -> NodeId {
        let gam = g.param(n.g, &self.params[n.g]);
        let bet = g.param(n.b, &self.params[n.b]);
        g.layer_norm(x, gam, bet)
    }

    fn attention(&self, g: &mut Graph, q_src: NodeId, kv_src: NodeId, a: Attention) -> NodeId {
        let q = self.linear(g, q_src, a.q);
        let k = self.linear(g, kv_src, a.k);
        let v = self.linear(g, kv_src, a.v);
        let heads = self.config.heads;
        let dh = self.config.hidden_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<NodeId> = (0..heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let s = g.matmul_bt(qh, kh);
                let s = g.scale(s, scale);
                let p = g.softmax_rows(s);
                g.matmul(p, vh)
            })
            .collect();
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.linear(g, cat, a.o)
    }

    fn feed_forward(&self, g: &mut Graph, x: NodeId, ff1: Linear, ff2: Linear) -> NodeId {
        let h = self.linear(g, x, ff1);
        let h = g.relu(h);
        self.linear(g, h, ff2)
    }

    /// Record the forward pass on `g`; returns the (geometry, logits) nodes,
    /// each with one row per query.
    pub fn build_graph(&self, g: &mut Graph, input: &Mat) -> (NodeId, NodeId) {
        let l = &self.layout;
        let x = g.input(input.clone());
        let pe = g.input(self.pe.clone());
        let h = self.linear(g, x, l.input);
        let mut h = g.add(h, pe);
        for e in &l.encoder {
            let a = self.norm_layer(g, h, e.n1);
            let a = self.attention(g, a, a, e.attn);
            h = g.add(h, a);
            let b = self.norm_layer(g, h, e.n2);
            let b = self.feed_forward(g, b, e.ff1, e.ff2);
            h = g.add(h, b);
        }
        let memory = self.norm_layer(g, h, l.encoder_norm);
        let mut t = g.param(l.queries, &self.params[l.queries]);
        for d in &l.decoder {
            let a = self.norm_layer(g, t, d.n1);
            let a = self.attention(g, a, a, d.self_attn);
            t = g.add(t, a);
            let b = self.norm_layer(g, t, d.n2);
            let b = self.attention(g, b, memory, d.cross);
            t = g.add(t, b);
            let c = self.norm_layer(g, t, d.n3);
            let c = self.feed_forward(g, c, d.ff1, d.ff2);
            t = g.add(t, c);
        }
        let t = self.norm_layer(g, t, l.decoder_norm);
        let gh = self.linear(g, t, l.geo_hidden);
        let gh = g.relu(gh);
        let go = self.linear(g, gh, l.geo_out);
        let geometry = g.sigmoid(go);
        let logits = self.linear(g, t, l.class_out);
        (geometry, logits)
    }

    /// Raw network output for a standardized input.
    pub fn forward_raw(&self, input: &Mat) -> Result<PredictedSet> {
        if input.rows != self.config.n_antennas() || input.cols != self.config.input_channels {
            return Err(invalid("input shape does not match model"));
        }
        let mut g = Graph::new();
        let (geo, logits) = self.build_graph(&mut g, input);
        Ok(to_predicted_set(g.value(geo), g.value(logits)))
    }

    /// Exactly `n_queries` predictions for one feature map.
    pub fn forward(&self, features: &FeatureMap) -> Result<Vec<Prediction>> {
        let input = self.prepare_input(features)?;
        Ok(self.decode(&self.forward_raw(&input)?))
    }

    /// Turn raw outputs into predictions with labels and confidences.
    pub fn decode(&self, raw: &PredictedSet) -> Vec<Prediction> {
        raw.geometry
            .iter()
            .zip(&raw.logits)
            .enumerate()
            .map(|(q, (geo, z))| {
                let probs = softmax(z);
                let (label, confidence) = material_argmax(&probs);
                Prediction {
                    query: q,
                    normalized: *geo,
                    sphere: self.norm.denormalize(geo),
                    class_probs: probs,
                    label,
                    confidence,
                }
            })
            .collect()
    }

    pub fn predict_and_filter(&self, features: &FeatureMap, tau: f64) -> Result<DetectionSet> {
        Ok(filter_detections(&self.forward(features)?, tau))
    }
}

/// Most probable material class (index ≥ 1), first one on ties.
pub fn material_argmax(probs: &[f64]) -> (usize, f64) {
    let mut best = (NO_OBJECT, f64::NEG_INFINITY);
    for (c, &p) in probs.iter().enumerate().skip(1) {
        if p > best.1 {
            best = (c, p);
        }
    }
    if best.0 == NO_OBJECT {
        (NO_OBJECT, 0.0)
    } else {
        best
    }
}

pub(crate) fn to_predicted_set(geo: &Mat, logits: &Mat) -> PredictedSet {
    PredictedSet {
        geometry: (0..geo.rows).map(|i| [geo.at(i, 0), geo.at(i, 1), geo.at(i, 2), geo.at(i, 3)]).collect(),
        logits: (0..logits.rows).map(|i| logits.row(i).to_vec()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            input_channels: 10,
            grid: (2, 2),
            hidden_dim: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ff_dim: 12,
            n_queries: 5,
            n_classes: 4,
            ..Default::default()
        };
        let norm = GeometryNorm { lo: [-1.5, -3.5, 1.75, 0.25], hi: [1.5, 3.5, 2.25, 0.5] };
        Model::init(cfg, Standardizer::identity(10), norm).unwrap()
    }

    fn input(m: &Model, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        let n = m.config.n_antennas() * m.config.input_channels;
        Mat::from_vec(m.config.n_antennas(), m.config.input_channels, (0..n).map(|_| d.sample(&mut rng)).collect())
    }

    #[test]
    fn outputs_n_simplex_predictions() {
        let m = tiny();
        let out = m.decode(&m.forward_raw(&input(&m, 1)).unwrap());
        assert_eq!(out.len(), 5);
        for p in &out {
            assert!((p.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.normalized.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(p.label >= 1);
        }
    }

    #[test]
    fn zero_heads_give_centre_and_uniform() {
        let mut m = tiny();
        m.zero_heads();
        let out = m.decode(&m.forward_raw(&input(&m, 2)).unwrap());
        for p in &out {
            assert_eq!(p.normalized, [0.5; 4]);
            assert!(p.class_probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn query_permutation_is_equivariant() {
        let m = tiny();
        let x = input(&m, 3);
        let base = m.forward_raw(&x).unwrap();
        let mut p = m.clone();
        let q = p.layout.queries;
        let perm = [3, 0, 4, 1, 2];
        let orig = m.params[q].clone();
        for (i, &src) in perm.iter().enumerate() {
            p.params[q].row_mut(i).copy_from_slice(orig.row(src));
        }
        let out = p.forward_raw(&x).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for k in 0..4 {
                assert!((out.geometry[i][k] - base.geometry[src][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn threshold_filtering() {
        let mk = |c: f64| Prediction {
            query: 0,
            normalized: [0.5; 4],
            sphere: Sphere { center: crate::Vec3::ZERO, radius: 0.3 },
            class_probs: vec![1.0 - c, c],
            label: 1,
            confidence: c,
        };
        let preds = [mk(0.9), mk(0.6), mk(0.4)];
        assert_eq!(filter_detections(&preds, 0.52).predictions.len(), 2);
        assert_eq!(filter_detections(&preds, 0.0).predictions.len(), 3);
        assert_eq!(material_argmax(&[0.7, 0.1, 0.2]), (2, 0.2));
    }

    #[test]
    fn positional_encoding_is_bounded_and_distinct() {
        let pe = positional_encoding((8, 8), 32);
        for i in 0..64 {
            for j in 0..i {
                let d: f64 = pe.row(i).iter().zip(pe.row(j)).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-3);
            }
        }
        assert!(pe.data.iter().all(|v| v.abs() <= 1.0));
    }
}
