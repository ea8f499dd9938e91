//! Hungarian assignment and the DETR-style set loss over spheres.
//!
//! Class index 0 is the no-object class ∅; materials use their 1-based
//! class indices.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::{giou_unchecked, Sphere};
use crate::scene::Aabb;
use crate::vec3::Vec3;

pub const NO_OBJECT: usize = 0;

/// Optimal assignment of rows to columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Column assigned to each row, `None` when the row is left over.
    pub assignment: Vec<Option<usize>>,
    pub total_cost: f64,
}

impl MatchResult {
    /// `(row, column)` pairs in ascending row order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c)))
    }

    pub fn unmatched_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.assignment.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(i, _)| i)
    }

    pub fn n_matched(&self) -> usize {
        self.assignment.iter().flatten().count()
    }
}

/// Minimum-cost assignment on an N×M matrix; `min(N, M)` pairs are matched.
/// Shortest augmenting path with potentials; among equal reduced costs the
/// lowest column index wins, so results are deterministic.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    if cost.iter().any(|r| r.len() != m) {
        return Err(invalid("cost matrix rows have different lengths"));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("cost matrix has non-finite entries"));
    }
    if n == 0 || m == 0 {
        return Ok(MatchResult { assignment: vec![None; n], total_cost: 0.0 });
    }
    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };
    let row_to_col = solve_rows_le_cols(rows, cols, at);

    let mut assignment = vec![None; n];
    if transposed {
        for (r, &c) in row_to_col.iter().enumerate() {
            assignment[c] = Some(r);
        }
    } else {
        for (r, &c) in row_to_col.iter().enumerate() {
            assignment[r] = Some(c);
        }
    }
    let total_cost = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| cost[i][c]))
        .sum();
    Ok(MatchResult { assignment, total_cost })
}

// rows ≤ cols; returns the column of every row
fn solve_rows_le_cols<F: Fn(usize, usize) -> f64>(rows: usize, cols: usize, at: F) -> Vec<usize> {
    // 1-based arrays, column 0 is the virtual start
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Affine map between physical sphere parameters and the unit hypercube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryNorm {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl GeometryNorm {
    pub fn new(bounds: &Aabb, radius_range: (f64, f64)) -> Self {
        Self {
            lo: [bounds.min.x, bounds.min.y, bounds.min.z, radius_range.0],
            hi: [bounds.max.x, bounds.max.y, bounds.max.z, radius_range.1],
        }
    }

    pub fn span(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn normalize(&self, s: &Sphere) -> [f64; 4] {
        let a = s.to_array();
        std::array::from_fn(|k| {
            let w = self.span(k);
            if w > 0.0 {
                (a[k] - self.lo[k]) / w
            } else {
                0.5
            }
        })
    }

    pub fn denormalize(&self, g: &[f64; 4]) -> Sphere {
        let a: [f64; 4] = std::array::from_fn(|k| self.lo[k] + g[k] * self.span(k));
        Sphere { center: Vec3::new(a[0], a[1], a[2]), radius: a[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub giou: f64,
    pub class: f64,
    /// Down-weight on the ∅ term of unmatched predictions.
    pub no_object: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l1: 5.0, giou: 2.0, class: 1.0, no_object: 0.1 }
    }
}

/// N predictions: normalized geometry plus class logits over `L + 1` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSet {
    pub geometry: Vec<[f64; 4]>,
    pub logits: Vec<Vec<f64>>,
}

impl PredictedSet {
    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }
}

/// Ground truth in normalized geometry with 1-based material labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSet {
    pub geometry: Vec<[f64; 4]>,
    pub labels: Vec<usize>,
}

impl TruthSet {
    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn l1(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_sets(pred: &PredictedSet, truth: &TruthSet) -> Result<()> {
    if pred.geometry.len() != pred.logits.len() || truth.geometry.len() != truth.labels.len() {
        return Err(invalid("set fields have inconsistent lengths"));
    }
    let classes = pred.logits.first().map_or(0, |l| l.len());
    if pred.logits.iter().any(|l| l.len() != classes) {
        return Err(invalid("predictions disagree on class count"));
    }
    if !pred.is_empty() && truth.labels.iter().any(|&l| l == NO_OBJECT || l >= classes) {
        return Err(invalid("truth label outside material classes"));
    }
    let finite = pred.geometry.iter().flatten().chain(pred.logits.iter().flatten()).chain(truth.geometry.iter().flatten());
    if finite.into_iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite prediction or truth"));
    }
    Ok(())
}

/// `cost(i, j) = λ_l1‖p̂_i − p_j‖₁ + λ_giou(1 − giou) − λ_cls p̂_i(l_j)`.
/// GIoU is evaluated on the denormalized (metric) spheres.
pub fn matching_cost(pred: &PredictedSet, truth: &TruthSet, norm: &GeometryNorm, w: &LossWeights) -> Result<Vec<Vec<f64>>> {
    check_sets(pred, truth)?;
    let truth_spheres: Vec<Sphere> = truth.geometry.iter().map(|g| norm.denormalize(g)).collect();
    Ok(pred
        .geometry
        .iter()
        .zip(&pred.logits)
        .map(|(g, z)| {
            let probs = softmax(z);
            let s = norm.denormalize(g);
            truth
                .geometry
                .iter()
                .zip(&truth_spheres)
                .zip(&truth.labels)
                .map(|((t, ts), &l)| {
                    w.l1 * l1(g, t) + w.giou * (1.0 - giou_unchecked(&s, ts).giou) - w.class * probs[l]
                })
                .collect()
        })
        .collect())
}

/// Geometry-only cost `λ_l1‖Δ‖₁ + λ_giou(1 − giou)` between normalized sets.
pub fn geometry_cost(pred: &[[f64; 4]], truth: &[[f64; 4]], norm: &GeometryNorm, w: &LossWeights) -> Vec<Vec<f64>> {
    pred.iter()
        .map(|g| {
            let s = norm.denormalize(g);
            truth
                .iter()
                .map(|t| w.l1 * l1(g, t) + w.giou * (1.0 - giou_unchecked(&s, &norm.denormalize(t)).giou))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub giou: f64,
    pub nll: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Gradient of the total loss with respect to every prediction input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub geometry: Vec<[f64; 4]>,
    pub logits: Vec<Vec<f64>>,
}

/// Set loss for a given match (rows = predictions, columns = truths).
/// Components are summed in ascending prediction index and divided by
/// `max(M, 1)`; the `nll` component includes the down-weighted ∅ terms.
pub fn set_loss(
    pred: &PredictedSet,
    truth: &TruthSet,
    m: &MatchResult,
    norm: &GeometryNorm,
    w: &LossWeights,
) -> Result<(LossBreakdown, LossGradient)> {
    check_sets(pred, truth)?;
    if m.assignment.len() != pred.len() {
        return Err(invalid("match does not cover the prediction set"));
    }
    let scale = 1.0 / truth.len().max(1) as f64;
    let mut out = LossBreakdown { weights: *w, ..Default::default() };
    let mut grad = LossGradient {
        geometry: vec![[0.0; 4]; pred.len()],
        logits: pred.logits.iter().map(|z| vec![0.0; z.len()]).collect(),
    };
    for i in 0..pred.len() {
        let z = &pred.logits[i];
        let logp = log_softmax(z);
        let (target, weight) = match m.assignment[i] {
            Some(j) => {
                let (g, t) = (&pred.geometry[i], &truth.geometry[j]);
                out.l1 += l1(g, t);
                let r = giou_unchecked(&norm.denormalize(g), &norm.denormalize(t));
                out.giou += 1.0 - r.giou;
                for k in 0..4 {
                    let sign = if g[k] > t[k] {
                        1.0
                    } else if g[k] < t[k] {
                        -1.0
                    } else {
                        0.0
                    };
                    grad.geometry[i][k] = scale * (w.l1 * sign - w.giou * r.gradient[k] * norm.span(k));
                }
                (truth.labels[j], 1.0)
            }
            None => (NO_OBJECT, w.no_object),
        };
        out.nll += weight * -logp[target];
        for (c, gz) in grad.logits[i].iter_mut().enumerate() {
            let onehot = if c == target { 1.0 } else { 0.0 };
            *gz = scale * w.class * weight * (logp[c].exp() - onehot);
        }
    }
    out.l1 *= scale;
    out.giou *= scale;
    out.nll *= scale;
    out.total = w.l1 * out.l1 + w.giou * out.giou + w.class * out.nll;
    Ok((out, grad))
}

/// Match with [`matching_cost`] then evaluate [`set_loss`].
pub fn match_and_loss(
    pred: &PredictedSet,
    truth: &TruthSet,
    norm: &GeometryNorm,
    w: &LossWeights,
) -> Result<(MatchResult, LossBreakdown, LossGradient)> {
    let cost = matching_cost(pred, truth, norm, w)?;
    let m = if truth.is_empty() {
        MatchResult { assignment: vec![None; pred.len()], total_cost: 0.0 }
    } else {
        hungarian(&cost)?
    };
    let (loss, grad) = set_loss(pred, truth, &m, norm, w)?;
    Ok((m, loss, grad))
}
