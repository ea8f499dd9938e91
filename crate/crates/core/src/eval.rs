//! Scoring detections against ground truth: geometry-only matching, absolute
//! errors with box-plot summaries, a material confusion matrix, and PLY
//! export of sphere sets.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::Sphere;
use crate::matching::{geometry_cost, hungarian, GeometryNorm, LossWeights};
use crate::model::DetectionSet;
use crate::par;
use crate::scene::SceneRecord;
use crate::vec3::Vec3;

pub const AXES: [&str; 4] = ["x", "y", "z", "r"];

/// Detections and truth of one scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneEval<'a> {
    pub scene_id: u64,
    pub detections: &'a DetectionSet,
    pub truth: &'a SceneRecord,
}

/// Quartiles (linear interpolation) and 1.5·IQR whiskers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    if values.is_empty() {
        return BoxStats::default();
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
    BoxStats {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v[0],
        q1,
        median,
        q3,
        max: v[v.len() - 1],
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: v.len() - inside.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedError {
    pub scene_id: u64,
    pub truth_index: usize,
    pub query: usize,
    /// |Δx|, |Δy|, |Δz|, |Δr| in metres.
    pub abs_error: [f64; 4],
    pub true_label: usize,
    pub predicted_label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneCounts {
    pub scene_id: u64,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_scenes: usize,
    pub class_names: Vec<String>,
    /// Mean absolute error per axis (x, y, z, r), metres.
    pub mae: [f64; 4],
    pub boxplots: [BoxStats; 4],
    /// `counts[true − 1][predicted − 1]`
    pub confusion_counts: Vec<Vec<u64>>,
    /// Row-normalized; rows without samples stay zero.
    pub confusion: Vec<Vec<f64>>,
    pub accuracy: f64,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
    pub per_scene: Vec<SceneCounts>,
    pub errors: Vec<MatchedError>,
}

/// Match each scene's detections to its truth on `λ_l1‖Δ‖₁ + λ_giou(1 − giou)`
/// in normalized coordinates (labels play no part), then aggregate. Scenes
/// are reported in ascending id order.
pub fn evaluate(
    scenes: &[SceneEval<'_>],
    class_names: &[String],
    norm: &GeometryNorm,
    weights: &LossWeights,
) -> Result<EvalReport> {
    let n_cls = class_names.len();
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.sort_by_key(|&i| scenes[i].scene_id);
    if order.windows(2).any(|w| scenes[w[0]].scene_id == scenes[w[1]].scene_id) {
        return Err(invalid("duplicate scene id in evaluation input"));
    }
    let per = par::map_slice(&order, |&i| -> Result<(SceneCounts, Vec<MatchedError>)> {
        let s = &scenes[i];
        let det = &s.detections.predictions;
        let truth = &s.truth.spheres;
        let pg: Vec<[f64; 4]> = det.iter().map(|p| norm.normalize(&p.sphere)).collect();
        let tg: Vec<[f64; 4]> = truth.iter().map(|t| norm.normalize(&t.sphere)).collect();
        let mut errors = Vec::new();
        if !det.is_empty() && !truth.is_empty() {
            let m = hungarian(&geometry_cost(&pg, &tg, norm, weights))?;
            for (d, t) in m.pairs() {
                let (a, b) = (det[d].sphere.to_array(), truth[t].sphere.to_array());
                let true_label = truth[t].material.class_index;
                let predicted_label = det[d].label;
                for l in [true_label, predicted_label] {
                    if l == 0 || l > n_cls {
                        return Err(invalid(format!("label {l} outside 1..={n_cls}")));
                    }
                }
                errors.push(MatchedError {
                    scene_id: s.scene_id,
                    truth_index: t,
                    query: det[d].query,
                    abs_error: std::array::from_fn(|k| (a[k] - b[k]).abs()),
                    true_label,
                    predicted_label,
                });
            }
        }
        errors.sort_by_key(|e| e.truth_index);
        let matched = errors.len();
        let counts = SceneCounts {
            scene_id: s.scene_id,
            matched,
            missed: truth.len() - matched,
            spurious: det.len() - matched,
        };
        Ok((counts, errors))
    });

    let mut per_scene = Vec::with_capacity(per.len());
    let mut errors = Vec::new();
    for r in per {
        let (c, e) = r?;
        per_scene.push(c);
        errors.extend(e);
    }
    let mut counts = vec![vec![0u64; n_cls]; n_cls];
    for e in &errors {
        counts[e.true_label - 1][e.predicted_label - 1] += 1;
    }
    let confusion = counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter().map(|&c| if s > 0 { c as f64 / s as f64 } else { 0.0 }).collect()
        })
        .collect();
    let correct: u64 = (0..n_cls).map(|i| counts[i][i]).sum();
    let axis = |k: usize| -> Vec<f64> { errors.iter().map(|e| e.abs_error[k]).collect() };
    let boxplots: [BoxStats; 4] = std::array::from_fn(|k| box_stats(&axis(k)));
    Ok(EvalReport {
        n_scenes: scenes.len(),
        class_names: class_names.to_vec(),
        mae: std::array::from_fn(|k| boxplots[k].mean),
        boxplots,
        confusion_counts: counts,
        confusion,
        accuracy: if errors.is_empty() { 0.0 } else { correct as f64 / errors.len() as f64 },
        matched: errors.len(),
        missed: per_scene.iter().map(|c| c.missed).sum(),
        spurious: per_scene.iter().map(|c| c.spurious).sum(),
        per_scene,
        errors,
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenes {}  matched {}  missed {}  spurious {}", self.n_scenes, self.matched, self.missed, self.spurious);
        let _ = writeln!(s, "material accuracy {:.4}", self.accuracy);
        let _ = writeln!(s, "\naxis      mae        q1     median         q3   whisk_lo   whisk_hi  outliers");
        for (k, b) in self.boxplots.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<4} {:>9.4} {:>9.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9}",
                AXES[k], self.mae[k], b.q1, b.median, b.q3, b.whisker_low, b.whisker_high, b.outliers
            );
        }
        let _ = writeln!(s, "\nconfusion (rows: true, cols: predicted)");
        let width = self.class_names.iter().map(|n| n.len()).max().unwrap_or(4).max(6);
        let _ = write!(s, "{:width$}", "");
        for n in &self.class_names {
            let _ = write!(s, " {n:>width$}");
        }
        let _ = writeln!(s);
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:width$}", self.class_names[i]);
            for v in row {
                let _ = write!(s, " {v:>width$.3}");
            }
            let _ = writeln!(s);
        }
        s
    }

    pub fn matches_csv(&self) -> String {
        let mut s = String::from("scene_id,truth_index,query,abs_dx,abs_dy,abs_dz,abs_dr,true_label,predicted_label\n");
        for e in &self.errors {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.scene_id,
                e.truth_index,
                e.query,
                e.abs_error[0],
                e.abs_error[1],
                e.abs_error[2],
                e.abs_error[3],
                e.true_label,
                e.predicted_label
            );
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for n in &self.class_names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&self.class_names[i]);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// `report.txt`, `report.json`, `matches.csv`, `confusion.csv` in `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(dir.join("report.json"), json)?;
        std::fs::write(dir.join("matches.csv"), self.matches_csv())?;
        std::fs::write(dir.join("confusion.csv"), self.confusion_csv())?;
        Ok(())
    }
}

/// One exported sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereRecord {
    pub sphere: Sphere,
    pub material: usize,
    pub confidence: f64,
}

impl From<&DetectionSet> for Vec<SphereRecord> {
    fn from(d: &DetectionSet) -> Self {
        d.predictions
            .iter()
            .map(|p| SphereRecord { sphere: p.sphere, material: p.label, confidence: p.confidence })
            .collect()
    }
}

/// ASCII PLY, one vertex per sphere with radius, material class and
/// confidence properties. Values are written in shortest round-trip form.
pub fn write_ply<W: Write>(mut w: W, spheres: &[SphereRecord], class_names: &[String]) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\ncomment sphere primitives")?;
    for (i, n) in class_names.iter().enumerate() {
        writeln!(w, "comment material {} {}", i + 1, n)?;
    }
    writeln!(w, "element vertex {}", spheres.len())?;
    for p in ["x", "y", "z", "radius"] {
        writeln!(w, "property double {p}")?;
    }
    writeln!(w, "property int material\nproperty double confidence\nend_header")?;
    for s in spheres {
        let c = s.sphere.center;
        writeln!(w, "{} {} {} {} {} {}", c.x, c.y, c.z, s.sphere.radius, s.material, s.confidence)?;
    }
    Ok(())
}

pub fn export_reconstruction(path: &Path, spheres: &[SphereRecord], class_names: &[String]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(f, spheres, class_names)
}

/// Read back a file written by [`write_ply`].
pub fn read_ply<R: BufRead>(r: R) -> Result<Vec<SphereRecord>> {
    let bad = |m: &str| Error::InvalidInput(format!("ply: {m}"));
    let mut lines = r.lines();
    let mut count = None;
    loop {
        let line = lines.next().ok_or_else(|| bad("missing end_header"))??;
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad("vertex count"))?);
        }
        if line.trim() == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("too few vertices"))??;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("vertex needs 6 fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("number"));
        out.push(SphereRecord {
            sphere: Sphere { center: Vec3::new(num(0)?, num(1)?, num(2)?), radius: num(3)? },
            material: f[4].parse().map_err(|_| bad("material"))?,
            confidence: num(5)?,
        });
    }
    Ok(out)
}
