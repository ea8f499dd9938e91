use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Face, SimulationConfig};
use crate::error::{invalid, Result};
use crate::oracle::random_unit;
use crate::vec3::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub id: usize,
    pub face: Face,
    pub center: Vec3,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FaceTiling {
    face: Face,
    start_u: f64,
    start_v: f64,
    n_u: usize,
    n_v: usize,
    first_id: usize,
}

/// One steering configuration: a direction per panel, realized as a linear
/// phase gradient across the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub steering: Vec<Vec3>,
    /// Tangential phase gradient per panel (rad/m).
    pub phase_gradient: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisCodebook {
    pub panels: Vec<Panel>,
    tilings: Vec<FaceTiling>,
    pub entries: Vec<CodebookEntry>,
    pub seed: u64,
    pub realizations_per_panel: usize,
}

impl RisCodebook {
    /// Panel layout only, no entries.
    pub fn layout(config: &SimulationConfig) -> Self {
        let size = config.ris_panel_size;
        let mut panels = Vec::new();
        let mut tilings = Vec::new();
        for &face in Face::ALL.iter().filter(|f| config.ris_faces.contains(f)) {
            let (u, v) = face.tangent_axes();
            let len_u = config.room.max.get(u) - config.room.min.get(u);
            let len_v = config.room.max.get(v) - config.room.min.get(v);
            let n_u = (len_u / size + 1e-9).floor() as usize;
            let n_v = (len_v / size + 1e-9).floor() as usize;
            let start_u = config.room.min.get(u) + 0.5 * (len_u - n_u as f64 * size);
            let start_v = config.room.min.get(v) + 0.5 * (len_v - n_v as f64 * size);
            tilings.push(FaceTiling { face, start_u, start_v, n_u, n_v, first_id: panels.len() });
            let offset = face.offset(&config.room);
            for iv in 0..n_v {
                for iu in 0..n_u {
                    let mut c = [0.0; 3];
                    c[face.axis()] = offset;
                    c[u] = start_u + (iu as f64 + 0.5) * size;
                    c[v] = start_v + (iv as f64 + 0.5) * size;
                    panels.push(Panel { id: panels.len(), face, center: Vec3::from_array(c), size });
                }
            }
        }
        Self { panels, tilings, entries: Vec::new(), seed: 0, realizations_per_panel: 0 }
    }

    /// Panel covering point `p` on `face`, if any.
    pub fn panel_at(&self, face: Face, p: Vec3) -> Option<usize> {
        let t = self.tilings.iter().find(|t| t.face == face)?;
        let (u, v) = face.tangent_axes();
        let size = self.panels.get(t.first_id)?.size;
        let fu = (p.get(u) - t.start_u) / size;
        let fv = (p.get(v) - t.start_v) / size;
        if fu < 0.0 || fv < 0.0 {
            return None;
        }
        let (iu, iv) = (fu.floor() as usize, fv.floor() as usize);
        if iu >= t.n_u || iv >= t.n_v {
            return None;
        }
        Some(t.first_id + iv * t.n_u + iu)
    }

    /// Phase (rad) applied by panel `panel` of entry `entry` at point `p`.
    pub fn phase(&self, entry: usize, panel: usize, p: Vec3) -> f64 {
        self.entries[entry].phase_gradient[panel].dot(p - self.panels[panel].center)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Tangential gradient that steers a normally incident wave toward `dir`.
/// Zero when `dir` is the panel normal (plain specular reflector).
pub fn steering_gradient(normal: Vec3, dir: Vec3, wavenumber: f64) -> Vec3 {
    let tangential = dir - normal * dir.dot(normal);
    tangential * (-wavenumber)
}

/// Draw `realizations_per_panel` independent steering directions per panel,
/// uniform over the hemisphere facing into the room. Entry `c` uses
/// realization `c mod realizations_per_panel` on every panel.
pub fn build_codebook(
    config: &SimulationConfig,
    seed: u64,
    n_entries: usize,
    realizations_per_panel: usize,
) -> Result<RisCodebook> {
    if n_entries == 0 {
        return Err(invalid("codebook needs at least one entry"));
    }
    if realizations_per_panel == 0 {
        return Err(invalid("realizations_per_panel must be ≥ 1"));
    }
    let mut book = RisCodebook::layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.wavenumber();
    let realizations: Vec<Vec<Vec3>> = (0..realizations_per_panel)
        .map(|_| {
            book.panels
                .iter()
                .map(|p| {
                    let n = p.face.inward_normal();
                    let d = random_unit(&mut rng);
                    if d.dot(n) < 0.0 {
                        d.reflect(n)
                    } else {
                        d
                    }
                })
                .collect()
        })
        .collect();
    book.entries = (0..n_entries)
        .map(|c| {
            let steering = realizations[c % realizations_per_panel].clone();
            let phase_gradient = steering
                .iter()
                .zip(&book.panels)
                .map(|(&s, p)| steering_gradient(p.face.inward_normal(), s, k))
                .collect();
            CodebookEntry { steering, phase_gradient }
        })
        .collect();
    book.seed = seed;
    book.realizations_per_panel = realizations_per_panel;
    Ok(book)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_tiles_side_walls() {
        let cfg = SimulationConfig::default();
        let book = RisCodebook::layout(&cfg);
        // x walls: 10 × 4 panels each; y walls: 6 × 4 each
        assert_eq!(book.panels.len(), 2 * 40 + 2 * 24);
        let p = Vec3::new(-3.25, 0.3, 1.2);
        let id = book.panel_at(Face::XMin, p).unwrap();
        let panel = &book.panels[id];
        assert!((panel.center.y - 0.5).abs() < 1e-12 && (panel.center.z - 1.5).abs() < 1e-12);
        // margin strip on the y walls is plain wall
        assert!(book.panel_at(Face::YMax, Vec3::new(3.1, 5.0, 1.0)).is_none());
        assert!(book.panel_at(Face::Floor, Vec3::new(0.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn panels_do_not_overlap() {
        let book = RisCodebook::layout(&SimulationConfig::default());
        for (i, a) in book.panels.iter().enumerate() {
            for b in &book.panels[i + 1..] {
                if a.face == b.face {
                    let d = a.center - b.center;
                    let (u, v) = a.face.tangent_axes();
                    assert!(d.get(u).abs() >= 1.0 - 1e-9 || d.get(v).abs() >= 1.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let cfg = SimulationConfig::default();
        let a = build_codebook(&cfg, 9, 5, 5).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, build_codebook(&cfg, 9, 5, 5).unwrap());
        assert_ne!(a, build_codebook(&cfg, 10, 5, 5).unwrap());
        for e in &a.entries {
            for (s, p) in e.steering.iter().zip(&a.panels) {
                assert!(s.dot(p.face.inward_normal()) >= 0.0);
                assert!((s.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!(build_codebook(&cfg, 9, 0, 5).is_err());
    }

    #[test]
    fn specular_steering_has_zero_gradient() {
        let n = Face::YMax.inward_normal();
        assert_eq!(steering_gradient(n, n, 58.7).norm(), 0.0);
    }
}
