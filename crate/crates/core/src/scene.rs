//! Ground-truth scenes: material-labelled spheres whose centers come from
//! Bridson's Poisson-disk sampler restricted to an axis-aligned box.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::Sphere;
use crate::vec3::Vec3;

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.8541878128e-12;

/// Candidate attempts per active point.
pub const BRIDSON_ATTEMPTS: usize = 30;
const MAX_DRAWS_PER_ATTEMPT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub name: String,
    /// Real relative permittivity ε′.
    pub rel_permittivity: f64,
    /// Conductivity σ (S/m).
    pub conductivity: f64,
    /// 1-based class label.
    pub class_index: usize,
}

impl MaterialSpec {
    pub fn new(name: &str, rel_permittivity: f64, conductivity: f64, class_index: usize) -> Self {
        Self {
            name: name.to_string(),
            rel_permittivity,
            conductivity,
            class_index,
        }
    }

    /// Loss part ε″ = σ / (2π f ε₀) at carrier `freq_hz`.
    pub fn loss_permittivity(&self, freq_hz: f64) -> f64 {
        self.conductivity / (2.0 * std::f64::consts::PI * freq_hz * EPS0)
    }
}

/// brick, wood, glass, ceiling-board, metal with classes 1..5.
pub fn material_table_default() -> Vec<MaterialSpec> {
    vec![
        MaterialSpec::new("brick", 3.91, 0.028, 1),
        MaterialSpec::new("wood", 1.99, 0.014, 2),
        MaterialSpec::new("glass", 6.31, 0.014, 3),
        MaterialSpec::new("ceiling-board", 1.48, 0.003, 4),
        MaterialSpec::new("metal", 1.00, 1.0e7, 5),
    ]
}

pub fn material_by_name<'a>(table: &'a [MaterialSpec], name: &str) -> Option<&'a MaterialSpec> {
    table.iter().find(|m| m.name == name)
}

/// Pick named materials from the default table and relabel them densely
/// 1..=k in the order given.
pub fn material_subset(names: &[&str]) -> Result<Vec<MaterialSpec>> {
    let full = material_table_default();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            material_by_name(&full, n)
                .map(|m| MaterialSpec { class_index: i + 1, ..m.clone() })
                .ok_or_else(|| invalid(format!("unknown material {n:?}")))
        })
        .collect()
}

pub fn validate_material_table(table: &[MaterialSpec]) -> Result<()> {
    if table.is_empty() {
        return Err(invalid("material table is empty"));
    }
    for (i, m) in table.iter().enumerate() {
        if !(m.rel_permittivity >= 1.0) || !(m.conductivity >= 0.0) {
            return Err(invalid(format!("material {:?} has ε′ < 1 or σ < 0", m.name)));
        }
        if m.class_index != i + 1 {
            return Err(invalid("material class indices must be dense 1..L in table order"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpherePrimitive {
    pub sphere: Sphere,
    pub material: MaterialSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub spheres: Vec<SpherePrimitive>,
    pub rng_seed: u64,
    pub bounds: Aabb,
    pub min_separation: f64,
}

impl SceneRecord {
    pub fn empty(bounds: Aabb) -> Self {
        Self {
            spheres: Vec::new(),
            rng_seed: 0,
            bounds,
            min_separation: 0.0,
        }
    }

    pub fn occluders(&self) -> impl Iterator<Item = &Sphere> {
        self.spheres.iter().map(|s| &s.sphere)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub count: usize,
    pub bounds: Aabb,
    pub radius_range: (f64, f64),
    pub min_separation: f64,
    pub materials: Vec<MaterialSpec>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            count: 12,
            bounds: Aabb::new(Vec3::new(-1.5, -3.5, 1.75), Vec3::new(1.5, 3.5, 2.25)),
            radius_range: (0.25, 0.5),
            min_separation: 1.0,
            materials: material_table_default(),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let e = self.bounds.extent();
        if !(e.x >= 0.0 && e.y >= 0.0 && e.z >= 0.0) || !e.is_finite() {
            return Err(invalid("scene bounds must have min ≤ max"));
        }
        let (lo, hi) = self.radius_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid("radius range must satisfy 0 < r_min ≤ r_max"));
        }
        if !(self.min_separation >= 0.0) || !self.min_separation.is_finite() {
            return Err(invalid("min separation must be finite and ≥ 0"));
        }
        validate_material_table(&self.materials)
    }
}

/// Splitmix-style mixing for per-item seeds derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bridson's sampler over a box. Runs until the active list is exhausted and
/// returns every accepted point in acceptance order.
pub fn bridson_box<R: Rng>(rng: &mut R, bounds: &Aabb, min_dist: f64, attempts: usize) -> Vec<Vec3> {
    let ext = bounds.extent();
    let first = bounds.min
        + Vec3::new(
            ext.x * rng.random::<f64>(),
            ext.y * rng.random::<f64>(),
            ext.z * rng.random::<f64>(),
        );
    if min_dist <= 0.0 {
        return vec![first];
    }
    let cell = min_dist / 3f64.sqrt();
    let dims = [
        ((ext.x / cell).floor() as usize + 1),
        ((ext.y / cell).floor() as usize + 1),
        ((ext.z / cell).floor() as usize + 1),
    ];
    let mut grid: Vec<Option<usize>> = vec![None; dims[0] * dims[1] * dims[2]];
    let cell_of = |p: Vec3| -> [usize; 3] {
        let q = p - bounds.min;
        [
            ((q.x / cell) as usize).min(dims[0] - 1),
            ((q.y / cell) as usize).min(dims[1] - 1),
            ((q.z / cell) as usize).min(dims[2] - 1),
        ]
    };
    let flat = |c: [usize; 3]| (c[2] * dims[1] + c[1]) * dims[0] + c[0];

    let mut points = vec![first];
    grid[flat(cell_of(first))] = Some(0);
    let mut active = vec![0usize];
    let r2 = min_dist * min_dist;
    let shell_lo = min_dist.powi(3);
    let shell_hi = 8.0 * shell_lo;

    while !active.is_empty() {
        let slot = rng.random_range(0..active.len());
        let base = points[active[slot]];
        let mut found = false;
        let (mut tried, mut draws) = (0, 0);
        while tried < attempts && draws < attempts * MAX_DRAWS_PER_ATTEMPT {
            draws += 1;
            let rho = (shell_lo + rng.random::<f64>() * (shell_hi - shell_lo)).cbrt();
            let cand = base + crate::oracle::random_unit(rng) * rho;
            // out-of-box draws do not use up attempts, so thin boxes still fill
            if !bounds.contains(cand) {
                continue;
            }
            tried += 1;
            let c = cell_of(cand);
            let mut ok = true;
            'scan: for dz in c[2].saturating_sub(2)..=(c[2] + 2).min(dims[2] - 1) {
                for dy in c[1].saturating_sub(2)..=(c[1] + 2).min(dims[1] - 1) {
                    for dx in c[0].saturating_sub(2)..=(c[0] + 2).min(dims[0] - 1) {
                        if let Some(j) = grid[flat([dx, dy, dz])] {
                            if (points[j] - cand).norm_sq() < r2 {
                                ok = false;
                                break 'scan;
                            }
                        }
                    }
                }
            }
            if ok {
                grid[flat(c)] = Some(points.len());
                active.push(points.len());
                points.push(cand);
                found = true;
                break;
            }
        }
        if !found {
            active.swap_remove(slot);
        }
    }
    points
}

/// Draw one scene. Bridson runs to completion over the bounds and `count`
/// of its points are chosen uniformly at random, so centers are spread over
/// the whole box rather than clustered around the seed point.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneRecord> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = bridson_box(&mut rng, &params.bounds, params.min_separation, BRIDSON_ATTEMPTS);
    if points.len() < params.count {
        return Err(Error::PlacementInfeasible {
            placed: points.len(),
            requested: params.count,
        });
    }
    let (chosen, _) = points.partial_shuffle(&mut rng, params.count);
    let centers: Vec<Vec3> = chosen.to_vec();
    let (r_lo, r_hi) = params.radius_range;
    let spheres = centers
        .into_iter()
        .map(|center| {
            let radius = if r_hi > r_lo { rng.random_range(r_lo..=r_hi) } else { r_lo };
            let material = params.materials[rng.random_range(0..params.materials.len())].clone();
            SpherePrimitive {
                sphere: Sphere { center, radius },
                material,
            }
        })
        .collect();
    Ok(SceneRecord {
        spheres,
        rng_seed: seed,
        bounds: params.bounds,
        min_separation: params.min_separation,
    })
}

/// Check a record against its own bounds/separation and a radius range.
pub fn check_scene(scene: &SceneRecord, radius_range: (f64, f64)) -> Result<()> {
    for (i, s) in scene.spheres.iter().enumerate() {
        if !scene.bounds.contains(s.sphere.center) {
            return Err(invalid(format!("sphere {i} center outside bounds")));
        }
        if s.sphere.radius < radius_range.0 || s.sphere.radius > radius_range.1 {
            return Err(invalid(format!("sphere {i} radius outside range")));
        }
        for (j, t) in scene.spheres.iter().enumerate().skip(i + 1) {
            if s.sphere.center.distance(t.sphere.center) < scene.min_separation {
                return Err(invalid(format!("spheres {i} and {j} closer than min separation")));
            }
        }
    }
    Ok(())
}
