//! Independent reference computations used to check the closed-form and
//! combinatorial routes: box-sampling volume estimates, exhaustive
//! assignment search and central finite differences. Nothing here calls
//! into the routes it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::Sphere;
use crate::par;
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy)]
pub struct MonteCarloEstimate {
    pub volume: f64,
    /// Binomial standard error of `volume`.
    pub std_error: f64,
    pub samples: usize,
}

fn union_box(a: &Sphere, b: &Sphere) -> (Vec3, Vec3) {
    let lo = Vec3::new(
        (a.center.x - a.radius).min(b.center.x - b.radius),
        (a.center.y - a.radius).min(b.center.y - b.radius),
        (a.center.z - a.radius).min(b.center.z - b.radius),
    );
    let hi = Vec3::new(
        (a.center.x + a.radius).max(b.center.x + b.radius),
        (a.center.y + a.radius).max(b.center.y + b.radius),
        (a.center.z + a.radius).max(b.center.z + b.radius),
    );
    (lo, hi)
}

/// Estimate a volume by uniform sampling of the bounding box of both spheres
/// and counting points that satisfy `inside`.
pub fn box_sample<F>(a: &Sphere, b: &Sphere, samples: usize, seed: u64, inside: F) -> MonteCarloEstimate
where
    F: Fn(Vec3) -> bool,
{
    let (lo, hi) = union_box(a, b);
    let ext = hi - lo;
    let box_vol = ext.x * ext.y * ext.z;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let p = Vec3::new(
            lo.x + ext.x * rng.random::<f64>(),
            lo.y + ext.y * rng.random::<f64>(),
            lo.z + ext.z * rng.random::<f64>(),
        );
        if inside(p) {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    MonteCarloEstimate {
        volume: box_vol * p,
        std_error: box_vol * (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    }
}

pub fn mc_intersection(a: &Sphere, b: &Sphere, samples: usize, seed: u64) -> MonteCarloEstimate {
    box_sample(a, b, samples, seed, |p| a.contains_point(p) && b.contains_point(p))
}

pub fn mc_union(a: &Sphere, b: &Sphere, samples: usize, seed: u64) -> MonteCarloEstimate {
    box_sample(a, b, samples, seed, |p| a.contains_point(p) || b.contains_point(p))
}

/// Outcome of comparing closed-form lens volumes with box sampling over many
/// random pairs.
#[derive(Debug, Clone, Copy)]
pub struct LensOracleSummary {
    pub pairs: usize,
    pub samples: usize,
    /// Largest |closed - mc| (m³).
    pub max_abs_deviation: f64,
    /// Largest |closed - mc| / σ over pairs with σ > 0.
    pub max_sigma_ratio: f64,
    /// Pairs whose deviation exceeded three binomial standard errors.
    pub beyond_3_sigma: usize,
}

/// Random overlapping-ish pairs, parallel over pairs; each pair has its own
/// RNG stream so the result is independent of worker count.
pub fn lens_oracle_check(pairs: usize, samples: usize, seed: u64) -> LensOracleSummary {
    let rows = par::map_range(pairs, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
        let a = random_sphere(&mut rng, 1.0);
        // keep most pairs in the lens branch
        let b = Sphere {
            center: a.center
                + random_unit(&mut rng) * rng.random_range(0.0..(a.radius + 1.0)),
            radius: rng.random_range(0.1..1.0),
        };
        let closed = crate::geom::intersection_volume(&a, &b).expect("valid spheres");
        let mc = mc_intersection(&a, &b, samples, rng.random());
        let dev = (closed - mc.volume).abs();
        let ratio = if mc.std_error > 0.0 { dev / mc.std_error } else if dev > 0.0 { f64::INFINITY } else { 0.0 };
        (dev, ratio)
    });
    let mut out = LensOracleSummary {
        pairs,
        samples,
        max_abs_deviation: 0.0,
        max_sigma_ratio: 0.0,
        beyond_3_sigma: 0,
    };
    for (dev, ratio) in rows {
        out.max_abs_deviation = out.max_abs_deviation.max(dev);
        out.max_sigma_ratio = out.max_sigma_ratio.max(ratio);
        if ratio > 3.0 {
            out.beyond_3_sigma += 1;
        }
    }
    out
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm_sq();
        if n > 1e-6 && n <= 1.0 {
            return v / n.sqrt();
        }
    }
}

pub fn random_sphere<R: Rng>(rng: &mut R, spread: f64) -> Sphere {
    Sphere {
        center: Vec3::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
        ),
        radius: rng.random_range(0.1..1.0),
    }
}

/// Exhaustive minimum over injective row→column maps of an `n × m` cost
/// matrix (`n ≥ m` uses every column once, `n < m` every row once).
/// Sums are accumulated in row order. Returns `(cost, assignment)` where
/// `assignment[row]` is the chosen column.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let n = cost.len();
    let m = if n == 0 { 0 } else { cost[0].len() };
    let mut best = (f64::INFINITY, vec![None; n]);
    let mut current = vec![None; n];
    let mut used = vec![false; m];
    let k = n.min(m);
    fn rec(
        row: usize,
        assigned: usize,
        k: usize,
        cost: &[Vec<f64>],
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut (f64, Vec<Option<usize>>),
    ) {
        let n = cost.len();
        if row == n {
            if assigned == k {
                let total: f64 = current
                    .iter()
                    .enumerate()
                    .filter_map(|(r, c)| c.map(|c| cost[r][c]))
                    .sum();
                if total < best.0 {
                    *best = (total, current.clone());
                }
            }
            return;
        }
        // rows left must still be able to fill the remaining k - assigned slots
        if n - row > k - assigned {
            current[row] = None;
            rec(row + 1, assigned, k, cost, current, used, best);
        }
        if assigned < k {
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    current[row] = Some(c);
                    rec(row + 1, assigned + 1, k, cost, current, used, best);
                    used[c] = false;
                    current[row] = None;
                }
            }
        }
    }
    rec(0, 0, k, cost, &mut current, &mut used, &mut best);
    if k == 0 {
        best.0 = 0.0;
    }
    best
}

/// Central difference of a scalar function along one coordinate.
pub fn central_difference<F>(x: &[f64], index: usize, h: f64, f: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[index] += h;
    minus[index] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_small() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let (cost, a) = brute_force_assignment(&c);
        assert_eq!(cost, 5.0);
        assert_eq!(a, vec![Some(1), Some(0), Some(2)]);
        let rect = vec![vec![1.0], vec![0.5], vec![2.0]];
        let (cost, a) = brute_force_assignment(&rect);
        assert_eq!(cost, 0.5);
        assert_eq!(a, vec![None, Some(0), None]);
    }

    #[test]
    fn unit_sphere_volume_by_sampling() {
        let a = Sphere { center: Vec3::ZERO, radius: 1.0 };
        let est = mc_union(&a, &a, 200_000, 3);
        assert!((est.volume - a.volume()).abs() < 4.0 * est.std_error);
    }
}
