use proptest::prelude::*;

use rfsplat::features::{delay_stats, equivalent_aoa, polarization_from_received, wrap_pi, Arrival};
use rfsplat::geom::{giou, intersection_volume, min_enclosing_sphere, sphere_volume};
use rfsplat::matching::{hungarian, match_and_loss, GeometryNorm, LossWeights, PredictedSet, TruthSet};
use rfsplat::oracle::brute_force_assignment;
use rfsplat::scene::{check_scene, generate_scene, Aabb, SceneParams};
use rfsplat::{Sphere, Vec3};

use num_complex::Complex64;

fn sphere() -> impl Strategy<Value = Sphere> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64, 0.05..1.5f64)
        .prop_map(|(x, y, z, r)| Sphere { center: Vec3::new(x, y, z), radius: r })
}

fn cost_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..6).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(-5.0..5.0f64, m), n))
}

fn unit_box() -> GeometryNorm {
    GeometryNorm::new(&Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)), (0.1, 0.5))
}

fn sets(n: usize, m: usize) -> impl Strategy<Value = (PredictedSet, TruthSet)> {
    let g = || prop::array::uniform4(0.0..1.0f64);
    (
        prop::collection::vec(g(), n),
        prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), n),
        prop::collection::vec(g(), m),
        prop::collection::vec(1usize..4, m),
    )
        .prop_map(|(geometry, logits, tg, labels)| (PredictedSet { geometry, logits }, TruthSet { geometry: tg, labels }))
}

proptest! {
    #[test]
    fn giou_is_bounded_and_symmetric(a in sphere(), b in sphere()) {
        let ab = giou(&a, &b).unwrap();
        let ba = giou(&b, &a).unwrap();
        prop_assert!(ab.giou >= -1.0 - 1e-12 && ab.giou <= 1.0 + 1e-12);
        prop_assert!(ab.iou >= 0.0 && ab.iou <= 1.0 + 1e-12);
        prop_assert!(ab.giou <= ab.iou + 1e-12);
        prop_assert!((ab.giou - ba.giou).abs() <= 1e-12);
    }

    #[test]
    fn volumes_are_ordered(a in sphere(), b in sphere()) {
        let inter = intersection_volume(&a, &b).unwrap();
        let (va, vb) = (sphere_volume(&a).unwrap(), sphere_volume(&b).unwrap());
        let c = min_enclosing_sphere(&a, &b).unwrap();
        prop_assert!(inter >= 0.0);
        prop_assert!(inter <= va.min(vb) * (1.0 + 1e-12));
        prop_assert!(sphere_volume(&c).unwrap() >= (va + vb - inter) * (1.0 - 1e-12));
        let d = (a.center - c.center).norm() + a.radius;
        prop_assert!(d <= c.radius * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn giou_of_self_is_one(a in sphere()) {
        let r = giou(&a, &a).unwrap();
        prop_assert!((r.giou - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn giou_is_translation_and_scale_invariant(a in sphere(), b in sphere(), t in prop::array::uniform3(-3.0..3.0f64), s in 0.2..5.0f64) {
        let tv = Vec3::new(t[0], t[1], t[2]);
        let map = |x: &Sphere| Sphere { center: (x.center + tv) * s, radius: x.radius * s };
        let g0 = giou(&a, &b).unwrap().giou;
        let g1 = giou(&map(&a), &map(&b)).unwrap().giou;
        prop_assert!((g0 - g1).abs() <= 1e-9);
    }

    #[test]
    fn hungarian_matches_brute_force(c in cost_matrix()) {
        let r = hungarian(&c).unwrap();
        let (best, _) = brute_force_assignment(&c);
        prop_assert!((r.total_cost - best).abs() <= 1e-9);
        let n_assign = c.len().min(c[0].len());
        prop_assert_eq!(r.n_matched(), n_assign);
        let mut cols: Vec<usize> = r.pairs().map(|(_, j)| j).collect();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(cols.len(), n_assign);
    }

    #[test]
    fn set_loss_ignores_truth_order((p, t) in sets(6, 3), k in 0usize..6) {
        let norm = unit_box();
        let w = LossWeights::default();
        let (_, l0, g0) = match_and_loss(&p, &t, &norm, &w).unwrap();
        let perm: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let pt = TruthSet {
            geometry: perm[k].iter().map(|&i| t.geometry[i]).collect(),
            labels: perm[k].iter().map(|&i| t.labels[i]).collect(),
        };
        let (_, l1, g1) = match_and_loss(&p, &pt, &norm, &w).unwrap();
        prop_assert_eq!(l0.total.to_bits(), l1.total.to_bits());
        prop_assert_eq!(g0, g1);
    }

    #[test]
    fn set_loss_is_non_negative((p, t) in sets(5, 2)) {
        let (m, l, _) = match_and_loss(&p, &t, &unit_box(), &LossWeights::default()).unwrap();
        prop_assert!(l.total >= 0.0 && l.l1 >= 0.0 && l.giou >= 0.0 && l.nll >= 0.0);
        prop_assert_eq!(m.n_matched(), 2);
    }

    #[test]
    fn wrap_pi_lands_in_half_open_interval(a in -100.0..100.0f64) {
        let w = wrap_pi(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let k = (a - w) / std::f64::consts::TAU;
        prop_assert!((k - k.round()).abs() <= 1e-9);
    }

    #[test]
    fn polarization_powers_are_magnitudes(re in -5.0..5.0f64, im in -5.0..5.0f64, re2 in -5.0..5.0f64, im2 in -5.0..5.0f64) {
        let (h, v) = (Complex64::new(re, im), Complex64::new(re2, im2));
        let f = polarization_from_received(h, v);
        prop_assert!((f.p_h - h.norm_sqr()).abs() <= 1e-12 * (1.0 + h.norm_sqr()));
        prop_assert!((f.p_v - v.norm_sqr()).abs() <= 1e-12 * (1.0 + v.norm_sqr()));
        prop_assert!(f.omega_h > -std::f64::consts::PI - 1e-12 && f.omega_h <= std::f64::consts::PI);
    }

    #[test]
    fn single_arrival_has_zero_spread(p in 1e-9..1.0f64, az in -3.0..3.0f64, el in -1.5..1.5f64, d in 1e-9..1e-6f64) {
        let a = [Arrival { power: p, azimuth: az, elevation: el, delay: d }];
        let (mean, spread) = delay_stats(&a);
        prop_assert!((mean - d).abs() <= 1e-18 + 1e-12 * d);
        prop_assert!(spread.abs() <= 1e-15);
        let aoa = equivalent_aoa(&a);
        prop_assert!(!aoa.degenerate);
        prop_assert!((wrap_pi(aoa.azimuth - az)).abs() <= 1e-9);
        prop_assert!((aoa.elevation - el).abs() <= 1e-9);
    }

    #[test]
    fn delay_spread_is_shift_invariant(ds in prop::collection::vec((1e-6..1.0f64, 1e-9..1e-7f64), 2..8), shift in 0.0..1e-7f64) {
        let a: Vec<Arrival> = ds.iter().map(|&(p, d)| Arrival { power: p, azimuth: 0.0, elevation: 0.0, delay: d }).collect();
        let b: Vec<Arrival> = a.iter().map(|x| Arrival { delay: x.delay + shift, ..*x }).collect();
        let (m0, s0) = delay_stats(&a);
        let (m1, s1) = delay_stats(&b);
        prop_assert!((m1 - m0 - shift).abs() <= 1e-20 + 1e-10 * m1);
        prop_assert!((s1 - s0).abs() <= 1e-18 + 1e-8 * s0);
        prop_assert!(s0 >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenes_respect_constraints(seed in any::<u64>(), count in 1usize..13) {
        let params = SceneParams { count, ..SceneParams::default() };
        let s = generate_scene(seed, &params).unwrap();
        prop_assert_eq!(s.spheres.len(), count);
        check_scene(&s, params.radius_range).unwrap();
        for (i, a) in s.spheres.iter().enumerate() {
            prop_assert!(params.bounds.contains(a.sphere.center));
            prop_assert!(params.materials.iter().any(|m| m == &a.material));
            for b in &s.spheres[i + 1..] {
                prop_assert!((a.sphere.center - b.sphere.center).norm() >= params.min_separation - 1e-12);
            }
        }
        prop_assert_eq!(generate_scene(seed, &params).unwrap(), s);
    }
}
