//! Closed-form sphere geometry: volumes, lens intersections, the minimal
//! enclosing sphere of two spheres, and sphere IoU/GIoU with analytic
//! gradients.
//!
//! Gradients are taken branch by branch (disjoint, lens, contained). At a
//! branch seam the gradient of the branch selected by the classifier is
//! returned and [`GiouResult::non_smooth`] is set.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::vec3::Vec3;

/// Distance tolerance (m) used to classify the disjoint/lens/contained branches.
pub const BRANCH_TOL: f64 = 1e-12;

const FOUR_THIRDS_PI: f64 = 4.0 * PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Result<Self> {
        let s = Sphere { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(invalid(format!("sphere radius must be finite and > 0, got {}", self.radius)));
        }
        if !self.center.is_finite() {
            return Err(invalid("sphere center must be finite"));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        FOUR_THIRDS_PI * self.radius.powi(3)
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        (p - self.center).norm_sq() <= self.radius * self.radius
    }

    /// `[cx, cy, cz, r]`
    pub fn to_array(&self) -> [f64; 4] {
        [self.center.x, self.center.y, self.center.z, self.radius]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Sphere {
            center: Vec3::new(a[0], a[1], a[2]),
            radius: a[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiouResult {
    pub iou: f64,
    pub giou: f64,
    pub intersection: f64,
    pub union: f64,
    pub enclosing: f64,
    /// d giou / d (a.cx, a.cy, a.cz, a.r, b.cx, b.cy, b.cz, b.r)
    pub gradient: [f64; 8],
    /// True when the pair sits on a branch seam (tangent, internally tangent
    /// or concentric) and `gradient` is a one-sided limit.
    pub non_smooth: bool,
}

pub fn sphere_volume(s: &Sphere) -> Result<f64> {
    if !s.radius.is_finite() {
        return Err(invalid("non-finite radius"));
    }
    s.validate()?;
    Ok(s.volume())
}

pub fn intersection_volume(a: &Sphere, b: &Sphere) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let d = a.center.distance(b.center);
    Ok(intersection_terms(d, a.radius, b.radius).0)
}

pub fn min_enclosing_sphere(a: &Sphere, b: &Sphere) -> Result<Sphere> {
    a.validate()?;
    b.validate()?;
    let d = a.center.distance(b.center);
    let (big, small) = if a.radius >= b.radius { (a, b) } else { (b, a) };
    if d + small.radius <= big.radius + BRANCH_TOL {
        return Ok(*big);
    }
    let radius = 0.5 * (d + a.radius + b.radius);
    let dir = (b.center - a.center) / d;
    Ok(Sphere {
        center: a.center + dir * (radius - a.radius),
        radius,
    })
}

pub fn giou(a: &Sphere, b: &Sphere) -> Result<GiouResult> {
    a.validate()?;
    b.validate()?;
    Ok(giou_unchecked(a, b))
}

/// `1 - giou` and its gradient.
pub fn giou_loss(a: &Sphere, b: &Sphere) -> Result<(f64, [f64; 8])> {
    let g = giou(a, b)?;
    Ok((1.0 - g.giou, g.gradient.map(|v| -v)))
}

/// Intersection volume and its partials `(I, dI/dd, dI/dra, dI/drb)`.
fn intersection_terms(d: f64, ra: f64, rb: f64) -> (f64, f64, f64, f64) {
    let s = ra + rb;
    let t = ra - rb;
    if d >= s - BRANCH_TOL {
        return (0.0, 0.0, 0.0, 0.0);
    }
    if d <= t.abs() + BRANCH_TOL {
        // smaller sphere is fully inside; ties resolve to `a`
        return if ra <= rb {
            (FOUR_THIRDS_PI * ra.powi(3), 0.0, 4.0 * PI * ra * ra, 0.0)
        } else {
            (FOUR_THIRDS_PI * rb.powi(3), 0.0, 0.0, 4.0 * PI * rb * rb)
        };
    }
    // spherical lens
    let g = (s - d) * (s - d);
    let h = d * d + 2.0 * d * s - 3.0 * t * t;
    let c = PI / 12.0;
    let vol = c * g * h / d;
    let dg_dd = -2.0 * (s - d);
    let dh_dd = 2.0 * d + 2.0 * s;
    let d_dd = c * ((dg_dd * h + g * dh_dd) * d - g * h) / (d * d);
    let common = 2.0 * (s - d) * h;
    let d_dra = c * (common + g * (2.0 * d - 6.0 * t)) / d;
    let d_drb = c * (common + g * (2.0 * d + 6.0 * t)) / d;
    (vol, d_dd, d_dra, d_drb)
}

/// Enclosing radius and its partials `(R, dR/dd, dR/dra, dR/drb)`.
fn enclosing_terms(d: f64, ra: f64, rb: f64) -> (f64, f64, f64, f64) {
    if ra >= rb {
        if d + rb <= ra + BRANCH_TOL {
            return (ra, 0.0, 1.0, 0.0);
        }
    } else if d + ra <= rb + BRANCH_TOL {
        return (rb, 0.0, 0.0, 1.0);
    }
    (0.5 * (d + ra + rb), 0.5, 0.5, 0.5)
}

pub(crate) fn giou_unchecked(a: &Sphere, b: &Sphere) -> GiouResult {
    let (ra, rb) = (a.radius, b.radius);
    let delta = a.center - b.center;
    let d = delta.norm();

    let (inter, i_d, i_ra, i_rb) = intersection_terms(d, ra, rb);
    let va = FOUR_THIRDS_PI * ra.powi(3);
    let vb = FOUR_THIRDS_PI * rb.powi(3);
    let union = va + vb - inter;
    let u_d = -i_d;
    let u_ra = 4.0 * PI * ra * ra - i_ra;
    let u_rb = 4.0 * PI * rb * rb - i_rb;

    let (big_r, r_d, r_ra, r_rb) = enclosing_terms(d, ra, rb);
    let enclosing = FOUR_THIRDS_PI * big_r.powi(3);
    let c_scale = 4.0 * PI * big_r * big_r;
    let (c_d, c_ra, c_rb) = (c_scale * r_d, c_scale * r_ra, c_scale * r_rb);

    let iou = inter / union;
    // C ⊇ A ∪ B, so the penalty is ≥ 0; rounding can push it a few ulps below
    let giou = iou - ((enclosing - union) / enclosing).max(0.0);

    let partial = |ix: f64, ux: f64, cx: f64| {
        (ix * union - inter * ux) / (union * union) + (ux * enclosing - union * cx) / (enclosing * enclosing)
    };
    let g_d = partial(i_d, u_d, c_d);
    let g_ra = partial(i_ra, u_ra, c_ra);
    let g_rb = partial(i_rb, u_rb, c_rb);

    // d-dependent terms vanish at coincident centers by symmetry
    let dir = if d > BRANCH_TOL { delta / d } else { Vec3::ZERO };
    let gc = dir * g_d;

    let t = (ra - rb).abs();
    let non_smooth = d <= BRANCH_TOL
        || (d - (ra + rb)).abs() <= BRANCH_TOL
        || (d - t).abs() <= BRANCH_TOL;

    GiouResult {
        iou,
        giou,
        intersection: inter,
        union,
        enclosing,
        gradient: [gc.x, gc.y, gc.z, g_ra, -gc.x, -gc.y, -gc.z, g_rb],
        non_smooth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sph(x: f64, y: f64, z: f64, r: f64) -> Sphere {
        Sphere::new(Vec3::new(x, y, z), r).unwrap()
    }

    #[test]
    fn volumes() {
        assert!((sphere_volume(&sph(0., 0., 0., 1.0)).unwrap() - 4.18879020478639).abs() < 1e-12);
        let small = sphere_volume(&sph(0., 0., 0., 0.25)).unwrap();
        assert!((small - 0.0654498469497873).abs() < 1e-12);
        let big = sphere_volume(&sph(0., 0., 0., 0.5)).unwrap();
        assert!((big - 8.0 * small).abs() < 1e-14);
        let bad = Sphere { center: Vec3::ZERO, radius: f64::NAN };
        assert!(sphere_volume(&bad).is_err());
        assert!(Sphere::new(Vec3::ZERO, 0.0).is_err());
        assert!(Sphere::new(Vec3::new(f64::INFINITY, 0., 0.), 1.0).is_err());
    }

    #[test]
    fn intersection_cases() {
        let a = sph(0., 0., 0., 1.0);
        assert!((intersection_volume(&a, &a).unwrap() - a.volume()).abs() < 1e-14);
        let b = sph(1., 0., 0., 1.0);
        assert!((intersection_volume(&a, &b).unwrap() - 5.0 * PI / 12.0).abs() < 1e-12);
        let c = sph(2., 0., 0., 1.0);
        assert_eq!(intersection_volume(&a, &c).unwrap(), 0.0);
        let inner = sph(0.2, 0., 0., 0.3);
        assert!((intersection_volume(&a, &inner).unwrap() - inner.volume()).abs() < 1e-14);
    }

    #[test]
    fn enclosing_cases() {
        let a = sph(0., 0., 0., 3.0);
        let b = sph(1., 0., 0., 1.0);
        assert_eq!(min_enclosing_sphere(&a, &b).unwrap(), a);
        assert_eq!(min_enclosing_sphere(&b, &a).unwrap(), a);
        let a = sph(0., 0., 0., 1.0);
        let b = sph(3., 0., 0., 1.0);
        let c = min_enclosing_sphere(&a, &b).unwrap();
        assert!((c.center.x - 1.5).abs() < 1e-15 && c.center.y == 0.0 && c.center.z == 0.0);
        assert!((c.radius - 2.5).abs() < 1e-15);
        assert_eq!(min_enclosing_sphere(&a, &a).unwrap(), a);
    }

    #[test]
    fn giou_reference_values() {
        let a = sph(0., 0., 0., 1.0);
        let same = giou(&a, &a).unwrap();
        assert_eq!(same.iou, 1.0);
        assert_eq!(same.giou, 1.0);
        assert!(same.non_smooth);

        let r = giou(&a, &sph(1., 0., 0., 1.0)).unwrap();
        assert!((r.iou - 5.0 / 27.0).abs() < 1e-12);
        assert!((r.giou - (5.0 / 27.0 - 0.5)).abs() < 1e-12);
        assert!((r.enclosing - 4.5 * PI).abs() < 1e-12);
        assert!((r.union - 9.0 * PI / 4.0).abs() < 1e-12);

        let far = giou(&a, &sph(4., 0., 0., 1.0)).unwrap();
        assert_eq!(far.iou, 0.0);
        assert!((far.giou + 25.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn giou_equals_iou_under_containment() {
        let a = sph(0., 0., 0., 2.0);
        let b = sph(0.5, -0.3, 0.1, 0.7);
        let r = giou(&a, &b).unwrap();
        assert!((r.giou - r.iou).abs() < 1e-15);
        assert!((r.enclosing - r.union).abs() < 1e-12);
    }

    #[test]
    fn loss_values() {
        let a = sph(0., 0., 0., 1.0);
        assert_eq!(giou_loss(&a, &a).unwrap().0, 0.0);
        let (l, _) = giou_loss(&a, &sph(1., 0., 0., 1.0)).unwrap();
        assert!((l - (1.5 - 5.0 / 27.0)).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 3..40 {
            let (l, _) = giou_loss(&a, &sph(k as f64, 0., 0., 1.0)).unwrap();
            assert!(l > prev && l < 2.0);
            prev = l;
        }
    }

    #[test]
    fn concentric_gradient_has_no_center_terms() {
        let a = sph(1., 1., 1., 0.5);
        let r = giou(&a, &a).unwrap();
        assert_eq!(&r.gradient[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&r.gradient[4..7], &[0.0, 0.0, 0.0]);
    }
}
