use num_complex::Complex64;

use crate::scene::MaterialSpec;

/// Reflection coefficients for the perpendicular (TE) and parallel (TM)
/// field components. With the TM basis vectors built as `s × k` on both
/// sides of the bounce, a perfect conductor gives `te = -1, tm = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FresnelPair {
    pub te: Complex64,
    pub tm: Complex64,
}

impl FresnelPair {
    pub const PEC: FresnelPair = FresnelPair {
        te: Complex64::new(-1.0, 0.0),
        tm: Complex64::new(1.0, 0.0),
    };
}

/// ε = ε′ − jσ/(2π f ε₀)
pub fn complex_permittivity(m: &MaterialSpec, freq_hz: f64) -> Complex64 {
    Complex64::new(m.rel_permittivity, -m.loss_permittivity(freq_hz))
}

/// Air-to-half-space reflection at incidence cosine `cos_i` (clamped to [0, 1]).
pub fn fresnel_coefficients(eps: Complex64, cos_i: f64) -> FresnelPair {
    let c = cos_i.clamp(0.0, 1.0);
    let sin2 = 1.0 - c * c;
    let root = (eps - sin2).sqrt();
    let te = (c - root) / (c + root);
    let tm = (eps * c - root) / (eps * c + root);
    FresnelPair { te, tm }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{material_by_name, material_table_default};

    #[test]
    fn normal_incidence_lossless() {
        let p = fresnel_coefficients(Complex64::new(4.0, 0.0), 1.0);
        assert!((p.te.re + 1.0 / 3.0).abs() < 1e-15);
        assert!((p.tm.re - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grazing_is_total() {
        let p = fresnel_coefficients(Complex64::new(6.31, -0.1), 0.0);
        assert!((p.te + 1.0).norm() < 1e-12);
        assert!((p.tm + 1.0).norm() < 1e-12);
    }

    #[test]
    fn metal_is_nearly_perfect() {
        let t = material_table_default();
        let eps = complex_permittivity(material_by_name(&t, "metal").unwrap(), 2.8e9);
        for cos in [1.0, 0.7, 0.3] {
            let p = fresnel_coefficients(eps, cos);
            assert!((p.te.norm() - 1.0).abs() < 1e-3);
            assert!((p.tm.norm() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn brewster_angle_kills_tm() {
        let eps = 3.91f64;
        let theta_b = eps.sqrt().atan();
        let p = fresnel_coefficients(Complex64::new(eps, 0.0), theta_b.cos());
        assert!(p.tm.norm() < 1e-12);
        assert!(p.te.norm() > 0.1);
    }
}
