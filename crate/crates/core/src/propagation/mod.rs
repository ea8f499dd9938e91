//! Image-method propagation in a box-shaped programmable room: RIS-tiled
//! walls driven by a steering codebook, dielectric sphere scatterers and
//! polarimetric (Jones) path gains.

mod codebook;
mod fresnel;
mod tracer;
mod wavefront;

pub use codebook::{build_codebook, CodebookEntry, Panel, RisCodebook};
pub use fresnel::{complex_permittivity, fresnel_coefficients, FresnelPair};
pub use tracer::{
    specular_point_on_sphere, trace_paths, GeoPath, Interaction, PathComponent, SceneGeometry, Tracer,
};
pub use wavefront::{synthesize_wavefront, Wavefront};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scene::{material_by_name, material_table_default, Aabb, MaterialSpec};
use crate::vec3::Vec3;

/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;

/// 2×2 polarimetric gain, indexed `[receive][transmit]` with 0 = h, 1 = v.
pub type Jones = [[Complex64; 2]; 2];

pub const JONES_ZERO: Jones = [[Complex64::new(0.0, 0.0); 2]; 2];

/// One planar face of the room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    Floor,
    Ceiling,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::XMin, Face::XMax, Face::YMin, Face::YMax, Face::Floor, Face::Ceiling];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::Floor | Face::Ceiling => 2,
        }
    }

    /// Unit normal pointing into the room.
    pub fn inward_normal(self) -> Vec3 {
        match self {
            Face::XMin => Vec3::X,
            Face::XMax => -Vec3::X,
            Face::YMin => Vec3::Y,
            Face::YMax => -Vec3::Y,
            Face::Floor => Vec3::Z,
            Face::Ceiling => -Vec3::Z,
        }
    }

    /// Image of `p` in the plane of this face.
    pub fn mirror(self, p: Vec3, room: &Aabb) -> Vec3 {
        let mut c = p.to_array();
        c[self.axis()] = 2.0 * self.offset(room) - c[self.axis()];
        Vec3::from_array(c)
    }

    /// Coordinate of the face plane along its axis.
    pub fn offset(self, room: &Aabb) -> f64 {
        match self {
            Face::XMin => room.min.x,
            Face::XMax => room.max.x,
            Face::YMin => room.min.y,
            Face::YMax => room.max.y,
            Face::Floor => room.min.z,
            Face::Ceiling => room.max.z,
        }
    }

    /// The two in-plane axes, in (u, v) order.
    pub fn tangent_axes(self) -> (usize, usize) {
        match self.axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    pub fn is_wall(self) -> bool {
        !matches!(self, Face::Floor | Face::Ceiling)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Room interior; the default is 6.5 × 10 × 4 m centred on x = y = 0 with
    /// the floor at z = 0.
    pub room: Aabb,
    pub carrier_hz: f64,
    pub tx_position: Vec3,
    pub tx_power_dbm: f64,
    /// Centre of the receive array. The array lies in the x–z plane.
    pub rx_center: Vec3,
    /// (columns along x, rows along z)
    pub rx_grid: (usize, usize),
    /// Element pitch in metres; `None` means half a wavelength.
    pub rx_pitch: Option<f64>,
    pub max_reflections: usize,
    pub max_ris_hits: usize,
    /// Complex noise variance σ² (W); `None` gives 20 dB SNR on the empty-room
    /// line-of-sight path at the array centre.
    pub noise_variance: Option<f64>,
    /// Faces tiled with RIS panels (as many whole panels as fit, centred).
    pub ris_faces: Vec<Face>,
    pub ris_panel_size: f64,
    pub wall_material: MaterialSpec,
    pub floor_material: MaterialSpec,
    pub ceiling_material: MaterialSpec,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let table = material_table_default();
        let brick = material_by_name(&table, "brick").expect("brick").clone();
        let board = material_by_name(&table, "ceiling-board").expect("ceiling-board").clone();
        Self {
            room: Aabb::new(Vec3::new(-3.25, -5.0, 0.0), Vec3::new(3.25, 5.0, 4.0)),
            carrier_hz: 2.8e9,
            tx_position: Vec3::new(2.75, 4.5, 3.5),
            tx_power_dbm: 0.0,
            rx_center: Vec3::new(0.0, -5.0, 2.0),
            rx_grid: (8, 8),
            rx_pitch: None,
            max_reflections: 4,
            max_ris_hits: 2,
            noise_variance: None,
            ris_faces: vec![Face::XMin, Face::XMax, Face::YMin, Face::YMax],
            ris_panel_size: 1.0,
            wall_material: brick.clone(),
            floor_material: brick,
            ceiling_material: board,
        }
    }
}

impl SimulationConfig {
    pub fn wavelength(&self) -> f64 {
        C0 / self.carrier_hz
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    pub fn tx_power_w(&self) -> f64 {
        1e-3 * 10f64.powf(self.tx_power_dbm / 10.0)
    }

    pub fn pitch(&self) -> f64 {
        self.rx_pitch.unwrap_or(0.5 * self.wavelength())
    }

    pub fn n_antennas(&self) -> usize {
        self.rx_grid.0 * self.rx_grid.1
    }

    /// Element positions in row-major order: index = row · columns + column,
    /// rows along +z and columns along +x.
    pub fn rx_positions(&self) -> Vec<Vec3> {
        let (cols, rows) = self.rx_grid;
        let p = self.pitch();
        let mut out = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let dx = (c as f64 - 0.5 * (cols as f64 - 1.0)) * p;
                let dz = (r as f64 - 0.5 * (rows as f64 - 1.0)) * p;
                out.push(self.rx_center + Vec3::new(dx, 0.0, dz));
            }
        }
        out
    }

    pub fn face_material(&self, face: Face) -> &MaterialSpec {
        match face {
            Face::Floor => &self.floor_material,
            Face::Ceiling => &self.ceiling_material,
            _ => &self.wall_material,
        }
    }

    /// Received line-of-sight power at the array centre in an empty room.
    pub fn los_power_at_center(&self) -> f64 {
        let d = self.tx_position.distance(self.rx_center);
        let a = self.wavelength() / (4.0 * std::f64::consts::PI * d);
        self.tx_power_w() * a * a
    }

    pub fn resolved_noise_variance(&self) -> f64 {
        self.noise_variance.unwrap_or_else(|| self.los_power_at_center() / 100.0)
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.room.extent();
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
            return Err(invalid("room must have positive extent"));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(invalid("carrier frequency must be positive"));
        }
        if !self.room.contains(self.tx_position) {
            return Err(invalid("transmitter outside the room"));
        }
        for p in self.rx_positions() {
            if !self.room.contains(p) {
                return Err(invalid("receive array element outside the room"));
            }
        }
        if self.rx_grid.0 == 0 || self.rx_grid.1 == 0 {
            return Err(invalid("receive grid must be non-empty"));
        }
        if self.max_reflections < 1 {
            return Err(invalid("max_reflections must be ≥ 1"));
        }
        if let Some(s2) = self.noise_variance {
            if !(s2 >= 0.0) {
                return Err(invalid("noise variance must be ≥ 0"));
            }
        }
        if !(self.ris_panel_size > 0.0) {
            return Err(invalid("RIS panel size must be positive"));
        }
        for m in [&self.wall_material, &self.floor_material, &self.ceiling_material] {
            if !(m.rel_permittivity >= 1.0 && m.conductivity >= 0.0) {
                return Err(invalid(format!("surface material {:?} invalid", m.name)));
            }
        }
        Ok(())
    }
}
