use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::codebook::RisCodebook;
use super::fresnel::{complex_permittivity, fresnel_coefficients, FresnelPair};
use super::{Face, Jones, SimulationConfig, C0, JONES_ZERO};
use crate::error::{invalid, Result};
use crate::geom::Sphere;
use crate::par;
use crate::scene::SceneRecord;
use crate::vec3::Vec3;

const PLANE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interaction {
    Wall { face: Face },
    RisPanel { face: Face, panel: usize },
    Sphere { index: usize },
}

/// One multipath arrival at one receive element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub rx_antenna: usize,
    /// Seconds.
    pub delay: f64,
    /// Arrival azimuth of the direction toward the last interaction (rad).
    pub azimuth: f64,
    /// Arrival elevation (rad).
    pub elevation: f64,
    /// Complex gain without the propagation phase `exp(-j k d)`.
    pub jones: Jones,
    pub path_length: f64,
    pub interactions: Vec<Interaction>,
}

impl PathComponent {
    /// Full complex response including the propagation phase.
    pub fn field(&self, wavenumber: f64) -> Jones {
        let ph = Complex64::from_polar(1.0, -wavenumber * self.path_length);
        self.jones.map(|row| row.map(|h| h * ph))
    }

    pub fn order(&self) -> usize {
        self.interactions.len()
    }

    pub fn arrival_direction(&self) -> Vec3 {
        let (ce, se) = (self.elevation.cos(), self.elevation.sin());
        Vec3::new(ce * self.azimuth.cos(), ce * self.azimuth.sin(), se)
    }
}

/// Path geometry plus the gain of every interaction except the RIS phases,
/// which depend on the codebook entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPath {
    /// Transmitter, every interaction point, receiver.
    pub points: Vec<Vec3>,
    pub interactions: Vec<Interaction>,
    pub length: f64,
    pub jones: Jones,
}

impl GeoPath {
    fn segments(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

/// All surviving paths of one scene, per receive element, before RIS phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub per_antenna: Vec<Vec<GeoPath>>,
}

#[derive(Debug, Clone)]
struct ImageNode {
    /// Faces in mirroring order.
    faces: Vec<Face>,
    /// images[i] = source mirrored across faces[0..=i]
    images: Vec<Vec3>,
}

/// Every mirror chain of `source` up to `max_len` faces, skipping immediate
/// repeats and any face in `excluded`. Includes the empty chain first.
fn image_tree(source: Vec3, max_len: usize, room: &crate::scene::Aabb, excluded: &[Face]) -> Vec<ImageNode> {
    let mut out = vec![ImageNode { faces: vec![], images: vec![] }];
    let mut frontier = 0;
    for _ in 0..max_len {
        let end = out.len();
        for idx in frontier..end {
            let node = out[idx].clone();
            let last_point = node.images.last().copied().unwrap_or(source);
            for face in Face::ALL {
                if excluded.contains(&face) || node.faces.last() == Some(&face) {
                    continue;
                }
                let img = face.mirror(last_point, room);
                let mut faces = node.faces.clone();
                faces.push(face);
                let mut images = node.images.clone();
                images.push(img);
                out.push(ImageNode { faces, images });
            }
        }
        frontier = end;
    }
    out
}

fn faces_touching(p: Vec3, room: &crate::scene::Aabb) -> Vec<Face> {
    Face::ALL
        .into_iter()
        .filter(|f| (p.get(f.axis()) - f.offset(room)).abs() < PLANE_TOL)
        .collect()
}

fn on_face(q: Vec3, face: Face, room: &crate::scene::Aabb) -> bool {
    let (u, v) = face.tangent_axes();
    let inside = |ax: usize| q.get(ax) >= room.min.get(ax) - PLANE_TOL && q.get(ax) <= room.max.get(ax) + PLANE_TOL;
    inside(u) && inside(v)
}

/// Walk a mirror chain back from `anchor`. Returns the face hits ordered
/// from the anchor outward, or `None` if any hit misses its face.
fn unfold(anchor: Vec3, node: &ImageNode, room: &crate::scene::Aabb) -> Option<Vec<Vec3>> {
    let mut cur = anchor;
    let mut hits = Vec::with_capacity(node.faces.len());
    for i in (0..node.faces.len()).rev() {
        let face = node.faces[i];
        let img = node.images[i];
        let ax = face.axis();
        let off = face.offset(room);
        let denom = cur.get(ax) - img.get(ax);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = (off - img.get(ax)) / denom;
        if !(t > 1e-12 && t < 1.0 - 1e-12) {
            return None;
        }
        let q = img + (cur - img) * t;
        if !on_face(q, face, room) {
            return None;
        }
        hits.push(q);
        cur = q;
    }
    Some(hits)
}

fn segment_blocked(a: Vec3, b: Vec3, s: &Sphere) -> bool {
    let ab = b - a;
    let len2 = ab.norm_sq();
    let t = if len2 > 0.0 { ((s.center - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let closest = a + ab * t;
    let r = s.radius * (1.0 - 1e-9);
    (closest - s.center).norm_sq() < r * r
}

/// Geometric-optics specular point on a sphere for a ray from `a` to `b`,
/// found by minimizing `|a−p| + |p−b|` over the great circle in the plane of
/// `a`, `b` and the centre. `None` when either endpoint is inside the sphere
/// or the straight segment `a → b` passes through it.
pub fn specular_point_on_sphere(a: Vec3, b: Vec3, s: &Sphere) -> Option<Vec3> {
    let r = s.radius;
    let pa = a - s.center;
    let pb = b - s.center;
    let (na, nb) = (pa.norm(), pb.norm());
    if na <= r || nb <= r || segment_blocked(a, b, s) {
        return None;
    }
    let e1 = pa / na;
    let b_par = pb.dot(e1);
    let b_perp_v = pb - e1 * b_par;
    let b_perp = b_perp_v.norm();
    if b_perp <= 1e-12 * nb {
        // b on the same ray as a
        return Some(s.center + e1 * r);
    }
    let e2 = b_perp_v / b_perp;
    let (ax, ay) = (na, 0.0);
    let (bx, by) = (b_par, b_perp);
    let beta = by.atan2(bx);

    // f'(t) and f''(t) for f(t) = |a - p(t)| + |b - p(t)|, p(t) = r(cos t, sin t)
    let derivs = |t: f64| -> (f64, f64) {
        let (c, sn) = (t.cos(), t.sin());
        let (px, py) = (r * c, r * sn);
        let (dpx, dpy) = (-r * sn, r * c);
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (qx, qy) in [(ax, ay), (bx, by)] {
            let (wx, wy) = (qx - px, qy - py);
            let g = (wx * wx + wy * wy).sqrt();
            let gp = -(wx * dpx + wy * dpy) / g;
            let gpp = (r * r + (wx * px + wy * py) - gp * gp) / g;
            d1 += gp;
            d2 += gpp;
        }
        (d1, d2)
    };

    let (mut lo, mut hi) = (0.0, beta);
    let mut t = 0.5 * beta;
    for _ in 0..100 {
        let (d1, d2) = derivs(t);
        if d1 < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = if d2 > 0.0 { t - d1 / d2 } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - t).abs();
        t = next;
        if step < 1e-13 || hi - lo < 1e-13 {
            break;
        }
    }
    Some(s.center + (e1 * t.cos() + e2 * t.sin()) * r)
}

/// Horizontal and vertical polarization unit vectors for propagation along `k`.
pub(crate) fn pol_basis(k: Vec3) -> (Vec3, Vec3) {
    let c = Vec3::Z.cross(k);
    let h = if c.norm_sq() > 1e-24 { c.normalized() } else { Vec3::Y.cross(k).normalized() };
    (h, k.cross(h))
}

#[derive(Debug, Clone, Copy)]
struct CVec3 {
    x: Complex64,
    y: Complex64,
    z: Complex64,
}

impl CVec3 {
    fn real(v: Vec3) -> Self {
        Self { x: v.x.into(), y: v.y.into(), z: v.z.into() }
    }
    fn dot(&self, v: Vec3) -> Complex64 {
        self.x * v.x + self.y * v.y + self.z * v.z
    }
    fn along(c: Complex64, v: Vec3) -> Self {
        Self { x: c * v.x, y: c * v.y, z: c * v.z }
    }
    fn add(self, o: Self) -> Self {
        Self { x: self.x + o.x, y: self.y + o.y, z: self.z + o.z }
    }
}

fn reflect_field(e: CVec3, k_in: Vec3, k_out: Vec3, n: Vec3, coeff: FresnelPair) -> CVec3 {
    let c = k_in.cross(n);
    let s = if c.norm_sq() > 1e-24 { c.normalized() } else { pol_basis(k_in).0 };
    let p_in = s.cross(k_in);
    let p_out = s.cross(k_out);
    CVec3::along(coeff.te * e.dot(s), s).add(CVec3::along(coeff.tm * e.dot(p_in), p_out))
}

/// Image-method tracer. Construction enumerates the empty-room paths for
/// every receive element once; each scene then only filters those by
/// occlusion and adds the sphere-bounce paths.
#[derive(Debug, Clone)]
pub struct Tracer {
    config: SimulationConfig,
    codebook: RisCodebook,
    rx: Vec<Vec3>,
    tx_tree: Vec<ImageNode>,
    rx_trees: Vec<Vec<ImageNode>>,
    static_paths: Vec<Vec<GeoPath>>,
    face_eps: [Complex64; 6],
}

impl Tracer {
    pub fn new(config: &SimulationConfig, codebook: &RisCodebook) -> Result<Self> {
        config.validate()?;
        Ok(Self::new_unchecked(config, codebook))
    }

    /// Skips config validation; allows `max_reflections = 0` (line of sight only).
    pub fn new_unchecked(config: &SimulationConfig, codebook: &RisCodebook) -> Self {
        let room = config.room;
        let rx = config.rx_positions();
        let tx_excl = faces_touching(config.tx_position, &room);
        let face_eps = Face::ALL.map(|f| complex_permittivity(config.face_material(f), config.carrier_hz));
        let max = config.max_reflections;
        let tx_full = image_tree(config.tx_position, max, &room, &tx_excl);
        let rx_excl: Vec<Vec<Face>> = rx.iter().map(|&p| faces_touching(p, &room)).collect();

        let mut tracer = Self {
            config: config.clone(),
            codebook: codebook.clone(),
            rx: rx.clone(),
            tx_tree: Vec::new(),
            rx_trees: Vec::new(),
            static_paths: Vec::new(),
            face_eps,
        };
        let static_paths = par::map_range(rx.len(), |n| {
            let mut excl = tx_excl.clone();
            excl.extend(rx_excl[n].iter().copied());
            tx_full
                .iter()
                .filter(|node| node.faces.iter().all(|f| !excl.contains(f)))
                .filter_map(|node| {
                    let mut hits = unfold(rx[n], node, &room)?;
                    hits.reverse();
                    tracer.assemble(config.tx_position, hits, &node.faces, None, &[], None, rx[n])
                })
                .collect()
        });
        tracer.static_paths = static_paths;
        let sub = max.saturating_sub(1);
        tracer.tx_tree = tx_full.into_iter().filter(|n| n.faces.len() <= sub).collect();
        tracer.rx_trees = rx
            .iter()
            .enumerate()
            .map(|(n, &p)| {
                let mut excl = rx_excl[n].clone();
                excl.extend(tx_excl.iter().copied());
                image_tree(p, sub, &room, &excl)
                    .into_iter()
                    .filter(|node| node.faces.iter().all(|f| !tx_excl.contains(f)))
                    .collect()
            })
            .collect();
        if max == 0 {
            tracer.tx_tree.clear();
            tracer.rx_trees.iter_mut().for_each(|t| t.clear());
        }
        tracer
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn codebook(&self) -> &RisCodebook {
        &self.codebook
    }

    pub fn rx_positions(&self) -> &[Vec3] {
        &self.rx
    }

    /// Build the gain of one geometric path. `pre_faces` are hit between the
    /// transmitter and the sphere (or the receiver when `sphere` is None),
    /// `post_faces` between the sphere and the receiver.
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        tx: Vec3,
        pre_hits: Vec<Vec3>,
        pre_faces: &[Face],
        sphere: Option<(usize, &Sphere, Complex64, Vec3)>,
        post_faces: &[Face],
        post_hits: Option<Vec<Vec3>>,
        rx: Vec3,
    ) -> Option<GeoPath> {
        let mut points = Vec::with_capacity(pre_hits.len() + 4);
        let mut interactions = Vec::with_capacity(pre_hits.len() + 3);
        points.push(tx);
        let mut ris_hits = 0;
        let mut tag = |face: Face, q: Vec3, interactions: &mut Vec<Interaction>| {
            match self.codebook.panel_at(face, q) {
                Some(panel) => {
                    ris_hits += 1;
                    interactions.push(Interaction::RisPanel { face, panel });
                }
                None => interactions.push(Interaction::Wall { face }),
            };
        };
        for (&q, &f) in pre_hits.iter().zip(pre_faces) {
            points.push(q);
            tag(f, q, &mut interactions);
        }
        if let Some((idx, _, _, p)) = sphere {
            points.push(p);
            interactions.push(Interaction::Sphere { index: idx });
        }
        if let Some(post) = &post_hits {
            for (&q, &f) in post.iter().zip(post_faces) {
                points.push(q);
                tag(f, q, &mut interactions);
            }
        }
        points.push(rx);
        if ris_hits > self.config.max_ris_hits {
            return None;
        }

        let seg_len: Vec<f64> = points.windows(2).map(|w| w[0].distance(w[1])).collect();
        let length: f64 = seg_len.iter().sum();
        let dirs: Vec<Vec3> = points.windows(2).zip(&seg_len).map(|(w, &l)| (w[1] - w[0]) / l).collect();

        let (th, tv) = pol_basis(dirs[0]);
        let mut fields = [CVec3::real(th), CVec3::real(tv)];
        let mut scale = self.config.tx_power_w().sqrt() * self.config.wavelength() / (4.0 * std::f64::consts::PI * length);

        for (i, inter) in interactions.iter().enumerate() {
            let p = points[i + 1];
            let (k_in, k_out) = (dirs[i], dirs[i + 1]);
            let (normal, coeff) = match *inter {
                Interaction::Wall { face } => {
                    let n = face.inward_normal();
                    (n, fresnel_coefficients(self.face_eps[face.index()], -k_in.dot(n)))
                }
                Interaction::RisPanel { face, .. } => (face.inward_normal(), FresnelPair::PEC),
                Interaction::Sphere { .. } => {
                    let (_, s, eps, _) = sphere.expect("sphere interaction");
                    let n = (p - s.center) / s.radius;
                    let d_out: f64 = seg_len[i + 1..].iter().sum();
                    scale *= s.radius / (s.radius + 2.0 * d_out);
                    (n, fresnel_coefficients(eps, -k_in.dot(n)))
                }
            };
            for f in fields.iter_mut() {
                *f = reflect_field(*f, k_in, k_out, normal, coeff);
            }
        }

        let (rh, rv) = pol_basis(*dirs.last().expect("at least one segment"));
        let mut jones = JONES_ZERO;
        for (q, f) in fields.iter().enumerate() {
            jones[0][q] = f.dot(rh) * scale;
            jones[1][q] = f.dot(rv) * scale;
        }
        Some(GeoPath { points, interactions, length, jones })
    }

    fn sphere_paths(&self, n: usize, scene: &SceneRecord) -> Vec<GeoPath> {
        let room = self.config.room;
        let tx = self.config.tx_position;
        let rx = self.rx[n];
        let budget = self.config.max_reflections;
        let mut out = Vec::new();
        if budget == 0 {
            return out;
        }
        for (si, prim) in scene.spheres.iter().enumerate() {
            let s = &prim.sphere;
            let eps = complex_permittivity(&prim.material, self.config.carrier_hz);
            for pre in &self.tx_tree {
                let a_img = pre.images.last().copied().unwrap_or(tx);
                for post in &self.rx_trees[n] {
                    if pre.faces.len() + post.faces.len() + 1 > budget {
                        continue;
                    }
                    let b_img = post.images.last().copied().unwrap_or(rx);
                    let Some(p) = specular_point_on_sphere(a_img, b_img, s) else { continue };
                    let Some(mut pre_hits) = unfold(p, pre, &room) else { continue };
                    pre_hits.reverse();
                    let Some(post_hits) = unfold(p, post, &room) else { continue };
                    let post_faces: Vec<Face> = post.faces.iter().rev().copied().collect();
                    if let Some(path) = self.assemble(
                        tx,
                        pre_hits,
                        &pre.faces,
                        Some((si, s, eps, p)),
                        &post_faces,
                        Some(post_hits),
                        rx,
                    ) {
                        out.push(path);
                    }
                }
            }
        }
        out
    }

    /// Paths for every receive element: empty-room paths that survive
    /// occlusion by the scene's spheres, then sphere-bounce paths.
    pub fn trace_geometry(&self, scene: &SceneRecord) -> SceneGeometry {
        let occluders: Vec<&Sphere> = scene.occluders().collect();
        let visible = |p: &GeoPath| p.segments().all(|(a, b)| occluders.iter().all(|s| !segment_blocked(a, b, s)));
        let per_antenna = par::map_range(self.rx.len(), |n| {
            let mut paths: Vec<GeoPath> = self.static_paths[n].iter().filter(|p| visible(p)).cloned().collect();
            paths.extend(self.sphere_paths(n, scene).into_iter().filter(|p| visible(p)));
            paths
        });
        SceneGeometry { per_antenna }
    }

    /// Attach the RIS phases of codebook entry `entry` (`None`: no RIS phase).
    pub fn components(&self, geo: &SceneGeometry, entry: Option<usize>) -> Result<Vec<Vec<PathComponent>>> {
        if let Some(e) = entry {
            if e >= self.codebook.len() {
                return Err(invalid(format!("codebook entry {e} out of range ({} entries)", self.codebook.len())));
            }
        }
        Ok(geo
            .per_antenna
            .iter()
            .enumerate()
            .map(|(n, paths)| paths.iter().map(|p| self.component(n, p, entry)).collect())
            .collect())
    }

    fn component(&self, n: usize, p: &GeoPath, entry: Option<usize>) -> PathComponent {
        let mut jones = p.jones;
        if let Some(e) = entry {
            let mut phase = 0.0;
            for (i, inter) in p.interactions.iter().enumerate() {
                if let Interaction::RisPanel { panel, .. } = *inter {
                    phase += self.codebook.phase(e, panel, p.points[i + 1]);
                }
            }
            if phase != 0.0 {
                let rot = Complex64::from_polar(1.0, phase);
                jones = jones.map(|row| row.map(|h| h * rot));
            }
        }
        let last = p.points[p.points.len() - 2];
        let rx = p.points[p.points.len() - 1];
        let u = (last - rx).normalized();
        PathComponent {
            rx_antenna: n,
            delay: p.length / C0,
            azimuth: u.y.atan2(u.x),
            elevation: u.z.clamp(-1.0, 1.0).asin(),
            jones,
            path_length: p.length,
            interactions: p.interactions.clone(),
        }
    }

    /// Trace one scene under one codebook entry.
    pub fn trace(&self, scene: &SceneRecord, entry: usize) -> Result<Vec<Vec<PathComponent>>> {
        let geo = self.trace_geometry(scene);
        self.components(&geo, Some(entry))
    }
}

/// One-shot convenience: build a tracer and trace a single entry.
pub fn trace_paths(
    scene: &SceneRecord,
    config: &SimulationConfig,
    codebook: &RisCodebook,
    entry: usize,
) -> Result<Vec<Vec<PathComponent>>> {
    Tracer::new(config, codebook)?.trace(scene, entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::build_codebook;
    use crate::scene::{material_by_name, material_table_default, MaterialSpec, SpherePrimitive};

    fn empty_scene(cfg: &SimulationConfig) -> SceneRecord {
        SceneRecord::empty(cfg.room)
    }

    fn pec() -> MaterialSpec {
        MaterialSpec::new("pec", 1.0, 1e12, 1)
    }

    #[test]
    fn los_only_when_reflections_disabled() {
        let cfg = SimulationConfig { max_reflections: 0, rx_grid: (1, 1), ..Default::default() };
        let book = build_codebook(&cfg, 1, 1, 1).unwrap();
        let t = Tracer::new_unchecked(&cfg, &book);
        let paths = t.trace(&empty_scene(&cfg), 0).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].len(), 1);
        let p = &paths[0][0];
        assert!(p.interactions.is_empty());
        assert!((p.path_length - 100.0625f64.sqrt()).abs() < 1e-12);
        assert!((p.delay * 1e9 - 33.3665).abs() < 1e-3);
    }

    #[test]
    fn first_order_wall_matches_mirrored_source() {
        let cfg = SimulationConfig {
            max_reflections: 1,
            rx_grid: (1, 1),
            ris_faces: vec![],
            wall_material: pec(),
            floor_material: pec(),
            ceiling_material: pec(),
            ..Default::default()
        };
        let book = build_codebook(&cfg, 1, 1, 1).unwrap();
        let t = Tracer::new(&cfg, &book).unwrap();
        let paths = t.trace(&empty_scene(&cfg), 0).unwrap();
        // LoS plus five walls (the receiver sits on the y = -5 wall)
        assert_eq!(paths[0].len(), 6);
        for p in paths[0].iter().filter(|p| p.order() == 1) {
            let Interaction::Wall { face } = p.interactions[0] else { panic!() };
            let img = face.mirror(cfg.tx_position, &cfg.room);
            assert!((p.path_length - img.distance(cfg.rx_center)).abs() < 1e-12);
            // perfect conductor keeps the full free-space magnitude
            let e_norm: f64 = p.jones.iter().flatten().map(|h| h.norm_sqr()).sum::<f64>().sqrt();
            let free = cfg.tx_power_w().sqrt() * cfg.wavelength() / (4.0 * std::f64::consts::PI * p.path_length);
            assert!((e_norm - free * 2f64.sqrt()).abs() < 1e-5 * free);
        }
    }

    #[test]
    fn specular_point_obeys_reflection_law() {
        let s = Sphere { center: Vec3::new(0.3, 0.2, 2.0), radius: 0.4 };
        let a = Vec3::new(2.75, 4.5, 3.5);
        let b = Vec3::new(-0.5, -5.0, 1.8);
        let p = specular_point_on_sphere(a, b, &s).unwrap();
        assert!((p.distance(s.center) - s.radius).abs() < 1e-12);
        let n = (p - s.center).normalized();
        let ia = (a - p).normalized();
        let ib = (b - p).normalized();
        assert!((ia.dot(n) - ib.dot(n)).abs() < 1e-12);
        // coplanar with the normal
        assert!(ia.cross(ib).dot(n).abs() < 1e-12);
    }

    #[test]
    fn blocked_segment_has_no_specular_point() {
        let s = Sphere { center: Vec3::ZERO, radius: 1.0 };
        assert!(specular_point_on_sphere(Vec3::new(-3., 0., 0.), Vec3::new(3., 0., 0.), &s).is_none());
        assert!(specular_point_on_sphere(Vec3::new(0.5, 0., 0.), Vec3::new(3., 0., 0.), &s).is_none());
        let p = specular_point_on_sphere(Vec3::new(3., 0., 0.), Vec3::new(5., 0., 0.), &s).unwrap();
        assert!(p.distance(Vec3::X) < 1e-15);
    }

    #[test]
    fn metal_sphere_blocks_los() {
        let cfg = SimulationConfig { rx_grid: (1, 1), max_reflections: 1, ..Default::default() };
        let book = build_codebook(&cfg, 1, 1, 1).unwrap();
        let t = Tracer::new(&cfg, &book).unwrap();
        let mid = (cfg.tx_position + cfg.rx_center) * 0.5;
        let metal = material_by_name(&material_table_default(), "metal").unwrap().clone();
        let mut scene = empty_scene(&cfg);
        scene.spheres.push(SpherePrimitive { sphere: Sphere { center: mid, radius: 0.5 }, material: metal });
        let paths = t.trace(&scene, 0).unwrap();
        assert!(paths[0].iter().all(|p| p.order() > 0));
        assert!(paths[0].iter().all(|p| !p.interactions.contains(&Interaction::Sphere { index: 0 })));
    }

    #[test]
    fn polarization_basis_is_orthonormal() {
        for k in [Vec3::X, Vec3::Z, -Vec3::Z, Vec3::new(0.3, -0.4, 0.5).normalized()] {
            let (h, v) = pol_basis(k);
            assert!((h.norm() - 1.0).abs() < 1e-12 && (v.norm() - 1.0).abs() < 1e-12);
            assert!(h.dot(v).abs() < 1e-12 && h.dot(k).abs() < 1e-12 && v.dot(k).abs() < 1e-12);
        }
    }
}
