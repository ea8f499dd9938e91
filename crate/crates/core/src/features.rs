//! Per-antenna RF signature: polarization power/phase, power-weighted
//! equivalent angle of arrival, RMS angular spreads and delay statistics,
//! concatenated over RIS configurations into a feature map.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{Jones, PathComponent, Wavefront};

/// Features per antenna per configuration.
pub const N_FEATURES: usize = 10;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "p_h", "p_v", "omega_h", "omega_v", "aoa_az", "aoa_el", "spread_az", "spread_el", "mean_delay", "delay_spread",
];

/// Below this resultant norm the equivalent direction is undefined.
pub const DIRECTION_EPS: f64 = 1e-15;

/// Power, direction and delay of one arrival, as used by the power-weighted
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub power: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub delay: f64,
}

/// Received field on polarization p with both transmit polarizations driven:
/// `E_p = h_p,h + h_p,v`. Returns `(E_h, E_v)`.
pub fn received_fields(j: &Jones) -> (Complex64, Complex64) {
    (j[0][0] + j[0][1], j[1][0] + j[1][1])
}

/// `|E_h|² + |E_v|²`
pub fn path_power(j: &Jones) -> f64 {
    let (h, v) = received_fields(j);
    h.norm_sqr() + v.norm_sqr()
}

impl From<&PathComponent> for Arrival {
    fn from(p: &PathComponent) -> Self {
        Arrival {
            power: path_power(&p.jones),
            azimuth: p.azimuth,
            elevation: p.elevation,
            delay: p.delay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolarizationFeatures {
    pub p_h: f64,
    pub p_v: f64,
    pub omega_h: f64,
    pub omega_v: f64,
    /// No field at all; phases are set to 0.
    pub degenerate: bool,
}

/// Power and phase of the total received field per polarization, from the
/// summed per-path responses (each including its propagation phase).
pub fn polarization_features(fields: &[Jones]) -> PolarizationFeatures {
    let (mut xh, mut xv) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for f in fields {
        let (h, v) = received_fields(f);
        xh += h;
        xv += v;
    }
    let mut out = polarization_from_received(xh, xv);
    out.degenerate |= fields.is_empty();
    out
}

/// Same as [`polarization_features`] for an already-summed (possibly noisy)
/// received field.
pub fn polarization_from_received(xh: Complex64, xv: Complex64) -> PolarizationFeatures {
    let phase = |x: Complex64| if x.norm_sqr() > 0.0 { wrap_pi(x.arg()) } else { 0.0 };
    PolarizationFeatures {
        p_h: xh.norm_sqr(),
        p_v: xv.norm_sqr(),
        omega_h: phase(xh),
        omega_v: phase(xv),
        degenerate: xh.norm_sqr() == 0.0 && xv.norm_sqr() == 0.0,
    }
}

/// Wrap to (−π, π].
pub fn wrap_pi(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EquivalentAoa {
    pub azimuth: f64,
    pub elevation: f64,
    /// Resultant vector vanished (or no power); angles reported as 0.
    pub degenerate: bool,
}

/// Direction of the power-weighted vector sum of arrival directions.
pub fn equivalent_aoa(arrivals: &[Arrival]) -> EquivalentAoa {
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    for a in arrivals {
        let ce = a.elevation.cos();
        x += a.power * ce * a.azimuth.cos();
        y += a.power * ce * a.azimuth.sin();
        z += a.power * a.elevation.sin();
    }
    let norm = (x * x + y * y + z * z).sqrt();
    if !(norm >= DIRECTION_EPS) {
        return EquivalentAoa { azimuth: 0.0, elevation: 0.0, degenerate: true };
    }
    EquivalentAoa {
        azimuth: y.atan2(x),
        elevation: (z / norm).clamp(-1.0, 1.0).asin(),
        degenerate: false,
    }
}

/// Power-weighted RMS spread of azimuth (residuals wrapped to (−π, π]) and
/// elevation about the given centre. Zero when there is no power.
pub fn angular_spread(arrivals: &[Arrival], az_center: f64, el_center: f64) -> (f64, f64) {
    let total: f64 = arrivals.iter().map(|a| a.power).sum();
    if !(total > 0.0) {
        return (0.0, 0.0);
    }
    let (mut saz, mut sel) = (0.0, 0.0);
    for a in arrivals {
        let daz = wrap_pi(a.azimuth - az_center);
        let del = a.elevation - el_center;
        saz += a.power * daz * daz;
        sel += a.power * del * del;
    }
    ((saz / total).sqrt(), (sel / total).sqrt())
}

/// Power-weighted mean excess delay and RMS delay spread (seconds).
pub fn delay_stats(arrivals: &[Arrival]) -> (f64, f64) {
    let total: f64 = arrivals.iter().map(|a| a.power).sum();
    if !(total > 0.0) {
        return (0.0, 0.0);
    }
    let mean = arrivals.iter().map(|a| a.power * a.delay).sum::<f64>() / total;
    // two-pass form of sqrt(E[τ²] − E[τ]²); clamps at zero
    let var = arrivals
        .iter()
        .map(|a| {
            let d = a.delay - mean;
            a.power * d * d
        })
        .sum::<f64>()
        / total;
    (mean, var.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AntennaFeatures {
    pub p_h: f64,
    pub p_v: f64,
    pub omega_h: f64,
    pub omega_v: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub spread_az: f64,
    pub spread_el: f64,
    pub mean_delay: f64,
    pub delay_spread: f64,
    pub degenerate: bool,
}

impl AntennaFeatures {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.p_h,
            self.p_v,
            self.omega_h,
            self.omega_v,
            self.azimuth,
            self.elevation,
            self.spread_az,
            self.spread_el,
            self.mean_delay,
            self.delay_spread,
        ]
    }
}

/// All ten features for one antenna. Polarization features come from the
/// received field `(x_h, x_v)`; the rest from the path list. An antenna with
/// no paths yields all-zero features flagged degenerate.
pub fn antenna_features(paths: &[PathComponent], received: (Complex64, Complex64)) -> AntennaFeatures {
    let pol = polarization_from_received(received.0, received.1);
    let arrivals: Vec<Arrival> = paths.iter().map(Arrival::from).collect();
    if arrivals.is_empty() {
        return AntennaFeatures { degenerate: true, ..Default::default() };
    }
    let aoa = equivalent_aoa(&arrivals);
    let (spread_az, spread_el) = angular_spread(&arrivals, aoa.azimuth, aoa.elevation);
    let (mean_delay, delay_spread) = delay_stats(&arrivals);
    AntennaFeatures {
        p_h: pol.p_h,
        p_v: pol.p_v,
        omega_h: pol.omega_h,
        omega_v: pol.omega_v,
        azimuth: aoa.azimuth,
        elevation: aoa.elevation,
        spread_az,
        spread_el,
        mean_delay,
        delay_spread,
        degenerate: aoa.degenerate,
    }
}

/// Traced paths and the synthesized wavefront of one scene under one
/// codebook entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryObservation {
    pub entry: usize,
    pub paths: Vec<Vec<PathComponent>>,
    pub wavefront: Wavefront,
}

/// `n_antennas × (N_FEATURES · n_configs)` row-major grid. Column
/// `c · N_FEATURES + f` holds feature `f` under the `c`-th configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub n_antennas: usize,
    pub n_configs: usize,
    /// (columns along x, rows along z) of the antenna layout.
    pub grid: (usize, usize),
    pub data: Vec<f64>,
    pub scene_id: u64,
    pub entries: Vec<usize>,
    /// Antennas whose features were degenerate (no arrivals) in any block.
    pub degenerate_antennas: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.n_configs * N_FEATURES
    }

    pub fn get(&self, antenna: usize, channel: usize) -> f64 {
        self.data[antenna * self.channels() + channel]
    }

    pub fn row(&self, antenna: usize) -> &[f64] {
        let c = self.channels();
        &self.data[antenna * c..(antenna + 1) * c]
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.0 * self.grid.1 != self.n_antennas {
            return Err(Error::InvalidInput("feature grid does not match antenna count".into()));
        }
        if self.data.len() != self.n_antennas * self.channels() || self.entries.len() != self.n_configs {
            return Err(Error::InvalidInput("feature map shape mismatch".into()));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        Ok(())
    }
}

/// Concatenate per-configuration feature blocks in the order of `entries`.
/// Every listed entry must have an observation.
pub fn assemble_feature_map(
    scene_id: u64,
    grid: (usize, usize),
    entries: &[usize],
    observations: &[EntryObservation],
) -> Result<FeatureMap> {
    let n_ant = grid.0 * grid.1;
    if entries.is_empty() {
        return Err(Error::IncompleteInput("no configurations requested".into()));
    }
    let mut blocks = Vec::with_capacity(entries.len());
    for &e in entries {
        let obs = observations
            .iter()
            .find(|o| o.entry == e)
            .ok_or_else(|| Error::IncompleteInput(format!("missing configuration {e}")))?;
        if obs.paths.len() != n_ant || obs.wavefront.samples.len() != n_ant {
            return Err(Error::IncompleteInput(format!(
                "configuration {e} has {} antennas, expected {n_ant}",
                obs.paths.len()
            )));
        }
        blocks.push(obs);
    }
    let channels = entries.len() * N_FEATURES;
    let mut data = vec![0.0; n_ant * channels];
    let mut degenerate = vec![false; n_ant];
    for (c, obs) in blocks.iter().enumerate() {
        for n in 0..n_ant {
            let rx = (obs.wavefront.received(n, 0), obs.wavefront.received(n, 1));
            let f = antenna_features(&obs.paths[n], rx);
            degenerate[n] |= f.degenerate;
            data[n * channels + c * N_FEATURES..n * channels + (c + 1) * N_FEATURES].copy_from_slice(&f.to_array());
        }
    }
    Ok(FeatureMap {
        n_antennas: n_ant,
        n_configs: entries.len(),
        grid,
        data,
        scene_id,
        entries: entries.to_vec(),
        degenerate_antennas: degenerate.iter().filter(|&&d| d).count(),
    })
}

/// Per-channel standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Mean and population standard deviation of every channel over all
    /// antennas of all maps. Constant channels get std 1.
    pub fn fit<'a, I>(maps: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureMap>,
    {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut maps_seen: Vec<&FeatureMap> = Vec::new();
        for m in maps {
            if sum.is_empty() {
                sum = vec![0.0; m.channels()];
            } else if m.channels() != sum.len() {
                return Err(Error::InvalidInput("feature maps disagree on channel count".into()));
            }
            for n in 0..m.n_antennas {
                for (s, v) in sum.iter_mut().zip(m.row(n)) {
                    *s += v;
                }
            }
            count += m.n_antennas;
            maps_seen.push(m);
        }
        if count == 0 {
            return Err(Error::InvalidInput("cannot fit standardizer on no data".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; mean.len()];
        for m in maps_seen {
            for n in 0..m.n_antennas {
                for ((s, v), mu) in sq.iter_mut().zip(m.row(n)).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, map: &FeatureMap) -> Vec<f64> {
        let c = map.channels();
        map.data
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect()
    }
}
