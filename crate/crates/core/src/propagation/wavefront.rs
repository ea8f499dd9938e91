use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tracer::PathComponent;
use super::{Jones, SimulationConfig, JONES_ZERO};

/// Per-element complex baseband samples for every (receive, transmit)
/// polarization pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wavefront {
    pub samples: Vec<Jones>,
}

impl Wavefront {
    /// Field received on polarization `p` with both transmit polarizations
    /// driven in phase: `r_p,h + r_p,v`.
    pub fn received(&self, antenna: usize, p: usize) -> Complex64 {
        let s = &self.samples[antenna];
        s[p][0] + s[p][1]
    }
}

/// Coherent sum of every path per element plus circularly-symmetric complex
/// Gaussian noise of variance σ² on each polarization pair. Paths are summed
/// in the order given; noise is drawn element by element in (p, q) order.
pub fn synthesize_wavefront(
    paths: &[Vec<PathComponent>],
    config: &SimulationConfig,
    noise_variance: f64,
    noise_seed: u64,
) -> Wavefront {
    let k = config.wavenumber();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let sd = (0.5 * noise_variance).sqrt();
    let normal = Normal::new(0.0, sd.max(0.0)).expect("finite sd");
    let samples = paths
        .iter()
        .map(|ant| {
            let mut acc = JONES_ZERO;
            for path in ant {
                let f = path.field(k);
                for p in 0..2 {
                    for q in 0..2 {
                        acc[p][q] += f[p][q];
                    }
                }
            }
            if noise_variance > 0.0 {
                for row in acc.iter_mut() {
                    for v in row.iter_mut() {
                        *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                    }
                }
            }
            acc
        })
        .collect();
    Wavefront { samples }
}
