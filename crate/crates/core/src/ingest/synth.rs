use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Fingerprint, IngestError, Partition, RadioMap, RSSI_CEIL_DBM, RSSI_FLOOR_DBM};

/// A transmitter placed explicitly in the synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSite {
    pub building: usize,
    pub floor: usize,
    pub x: f64,
    pub y: f64,
}

/// Parameters of a synthetic multi-building, multi-floor radio map.
///
/// Buildings are `width` × `depth` rectangles laid out along x with
/// `building_gap` metres between them. Training scans sit on a regular grid
/// of reference points; test scans either reuse grid points or are drawn
/// uniformly over the footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub buildings: usize,
    pub floors: usize,
    pub floor_height: f64,
    pub width: f64,
    pub depth: f64,
    pub building_gap: f64,
    /// Randomly placed APs, spread round-robin over buildings and floors.
    /// Ignored when `ap_sites` is non-empty.
    pub ap_count: usize,
    pub ap_sites: Vec<ApSite>,
    pub grid_spacing: f64,
    pub scans_per_point: usize,
    pub test_samples: usize,
    pub test_on_grid: bool,
    pub path_loss_exponent: f64,
    /// Received power at the reference distance, dBm.
    pub p0: f64,
    pub d0: f64,
    pub noise_sigma: f64,
    /// Extra loss per floor between transmitter and receiver, dB.
    pub floor_attenuation: f64,
    /// Readings below this become the sentinel.
    pub detection_threshold: f64,
    pub sentinel: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            buildings: 2,
            floors: 3,
            floor_height: 4.0,
            width: 40.0,
            depth: 20.0,
            building_gap: 60.0,
            ap_count: 60,
            ap_sites: Vec::new(),
            grid_spacing: 2.0,
            scans_per_point: 1,
            test_samples: 200,
            test_on_grid: true,
            path_loss_exponent: 3.0,
            p0: -35.0,
            d0: 1.0,
            noise_sigma: 4.0,
            floor_attenuation: 15.0,
            detection_threshold: -95.0,
            sentinel: 100.0,
        }
    }
}

/// Log-distance path loss: `p0 − 10·γ·log10(max(d, d0)/d0)`.
pub fn path_loss_rssi(p0: f64, gamma: f64, distance: f64, d0: f64) -> f64 {
    p0 - 10.0 * gamma * (distance.max(d0) / d0).log10()
}

impl SynthSpec {
    fn validate(&self) -> Result<(), IngestError> {
        let fail = |m: &str| Err(IngestError::Synth(m.to_string()));
        if self.buildings == 0 || self.floors == 0 {
            return fail("need at least one building and one floor");
        }
        if self.ap_count == 0 && self.ap_sites.is_empty() {
            return fail("zero APs");
        }
        if self.scans_per_point == 0 || self.test_samples == 0 {
            return fail("zero samples");
        }
        if !(self.grid_spacing > 0.0 && self.width > 0.0 && self.depth > 0.0) {
            return fail("grid spacing and footprint must be positive");
        }
        if !(self.d0 > 0.0) || !(self.noise_sigma >= 0.0) {
            return fail("d0 must be positive and noise_sigma non-negative");
        }
        if !(RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&self.detection_threshold) {
            return fail("detection threshold must lie within [-110, 0] dBm");
        }
        if (RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&self.sentinel) {
            return fail("sentinel must lie outside the detectable range");
        }
        if let Some(s) = self
            .ap_sites
            .iter()
            .find(|s| s.building >= self.buildings || s.floor >= self.floors)
        {
            return Err(IngestError::Synth(format!(
                "AP site {s:?} outside the building/floor ranges"
            )));
        }
        Ok(())
    }

    fn origin_x(&self, building: usize) -> f64 {
        building as f64 * (self.width + self.building_gap)
    }

    fn grid(&self) -> Vec<(usize, usize, f64, f64)> {
        let axis = |extent: f64| {
            (0..)
                .map(|i| self.grid_spacing * (i as f64 + 0.5))
                .take_while(move |&v| v < extent)
                .collect::<Vec<_>>()
        };
        let (xs, ys) = (axis(self.width), axis(self.depth));
        let mut points = Vec::new();
        for b in 0..self.buildings {
            for f in 0..self.floors {
                for &x in &xs {
                    for &y in &ys {
                        points.push((b, f, self.origin_x(b) + x, y));
                    }
                }
            }
        }
        points
    }

    fn reading(&self, ap: &ApSite, floor: usize, x: f64, y: f64, noise: f64) -> f64 {
        let dz = (ap.floor as f64 - floor as f64) * self.floor_height;
        let d = ((ap.x - x).powi(2) + (ap.y - y).powi(2) + dz * dz).sqrt();
        let crossed = ap.floor.abs_diff(floor) as f64;
        let v = path_loss_rssi(self.p0, self.path_loss_exponent, d, self.d0) + noise
            - crossed * self.floor_attenuation;
        if v < self.detection_threshold {
            self.sentinel
        } else {
            v.min(RSSI_CEIL_DBM)
        }
    }
}

/// Generates a `(train, test)` pair. Output is a pure function of
/// `(spec, seed)`.
pub fn synth_radio_map(spec: &SynthSpec, seed: u64) -> Result<(RadioMap, RadioMap), IngestError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<ApSite> = if spec.ap_sites.is_empty() {
        (0..spec.ap_count)
            .map(|i| {
                let building = i % spec.buildings;
                ApSite {
                    building,
                    floor: (i / spec.buildings) % spec.floors,
                    x: spec.origin_x(building) + rng.random::<f64>() * spec.width,
                    y: rng.random::<f64>() * spec.depth,
                }
            })
            .collect()
    } else {
        spec.ap_sites.clone()
    };
    let names: Vec<String> = (1..=sites.len()).map(|i| format!("WAP{i:03}")).collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| IngestError::Synth(e.to_string()))?;

    let scan = |prefix: &str, idx: usize, b: usize, f: usize, x: f64, y: f64, rng: &mut ChaCha8Rng| {
        let rssi = sites
            .iter()
            .map(|ap| {
                let n = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                spec.reading(ap, f, x, y, n)
            })
            .collect();
        Fingerprint {
            id: format!("{prefix}-{idx}"),
            rssi,
            x,
            y,
            floor: f as i32,
            building: b as i32,
            sentinel: spec.sentinel,
        }
    };

    let grid = spec.grid();
    let mut train = Vec::with_capacity(grid.len() * spec.scans_per_point);
    for &(b, f, x, y) in &grid {
        for _ in 0..spec.scans_per_point {
            let idx = train.len();
            train.push(scan("train", idx, b, f, x, y, &mut rng));
        }
    }
    let mut test = Vec::with_capacity(spec.test_samples);
    for idx in 0..spec.test_samples {
        let (b, f, x, y) = if spec.test_on_grid {
            grid[rng.random_range(0..grid.len())]
        } else {
            let b = rng.random_range(0..spec.buildings);
            let f = rng.random_range(0..spec.floors);
            let x = spec.origin_x(b) + rng.random::<f64>() * spec.width;
            (b, f, x, rng.random::<f64>() * spec.depth)
        };
        test.push(scan("test", idx, b, f, x, y, &mut rng));
    }
    Ok((
        RadioMap::new(train, names.clone(), spec.sentinel, Partition::Train)?,
        RadioMap::new(test, names, spec.sentinel, Partition::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_colocated_ap_reads_p0() {
        let spec = SynthSpec {
            buildings: 1,
            floors: 1,
            width: 4.0,
            depth: 4.0,
            ap_sites: vec![ApSite { building: 0, floor: 0, x: 1.0, y: 1.0 }],
            grid_spacing: 2.0,
            noise_sigma: 0.0,
            p0: -30.0,
            test_samples: 1,
            ..SynthSpec::default()
        };
        let (train, _) = synth_radio_map(&spec, 7).unwrap();
        let at_ap = train
            .fingerprints()
            .iter()
            .find(|f| f.x == 1.0 && f.y == 1.0)
            .unwrap();
        assert_eq!(at_ap.rssi[0], -30.0);
    }

    #[test]
    fn ten_reference_distances_at_gamma_two_lose_twenty_db() {
        assert_eq!(path_loss_rssi(-30.0, 2.0, 10.0, 1.0), -50.0);
        assert_eq!(path_loss_rssi(-30.0, 2.0, 0.0, 1.0), -30.0);
        assert_eq!(path_loss_rssi(-40.0, 2.0, 25.0, 2.5), -60.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SynthSpec::default();
        let a = synth_radio_map(&spec, 11).unwrap();
        let b = synth_radio_map(&spec, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_radio_map(&spec, 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn shape_and_labels() {
        let spec = SynthSpec::default();
        let (train, test) = synth_radio_map(&spec, 1).unwrap();
        assert_eq!(train.len(), 2 * 3 * 20 * 10);
        assert_eq!(test.len(), 200);
        assert_eq!(train.ap_count(), 60);
        assert_eq!(train.buildings().len(), 2);
        assert_eq!(train.floors().len(), 3);
        assert_eq!(train.partition(), Partition::Train);
    }

    #[test]
    fn rejects_degenerate_specs() {
        for spec in [
            SynthSpec { ap_count: 0, ..SynthSpec::default() },
            SynthSpec { test_samples: 0, ..SynthSpec::default() },
            SynthSpec { scans_per_point: 0, ..SynthSpec::default() },
            SynthSpec { detection_threshold: -120.0, ..SynthSpec::default() },
        ] {
            assert!(matches!(synth_radio_map(&spec, 0), Err(IngestError::Synth(_))));
        }
    }
}
