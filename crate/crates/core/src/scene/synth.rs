use std::f64::consts::PI;

use super::geometry::{Mpc, MpcSet};
use super::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::C64;

/// Half-wavelength ULA at the base station and an OFDM subcarrier grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadioConfig {
    pub fc: f64,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub bandwidth: f64,
}

impl RadioConfig {
    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth / self.n_subcarriers as f64
    }

    /// Absolute frequency of subcarrier `k`, centered on the carrier.
    pub fn frequency(&self, k: usize) -> f64 {
        self.fc + self.baseband_offset(k)
    }

    pub fn baseband_offset(&self, k: usize) -> f64 {
        (k as f64 - (self.n_subcarriers / 2) as f64) * self.subcarrier_spacing()
    }
}

/// Doppler shift in Hz: `(fc / c) · ⟨v, r̂⟩` with r̂ the UE-side direction.
pub fn doppler_shift(mpc: &Mpc, velocity: [f64; 2], fc: f64) -> f64 {
    let radial = velocity[0] * mpc.direction[0] + velocity[1] * mpc.direction[1];
    fc / SPEED_OF_LIGHT * radial
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

fn lerp_angle(a: f64, b: f64, lambda: f64) -> f64 {
    wrap_angle(a + lambda * wrap_angle(b - a))
}

/// Pad both sets so that every path id appears in each, absent paths
/// entering with zero gain and the partner's geometry.
pub fn align_paths(a: &MpcSet, b: &MpcSet) -> (MpcSet, MpcSet) {
    let mut ids: Vec<u32> = a.paths.iter().chain(&b.paths).map(|p| p.id).collect();
    ids.sort_unstable();
    ids.dedup();
    let pick = |set: &MpcSet, other: &MpcSet, id: u32| -> Mpc {
        match set.paths.iter().find(|p| p.id == id) {
            Some(p) => p.clone(),
            None => {
                let mut p = other.paths.iter().find(|p| p.id == id).unwrap().clone();
                p.gain = C64::new(0.0, 0.0);
                p
            }
        }
    };
    let pa = ids.iter().map(|&id| pick(a, b, id)).collect();
    let pb = ids.iter().map(|&id| pick(b, a, id)).collect();
    (
        MpcSet {
            location: a.location,
            paths: pa,
        },
        MpcSet {
            location: b.location,
            paths: pb,
        },
    )
}

/// Interpolate MPC parameters between two ray nodes.
///
/// Gains and delays are linear (complex-linear for gains), angles follow
/// the shorter arc, directions are renormalized.
pub fn interpolate_mpcs(a: &MpcSet, b: &MpcSet, lambda: f64) -> Result<MpcSet> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if a.paths.len() != b.paths.len() {
        return Err(Error::PathAlignment(format!(
            "{} paths vs {} paths",
            a.paths.len(),
            b.paths.len()
        )));
    }
    let (w0, w1) = (1.0 - lambda, lambda);
    let mut paths = Vec::with_capacity(a.paths.len());
    for (pa, pb) in a.paths.iter().zip(&b.paths) {
        if pa.id != pb.id {
            return Err(Error::PathAlignment(format!("path id {} vs {}", pa.id, pb.id)));
        }
        let mut dir = [0.0; 3];
        for k in 0..3 {
            dir[k] = w0 * pa.direction[k] + w1 * pb.direction[k];
        }
        let n = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
        let direction = if n > 0.0 {
            [dir[0] / n, dir[1] / n, dir[2] / n]
        } else {
            pa.direction
        };
        paths.push(Mpc {
            id: pa.id,
            gain: pa.gain * w0 + pb.gain * w1,
            delay: w0 * pa.delay + w1 * pb.delay,
            aod: lerp_angle(pa.aod, pb.aod, lambda),
            aoa: lerp_angle(pa.aoa, pb.aoa, lambda),
            direction,
        });
    }
    let location = [
        w0 * a.location[0] + w1 * b.location[0],
        w0 * a.location[1] + w1 * b.location[1],
    ];
    Ok(MpcSet { location, paths })
}

/// Unnormalized half-wavelength ULA steering vector `[e^{jπ n sin θ}]`.
pub fn steering_vector(theta: f64, n: usize) -> Vec<C64> {
    let s = theta.sin();
    (0..n).map(|i| C64::from_polar(1.0, PI * i as f64 * s)).collect()
}

/// Space-frequency channel (antennas × subcarriers) at frame `t_index`.
///
/// Per path: gain · delay phase across subcarriers · Doppler phase at
/// `t_index·dt` · BS steering vector. The delay phase uses the baseband
/// subcarrier offset; carrier-phase rotation over time enters only through
/// the Doppler term.
pub fn synthesize_frame(
    mpcs: &MpcSet,
    velocity: [f64; 2],
    t_index: usize,
    dt: f64,
    radio: &RadioConfig,
) -> Frame {
    let (n, m) = (radio.n_antennas, radio.n_subcarriers);
    if !m.is_power_of_two() {
        log::warn!("{m} subcarriers is not a power of two");
    }
    let mut frame = Frame::zeros(n, m);
    let t = t_index as f64 * dt;
    for path in &mpcs.paths {
        let fd = doppler_shift(path, velocity, radio.fc);
        let common = path.gain * C64::from_polar(1.0, 2.0 * PI * fd * t);
        let steer = steering_vector(path.aod, n);
        let freq: Vec<C64> = (0..m)
            .map(|k| C64::from_polar(1.0, -2.0 * PI * radio.baseband_offset(k) * path.delay))
            .collect();
        for (row, a) in steer.iter().enumerate() {
            let ca = common * a;
            let out = &mut frame.data[row * m..(row + 1) * m];
            for (o, f) in out.iter_mut().zip(&freq) {
                *o += ca * f;
            }
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(id: u32, delay: f64, aod: f64, dir: [f64; 2]) -> Mpc {
        let n = dir[0].hypot(dir[1]);
        Mpc {
            id,
            gain: C64::new(1.0, 0.0),
            delay,
            aod,
            aoa: aod,
            direction: [dir[0] / n, dir[1] / n, 0.0],
        }
    }

    fn set(paths: Vec<Mpc>) -> MpcSet {
        MpcSet {
            location: [0.0, 0.0],
            paths,
        }
    }

    fn radio() -> RadioConfig {
        RadioConfig {
            fc: 3.5e9,
            n_antennas: 8,
            n_subcarriers: 16,
            bandwidth: 3.84e6,
        }
    }

    #[test]
    fn doppler_values() {
        let p = path(0, 0.0, 0.0, [1.0, 0.0]);
        assert_eq!(doppler_shift(&p, [0.0, 30.0], 3.5e9), 0.0);
        let fd = doppler_shift(&p, [30.0, 0.0], 3.5e9);
        // 3.5e9 * 30 / 299792458
        assert!((fd - 350.242_300).abs() < 1e-6, "{fd}");
        assert_eq!(doppler_shift(&p, [-30.0, 0.0], 3.5e9), -fd);
    }

    #[test]
    fn interpolation_endpoints_midpoint_wrap() {
        let mut a = path(1, 10e-9, 179f64.to_radians(), [1.0, 0.0]);
        let mut b = path(1, 20e-9, -179f64.to_radians(), [0.0, 1.0]);
        a.gain = C64::new(1.0, 2.0);
        b.gain = C64::new(-3.0, 0.5);
        let (sa, sb) = (set(vec![a]), set(vec![b]));
        assert_eq!(interpolate_mpcs(&sa, &sb, 0.0).unwrap().paths, sa.paths);
        assert_eq!(interpolate_mpcs(&sa, &sb, 1.0).unwrap().paths, sb.paths);
        let mid = interpolate_mpcs(&sa, &sb, 0.5).unwrap();
        assert!((mid.paths[0].delay - 15e-9).abs() < 1e-21);
        assert!((mid.paths[0].aod.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn mismatched_paths_rejected() {
        let a = set(vec![path(0, 0.0, 0.0, [1.0, 0.0])]);
        let b = set(vec![]);
        assert!(matches!(interpolate_mpcs(&a, &b, 0.5), Err(Error::PathAlignment(_))));
        let (pa, pb) = align_paths(&a, &b);
        assert_eq!(pa.paths.len(), 1);
        assert_eq!(pb.paths[0].gain, C64::new(0.0, 0.0));
        assert!(interpolate_mpcs(&pa, &pb, 0.5).is_ok());
    }

    #[test]
    fn phase_terms_vanish() {
        let r = radio();
        let p = path(0, 0.0, 0.3, [1.0, 0.0]);
        let steer = steering_vector(0.3, r.n_antennas);
        for t in 0..3 {
            let f = synthesize_frame(&set(vec![p.clone()]), [0.0, 0.0], t, 1e-3, &r);
            for n in 0..r.n_antennas {
                for k in 0..r.n_subcarriers {
                    assert!((f.get(n, k) - steer[n]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn doppler_phase_advance_per_frame() {
        let r = radio();
        let p = path(0, 37e-9, 0.1, [1.0, 0.0]);
        // velocity giving fd = 350 Hz exactly
        let v = 350.0 * SPEED_OF_LIGHT / r.fc;
        let s = set(vec![p]);
        let f0 = synthesize_frame(&s, [v, 0.0], 0, 1e-3, &r);
        let f1 = synthesize_frame(&s, [v, 0.0], 1, 1e-3, &r);
        let ratio = f1.get(2, 5) / f0.get(2, 5);
        let expected = wrap_angle(2.0 * PI * 0.35);
        assert!((ratio.arg() - expected).abs() < 1e-9);
    }

    #[test]
    fn superposition() {
        let r = radio();
        let p1 = path(0, 50e-9, 0.2, [1.0, 0.3]);
        let mut p2 = path(1, 120e-9, -0.7, [-0.2, 1.0]);
        p2.gain = C64::new(0.3, -0.4);
        let v = [12.0, -4.0];
        let both = synthesize_frame(&set(vec![p1.clone(), p2.clone()]), v, 7, 1e-3, &r);
        let mut sum = synthesize_frame(&set(vec![p1]), v, 7, 1e-3, &r);
        sum.add_assign(&synthesize_frame(&set(vec![p2]), v, 7, 1e-3, &r));
        assert!(both.max_abs_diff(&sum) <= 1e-10 * both.frobenius());
    }
}
