//! Single-bounce image-method scene standing in for ray-traced MPCs.
//!
//! A base station, a handful of planar (segment) reflectors and
//! axis-aligned rectangular blockers. Each location sees the LoS path (if
//! unblocked) plus one specular bounce per visible reflector. Path identity
//! is stable across locations: LoS is id 0, reflector `k` is id `k + 1`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{SceneConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::rng;
use crate::C64;

pub const LOS_ID: u32 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mpc {
    pub id: u32,
    pub gain: C64,
    /// Seconds.
    pub delay: f64,
    /// Departure angle at the base station, from array broadside.
    pub aod: f64,
    /// Arrival angle at the UE.
    pub aoa: f64,
    /// Unit vector at the UE pointing back along the arriving wave.
    pub direction: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSet {
    pub location: [f64; 2],
    pub paths: Vec<Mpc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// Amplitude reflection loss in (0, 1].
    pub loss: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blocker {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Blocker {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] > self.min[0] && p[0] < self.max[0] && p[1] > self.min[1] && p[1] < self.max[1]
    }

    /// Liang-Barsky clip of segment `p → q` against the open rectangle.
    pub fn intersects(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        let d = [q[0] - p[0], q[1] - p[1]];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..2 {
            if d[k].abs() < 1e-15 {
                if p[k] <= self.min[k] || p[k] >= self.max[k] {
                    return false;
                }
                continue;
            }
            let mut ta = (self.min[k] - p[k]) / d[k];
            let mut tb = (self.max[k] - p[k]) / d[k];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub extent: [f64; 2],
    pub bs: [f64; 2],
    pub fc: f64,
    pub max_paths: usize,
    pub reflectors: Vec<Reflector>,
    pub blockers: Vec<Blocker>,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn unit3(v: [f64; 2]) -> [f64; 3] {
    let n = norm(v);
    [v[0] / n, v[1] / n, 0.0]
}

fn angle(v: [f64; 2]) -> f64 {
    v[1].atan2(v[0])
}

impl Scene {
    /// Scene with the base station and nothing else.
    pub fn los_only(extent: [f64; 2], bs: [f64; 2], fc: f64) -> Self {
        Scene {
            extent,
            bs,
            fc,
            max_paths: 16,
            reflectors: Vec::new(),
            blockers: Vec::new(),
        }
    }

    /// Random reflectors and blockers seeded by `scene_seed`.
    pub fn generate(cfg: &SceneConfig, scene_seed: u64) -> Self {
        let mut rng = rng::substream(scene_seed, "scene-geometry", 0);
        let [ex, ey] = cfg.extent;
        let n_ref = rng.random_range(cfg.reflectors[0]..=cfg.reflectors[1]);
        let mut reflectors = Vec::with_capacity(n_ref);
        while reflectors.len() < n_ref {
            let c = [rng.random_range(0.0..ex), rng.random_range(0.0..ey)];
            if norm(sub(c, cfg.bs_position)) < 10.0 {
                continue;
            }
            // building facades are axis-aligned most of the time
            let theta = if rng.random::<f64>() < 0.7 {
                if rng.random::<bool>() {
                    0.0
                } else {
                    std::f64::consts::FRAC_PI_2
                }
            } else {
                rng.random_range(0.0..std::f64::consts::PI)
            };
            let half = rng.random_range(10.0..30.0);
            let (s, co) = theta.sin_cos();
            reflectors.push(Reflector {
                a: [c[0] - half * co, c[1] - half * s],
                b: [c[0] + half * co, c[1] + half * s],
                loss: rng.random_range(cfg.reflection_loss[0]..=cfg.reflection_loss[1]),
                phase: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            });
        }
        let mut blockers = Vec::with_capacity(cfg.blockers);
        while blockers.len() < cfg.blockers {
            let w = rng.random_range(5.0..20.0);
            let h = rng.random_range(5.0..20.0);
            let min = [rng.random_range(0.0..ex - w), rng.random_range(0.0..ey - h)];
            let b = Blocker {
                min,
                max: [min[0] + w, min[1] + h],
            };
            if b.contains(cfg.bs_position) || norm(sub(cfg.bs_position, [min[0] + w / 2.0, min[1] + h / 2.0])) < 15.0 {
                continue;
            }
            blockers.push(b);
        }
        Scene {
            extent: cfg.extent,
            bs: cfg.bs_position,
            fc: cfg.fc,
            max_paths: cfg.max_paths,
            reflectors,
            blockers,
        }
    }

    fn blocked(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        self.blockers.iter().any(|b| b.intersects(p, q))
    }

    fn amplitude(&self, dist: f64) -> f64 {
        let lambda = SPEED_OF_LIGHT / self.fc;
        lambda / (4.0 * std::f64::consts::PI * dist.max(1.0))
    }

    fn los(&self, ue: [f64; 2]) -> Option<Mpc> {
        if self.blocked(self.bs, ue) {
            return None;
        }
        let d = norm(sub(ue, self.bs));
        if d == 0.0 {
            return None;
        }
        let back = sub(self.bs, ue);
        Some(Mpc {
            id: LOS_ID,
            gain: C64::new(self.amplitude(d), 0.0),
            delay: d / SPEED_OF_LIGHT,
            aod: angle(sub(ue, self.bs)),
            aoa: angle(back),
            direction: unit3(back),
        })
    }

    fn bounce(&self, k: usize, ue: [f64; 2]) -> Option<Mpc> {
        let r = &self.reflectors[k];
        let along = sub(r.b, r.a);
        let len = norm(along);
        let n = [-along[1] / len, along[0] / len];
        let side_bs = dot(sub(self.bs, r.a), n);
        let side_ue = dot(sub(ue, r.a), n);
        if side_bs * side_ue <= 0.0 {
            return None;
        }
        let image = [self.bs[0] - 2.0 * side_bs * n[0], self.bs[1] - 2.0 * side_bs * n[1]];
        // hit point of ue → image on the wall line
        let frac = side_ue / (side_ue + side_bs);
        let hit = [ue[0] + frac * (image[0] - ue[0]), ue[1] + frac * (image[1] - ue[1])];
        let s = dot(sub(hit, r.a), along) / (len * len);
        if !(0.0..=1.0).contains(&s) {
            return None;
        }
        if self.blocked(self.bs, hit) || self.blocked(hit, ue) {
            return None;
        }
        let d = norm(sub(image, ue));
        let back = sub(hit, ue);
        Some(Mpc {
            id: k as u32 + 1,
            gain: C64::from_polar(r.loss * self.amplitude(d), r.phase),
            delay: d / SPEED_OF_LIGHT,
            aod: angle(sub(hit, self.bs)),
            aoa: angle(back),
            direction: unit3(back),
        })
    }

    /// Multipath components seen at `location`, ordered by path id.
    pub fn mpcs_at(&self, location: [f64; 2]) -> Result<MpcSet> {
        let mut paths: Vec<Mpc> = self
            .los(location)
            .into_iter()
            .chain((0..self.reflectors.len()).filter_map(|k| self.bounce(k, location)))
            .collect();
        if paths.is_empty() {
            return Err(Error::NoCoverage {
                x: location[0],
                y: location[1],
            });
        }
        if paths.len() > self.max_paths {
            paths.sort_by(|a, b| b.gain.norm().total_cmp(&a.gain.norm()).then(a.id.cmp(&b.id)));
            paths.truncate(self.max_paths);
            paths.sort_by_key(|p| p.id);
        }
        Ok(MpcSet { location, paths })
    }
}

/// MPCs for `location` in the scene seeded by `scene_seed`.
pub fn synthesize_mpcs(location: [f64; 2], scene_seed: u64, cfg: &SceneConfig) -> Result<MpcSet> {
    if location[0] < 0.0 || location[1] < 0.0 || location[0] > cfg.extent[0] || location[1] > cfg.extent[1] {
        return Err(Error::invalid(format!("location {location:?} outside scene extent")));
    }
    Scene::generate(cfg, scene_seed).mpcs_at(location)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn los_geometry() {
        let scene = Scene::los_only([200.0, 200.0], [0.0, 0.0], 3.5e9);
        let m = scene.mpcs_at([50.0, 0.0]).unwrap();
        assert_eq!(m.paths.len(), 1);
        let p = &m.paths[0];
        assert!((p.delay - 50.0 / SPEED_OF_LIGHT).abs() < 1e-20);
        assert_eq!(p.direction, [-1.0, 0.0, 0.0]);
        assert_eq!(p.aod, 0.0);
    }

    #[test]
    fn mirror_bounce_path_length() {
        let mut scene = Scene::los_only([100.0, 100.0], [10.0, 10.0], 3.5e9);
        // wall along y = 20 from x=0..100
        scene.reflectors.push(Reflector {
            a: [0.0, 20.0],
            b: [100.0, 20.0],
            loss: 0.5,
            phase: 0.0,
        });
        let m = scene.mpcs_at([30.0, 10.0]).unwrap();
        assert_eq!(m.paths.len(), 2);
        let refl = &m.paths[1];
        // image of the BS at (10, 30)
        let d = (20.0f64).hypot(20.0);
        assert!((refl.delay * SPEED_OF_LIGHT - d).abs() < 1e-9);
        // hit point (20, 20), seen from the UE up and to the left
        let s = 0.5f64.sqrt();
        assert!((refl.direction[0] + s).abs() < 1e-12 && (refl.direction[1] - s).abs() < 1e-12);
    }

    #[test]
    fn blocked_everywhere_is_no_coverage() {
        let mut scene = Scene::los_only([100.0, 100.0], [10.0, 10.0], 3.5e9);
        scene.blockers.push(Blocker {
            min: [40.0, 0.0],
            max: [45.0, 100.0],
        });
        let err = scene.mpcs_at([60.0, 10.0]).unwrap_err();
        assert!(err.to_string().contains("no coverage"));
    }

    #[test]
    fn nearby_locations_have_close_delays() {
        let cfg = SceneConfig::default();
        let a = synthesize_mpcs([50.0, 50.0], 3, &cfg).unwrap();
        let b = synthesize_mpcs([50.01, 50.0], 3, &cfg).unwrap();
        let bound = 0.01 / SPEED_OF_LIGHT;
        for pa in &a.paths {
            if let Some(pb) = b.paths.iter().find(|p| p.id == pa.id) {
                assert!((pa.delay - pb.delay).abs() <= bound * (1.0 + 1e-9));
            }
        }
        assert!((bound - 33.356e-12).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(
            synthesize_mpcs([70.0, 20.0], 9, &cfg).unwrap(),
            synthesize_mpcs([70.0, 20.0], 9, &cfg).unwrap()
        );
    }

    #[test]
    fn directions_are_unit() {
        let cfg = SceneConfig::default();
        let scene = Scene::generate(&cfg, 5);
        for x in (5..200).step_by(17) {
            for y in (5..200).step_by(23) {
                if let Ok(m) = scene.mpcs_at([x as f64, y as f64]) {
                    assert!(!m.paths.is_empty() && m.paths.len() <= cfg.max_paths);
                    for p in &m.paths {
                        let n = p.direction.iter().map(|c| c * c).sum::<f64>().sqrt();
                        assert!((n - 1.0).abs() < 1e-9);
                        assert!(p.delay >= 0.0);
                    }
                }
            }
        }
    }
}
