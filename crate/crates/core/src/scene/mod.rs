//! Dynamic digital twin: trajectories on a road graph, geometric multipath,
//! Doppler evolution and wideband MIMO-OFDM synthesis.

mod dataset;
pub mod geometry;
pub mod road;
pub mod synth;
pub mod trajectory;

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, DatasetSummary, ManifestRow};
pub use geometry::{synthesize_mpcs, Blocker, Mpc, MpcSet, Reflector, Scene};
pub use road::{build_road_graph, RoadGraph, Street};
pub use synth::{
    align_paths, doppler_shift, interpolate_mpcs, steering_vector, synthesize_frame, wrap_angle,
    RadioConfig,
};
pub use trajectory::{sample_trajectory, ActorKind, EdgeAnchor, Trajectory};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::rng;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Scene size in meters.
    pub extent: [f64; 2],
    /// Ray-node lattice spacing in meters.
    pub d_grid: f64,
    /// Streets every this many lattice lines.
    pub street_pitch: usize,
    pub bs_position: [f64; 2],
    /// Inclusive range for the number of reflectors.
    pub reflectors: [usize; 2],
    pub reflection_loss: [f64; 2],
    pub blockers: usize,
    pub max_paths: usize,
    pub fc: f64,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub bandwidth: f64,
    pub frames: usize,
    pub dt: f64,
    pub speed_range: [f64; 2],
    /// Actors at or below this speed walk as pedestrians.
    pub pedestrian_max_speed: f64,
    pub city_tag: String,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            extent: [200.0, 200.0],
            d_grid: 0.1,
            street_pitch: 200,
            bs_position: [100.0, 100.0],
            reflectors: [4, 8],
            reflection_loss: [0.3, 0.8],
            blockers: 3,
            max_paths: 16,
            fc: 3.5e9,
            n_antennas: 32,
            n_subcarriers: 64,
            bandwidth: 15.36e6,
            frames: 20,
            dt: 1e-3,
            speed_range: [0.0, 30.0],
            pedestrian_max_speed: 2.0,
            city_tag: "synthetic".into(),
        }
    }
}

impl SceneConfig {
    pub fn radio(&self) -> RadioConfig {
        RadioConfig {
            fc: self.fc,
            n_antennas: self.n_antennas,
            n_subcarriers: self.n_subcarriers,
            bandwidth: self.bandwidth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fc > 0.0) {
            return Err(Error::invalid("fc must be positive"));
        }
        if self.frames == 0 || self.n_antennas == 0 || self.n_subcarriers == 0 {
            return Err(Error::invalid("frames, antennas and subcarriers must be >= 1"));
        }
        if !(self.dt > 0.0) || !(self.bandwidth > 0.0) {
            return Err(Error::invalid("dt and bandwidth must be positive"));
        }
        if self.reflectors[0] > self.reflectors[1] || self.speed_range[0] > self.speed_range[1] {
            return Err(Error::invalid("empty reflector or speed range"));
        }
        if self.speed_range[0] < 0.0 {
            return Err(Error::invalid("speeds must be >= 0"));
        }
        if self.max_paths == 0 {
            return Err(Error::invalid("max_paths must be >= 1"));
        }
        Ok(())
    }
}

/// T space-frequency frames (antennas × subcarriers) of one actor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSequence {
    pub frames: Vec<Frame>,
    pub dt: f64,
    pub fc: f64,
    pub velocity: [f64; 2],
    pub city_tag: String,
}

impl ChannelSequence {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Scene geometry plus road network for one seed ("city").
#[derive(Clone, Debug)]
pub struct World {
    pub cfg: SceneConfig,
    pub scene: Scene,
    pub graph: RoadGraph,
}

impl World {
    pub fn build(cfg: &SceneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(World {
            cfg: cfg.clone(),
            scene: Scene::generate(cfg, seed),
            graph: build_road_graph(cfg.extent, cfg.d_grid, cfg.street_pitch, seed)?,
        })
    }
}

const MAX_ATTEMPTS: u64 = 64;

/// Sample an actor and synthesize `frames` channel snapshots.
///
/// Ray nodes sit on the road lattice; positions between two nodes use the
/// interpolated MPCs of the bracketing pair. Trajectories that dead-end or
/// cross an uncovered node are redrawn.
pub fn generate_sequence(
    world: &World,
    speed_range: [f64; 2],
    frames: usize,
    dt: f64,
    seed: u64,
) -> Result<ChannelSequence> {
    if frames == 0 {
        return Err(Error::invalid("T must be >= 1"));
    }
    let mut rng = rng::substream(seed, "sequence", 0);
    let speed = if speed_range[1] > speed_range[0] {
        rng.random_range(speed_range[0]..speed_range[1])
    } else {
        speed_range[0]
    };
    let kind = if speed <= world.cfg.pedestrian_max_speed {
        ActorKind::Pedestrian
    } else {
        ActorKind::Vehicle
    };
    let radio = world.cfg.radio();

    let mut last_err = None;
    for _ in 0..MAX_ATTEMPTS {
        let traj_seed: u64 = rng.random();
        let traj = match sample_trajectory(&world.graph, speed, frames, dt, kind, traj_seed) {
            Ok(t) => t,
            Err(e @ Error::TrajectoryExhausted { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        match synthesize_along(world, &traj, &radio) {
            Ok(frames) => {
                let a = traj.anchors[0];
                let h = world.graph.lane_direction(a.from, a.to);
                return Ok(ChannelSequence {
                    frames,
                    dt,
                    fc: radio.fc,
                    velocity: [speed * h[0], speed * h[1]],
                    city_tag: world.cfg.city_tag.clone(),
                })
            }
            Err(e @ Error::NoCoverage { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::invalid("sequence generation failed")))
}

fn synthesize_along(world: &World, traj: &Trajectory, radio: &RadioConfig) -> Result<Vec<Frame>> {
    let mut nodes: HashMap<usize, MpcSet> = HashMap::new();
    let mut node = |v: usize| -> Result<MpcSet> {
        if let Some(m) = nodes.get(&v) {
            return Ok(m.clone());
        }
        let m = world.scene.mpcs_at(world.graph.position(v))?;
        nodes.insert(v, m.clone());
        Ok(m)
    };
    let mut out = Vec::with_capacity(traj.len());
    for (t, anchor) in traj.anchors.iter().enumerate() {
        let (a, b) = align_paths(&node(anchor.from)?, &node(anchor.to)?);
        let mpcs = interpolate_mpcs(&a, &b, anchor.lambda)?;
        out.push(synthesize_frame(&mpcs, traj.velocities[t], t, traj.dt, radio));
    }
    Ok(out)
}
