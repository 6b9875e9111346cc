use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::road::RoadGraph;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
}

/// Position of a sample on the lattice edge `from → to`, `lambda` of the way.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAnchor {
    pub from: usize,
    pub to: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub anchors: Vec<EdgeAnchor>,
    pub dt: f64,
    pub actor_kind: ActorKind,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn path_length(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

fn street_vertex(graph: &RoadGraph, rng: &mut Rng) -> usize {
    let use_row = graph.cols.is_empty() || (!graph.rows.is_empty() && rng.random::<bool>());
    if use_row {
        let s = graph.rows[rng.random_range(0..graph.rows.len())];
        graph.vertex(rng.random_range(0..graph.nx), s.index)
    } else {
        let s = graph.cols[rng.random_range(0..graph.cols.len())];
        graph.vertex(s.index, rng.random_range(0..graph.ny))
    }
}

fn next_vertex(
    graph: &RoadGraph,
    kind: ActorKind,
    prev: usize,
    at: usize,
    rng: &mut Rng,
) -> Option<usize> {
    let candidates: Vec<usize> = match kind {
        ActorKind::Vehicle => graph.out_edges(at),
        // no U-turns: heading changes by at most 90 degrees
        ActorKind::Pedestrian => graph
            .street_neighbors(at)
            .into_iter()
            .filter(|&w| w != prev)
            .collect(),
    };
    candidates.choose(rng).copied()
}

/// Walk the road graph at constant `speed` for `n_steps` samples.
///
/// Positions advance by `speed·dt` along graph edges, so samples fall
/// between lattice vertices whenever the step is shorter than `d_grid`.
/// Turns are drawn only on arrival at a vertex with several continuations.
/// Vehicles obey lane directions; pedestrians may walk either way along a
/// street but never reverse. The velocity of a step that contains a turn is
/// its chord velocity, so `|Δp| = |v|·dt` holds for every step.
pub fn sample_trajectory(
    graph: &RoadGraph,
    speed: f64,
    n_steps: usize,
    dt: f64,
    kind: ActorKind,
    seed: u64,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be >= 1"));
    }
    if !(speed >= 0.0) || !speed.is_finite() {
        return Err(Error::invalid(format!("speed must be finite and >= 0, got {speed}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if graph.rows.is_empty() && graph.cols.is_empty() {
        return Err(Error::invalid("road graph has no streets"));
    }
    let mut rng = rng::substream(seed, "trajectory", 0);

    // pick a start vertex with at least one continuation
    let (mut u, mut v) = {
        let mut found = None;
        for _ in 0..1000 {
            let s = street_vertex(graph, &mut rng);
            let first = match kind {
                ActorKind::Vehicle => graph.out_edges(s).choose(&mut rng).copied(),
                ActorKind::Pedestrian => graph.street_neighbors(s).choose(&mut rng).copied(),
            };
            if let Some(f) = first {
                found = Some((s, f));
                break;
            }
        }
        found.ok_or_else(|| Error::invalid("no drivable start vertex"))?
    };
    let d = graph.d_grid;
    let mut s = rng.random_range(0.0..d);
    let step_len = speed * dt;
    let required = step_len * (n_steps - 1) as f64;
    let mut travelled = 0.0;

    let mut positions = Vec::with_capacity(n_steps);
    let mut velocities = Vec::with_capacity(n_steps);
    let mut anchors = Vec::with_capacity(n_steps);

    let place = |u: usize, v: usize, s: f64| {
        let p = graph.position(u);
        let h = graph.lane_direction(u, v);
        [p[0] + h[0] * s, p[1] + h[1] * s]
    };

    for t in 0..n_steps {
        let p = place(u, v, s);
        positions.push(p);
        anchors.push(EdgeAnchor {
            from: u,
            to: v,
            lambda: s / d,
        });
        let heading = graph.lane_direction(u, v);
        if t + 1 == n_steps {
            velocities.push([speed * heading[0], speed * heading[1]]);
            break;
        }
        let mut remaining = step_len;
        let mut turned = false;
        loop {
            let left = d - s;
            if remaining < left {
                s += remaining;
                break;
            }
            remaining -= left;
            travelled += left;
            let w = next_vertex(graph, kind, u, v, &mut rng).ok_or(Error::TrajectoryExhausted {
                travelled,
                required,
            })?;
            if graph.lane_direction(v, w) != heading {
                turned = true;
            }
            u = v;
            v = w;
            s = 0.0;
        }
        travelled += remaining;
        if turned {
            let q = place(u, v, s);
            velocities.push([(q[0] - p[0]) / dt, (q[1] - p[1]) / dt]);
        } else {
            velocities.push([speed * heading[0], speed * heading[1]]);
        }
    }

    Ok(Trajectory {
        positions,
        velocities,
        anchors,
        dt,
        actor_kind: kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::road::build_road_graph;

    fn graph() -> RoadGraph {
        build_road_graph([20.0, 20.0], 0.1, 40, 1).unwrap()
    }

    fn check_kinematics(tr: &Trajectory) {
        for t in 0..tr.len() - 1 {
            let (a, b) = (tr.positions[t], tr.positions[t + 1]);
            let step = (b[0] - a[0]).hypot(b[1] - a[1]);
            let v = tr.velocities[t];
            assert!((step - v[0].hypot(v[1]) * tr.dt).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn stationary_actor() {
        let tr = sample_trajectory(&graph(), 0.0, 10, 1e-3, ActorKind::Vehicle, 3).unwrap();
        assert!(tr.positions.iter().all(|p| *p == tr.positions[0]));
        assert!(tr.velocities.iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn sub_grid_steps() {
        let tr = sample_trajectory(&graph(), 10.0, 5, 1e-3, ActorKind::Vehicle, 3).unwrap();
        for w in tr.positions.windows(2) {
            let step = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            assert!((step - 0.01).abs() < 1e-9);
            assert!(step < 0.1);
        }
    }

    #[test]
    fn path_length_arithmetic() {
        // 20 samples span 19 steps, 20 steps of motion need 21 samples
        let tr = sample_trajectory(&graph(), 30.0, 21, 1e-3, ActorKind::Vehicle, 8).unwrap();
        assert!((tr.path_length() - 0.6).abs() < 1e-6 || tr.path_length() < 0.6);
        check_kinematics(&tr);
    }

    #[test]
    fn long_walks_turn_and_stay_consistent() {
        let g = build_road_graph([8.0, 8.0], 0.1, 10, 2).unwrap();
        for seed in 0..10 {
            for kind in [ActorKind::Vehicle, ActorKind::Pedestrian] {
                match sample_trajectory(&g, 25.0, 400, 1e-3, kind, seed) {
                    Ok(tr) => {
                        check_kinematics(&tr);
                        for a in &tr.anchors {
                            assert!(a.lambda >= 0.0 && a.lambda < 1.0);
                        }
                    }
                    Err(Error::TrajectoryExhausted { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn pedestrians_never_reverse() {
        let g = build_road_graph([4.0, 4.0], 0.1, 5, 7).unwrap();
        // walks that run into the boundary end early; check the rest
        let walks: Vec<_> = (0..40)
            .filter_map(|seed| sample_trajectory(&g, 1.5, 600, 1e-2, ActorKind::Pedestrian, seed).ok())
            .collect();
        assert!(!walks.is_empty());
        for tr in walks {
            for w in tr.anchors.windows(2) {
                if w[1].from == w[0].to {
                    assert_ne!(w[1].to, w[0].from);
                }
            }
        }
    }

    #[test]
    fn dead_end_reports_exhaustion() {
        // a single one-way row with no columns dead-ends at the boundary
        let g = RoadGraph {
            nx: 11,
            ny: 3,
            d_grid: 0.1,
            rows: vec![crate::scene::road::Street { index: 1, forward: true }],
            cols: vec![],
        };
        let err = sample_trajectory(&g, 30.0, 100, 1e-3, ActorKind::Vehicle, 0).unwrap_err();
        assert!(err.to_string().contains("trajectory exhausted"));
    }
}
