//! Multi-objective (distance + energy) path planning on 2.5D terrain maps.
//!
//! The crate bundles:
//!
//! * [`terrain`] — digital elevation maps: generation, IO, downscaling.
//! * [`cost`] — the distance and slope-dependent energy model.
//! * [`gridworld`] — the episodic 8-action grid environment with shaped
//!   rewards and image observations.
//! * [`qnet`] — a small convolutional Q-network with hand-rolled forward,
//!   backward and checkpointing.
//! * [`trainer`] — experience replay, hybrid exploration and the training
//!   loop.
//! * [`planners`] — Dijkstra, A*, RRT baselines and the learned greedy
//!   rollout planner, all minimizing `distance + w * energy`.
//! * [`enhance`] — lifting a coarse path onto a fine map and smoothing it
//!   through turning points with cubic splines.
//! * [`bench`] — a benchmark harness producing CSV reports and renders.

pub mod bench;
pub mod cost;
pub mod enhance;
pub mod gridworld;
pub mod planners;
pub mod qnet;
pub mod render;
pub mod terrain;
pub mod trainer;
