//! Discrete-time warehouse multi-robot simulator.
//!
//! A central genetic allocator assigns ordered task lists to robots; each
//! robot then plans locally with a recursive excitation/relaxation potential
//! field that removes local minima by exciting the cell it occupies and
//! relaxing its neighbors back toward their initial potentials. An A*
//! baseline supplies optimal distances and a computation-time reference.

pub mod allocator;
pub mod baseline;
pub mod cli;
pub mod config;
pub mod engine;
pub mod gridworld;
pub mod planner;
pub mod potential;

pub use gridworld::{GridWorld, Position};
