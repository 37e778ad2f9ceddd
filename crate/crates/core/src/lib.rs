//! Snapshot-based scene memory and a frontier-exploration simulator.

pub mod covis;
pub mod frontier;
pub mod grid;
pub mod kmeans;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod agent;

pub use grid::{CellState, GridIndex, OccupancyGrid};
pub use model::*;
