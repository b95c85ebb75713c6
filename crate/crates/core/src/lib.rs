//! Trajectory-integrated accessibility (TI-acs) of public EV charging
//! infrastructure.
//!
//! The crate evaluates, for each person in a corpus of week-long stay
//! trajectories, how many hours per day at least one public charging port
//! lies within walking distance of their current stay location (the
//! `hours` variant) and the stay-duration-weighted average number of ports
//! in range (the `ports` variant). Results can be segmented by stay type
//! (home / work / other) and by time-of-use tariff period, evaluated at
//! several distance thresholds and against dated snapshots of the charger
//! inventory, then aggregated to census tracts and analyzed (quantiles,
//! Gini index, group-disparity regression).
//!
//! Modules follow the pipeline order:
//!
//! * [`network`] — road graph, coordinate snapping, bounded shortest paths
//! * [`stations`] — charger inventory, snapshots, proximity lookup table
//! * [`trajectory`] — raw stay ingestion, travel-time routing, repair
//! * [`access`] — the accessibility metrics and their brute-force oracle
//! * [`tracts`] / [`stats`] — tract assignment, aggregation, statistics
//! * [`synth`] — deterministic synthetic scenario generator
//! * [`pipeline`] — end-to-end orchestration behind the CLI

pub mod access;
pub mod error;
pub mod exec;
pub mod geo;
pub mod network;
pub mod pipeline;
pub mod stations;
pub mod stats;
pub mod synth;
pub mod tracts;
pub mod trajectory;

pub use error::{Error, Result};
