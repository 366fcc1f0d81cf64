//! Scaling-law fits: frontiers, single and separable power laws, compute-optimal
//! allocation, bootstrap intervals, and rendered reports.

pub mod allocation;
pub mod bootstrap;
pub mod frontier;
mod lsq;
pub mod power_law;
pub mod report;
pub mod sum_law;

pub use allocation::{allocate, consistency_check, AllocationResult, ConsistencyReport, PFLOPS};
pub use bootstrap::{bootstrap_ci, BootstrapSummary, Interval};
pub use frontier::{ema_smooth, frontier_of_points, pareto_frontier, sum_law_triples, Axis, FrontierPoint};
pub use power_law::{fit_power_law, PowerLawFit};
pub use report::{allocation_table, frontier_svg, frontier_table, sum_law_table, FamilyReport};
pub use sum_law::{fit_sum_power_law, SumPowerLawFit};
