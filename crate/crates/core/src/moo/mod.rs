//! Multi-objective optimization: dominance, the steerable optimizer loop and
//! the front metrics reported at every iteration.

mod dominance;
mod hypervolume;
mod metrics;
pub mod optimizer;
mod wasserstein;

pub use dominance::{dominates, pareto_filter};
pub use hypervolume::{hypervolume, hypervolume_contributions, inside_reference};
pub use metrics::{coverage, crowding_distance, spacing};
pub use optimizer::{
    rank_by_contribution, run, step, AppliedEvent, Candidate, Evaluator, FnEvaluator, FrontMetrics,
    IterationRecord, Observer, OptimizerConfig, Origin, OutsideReference, RunState, SteeringEvent,
    ITERATION_SCHEMA,
};
pub use wasserstein::{wasserstein, wasserstein_2d, GroundCost};
