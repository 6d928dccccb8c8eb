//! Transient-impact execution toolkit.
//!
//! Calibrates the decaying-propagator model of price response from trade and
//! quote data, assembles the resulting execution cost model (impact matrix,
//! variance structure, spread), and computes optimal intraday schedules:
//! closed form without spread, active-set numerical solve with spread, and the
//! mean-variance frontier, alongside flat and cosh baselines. A synthetic
//! simulator generates markets obeying the model for recovery and Monte-Carlo
//! validation.

pub mod calibration;
pub mod impact_model;
pub mod linalg;
pub mod market_data;
pub mod optimizer;
pub mod simulator;

/// Version stamped into every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub use calibration::{
    estimate_impact_function, estimate_noise_variance, estimate_spread, fit_kernel, r_squared,
    r_squared_profile, regress_propagator, CalibratedModel, CalibrationError, EmpiricalPropagator,
    ImpactForm, ImpactFunctionFit, KernelFit, NoiseEstimate, SpreadEstimate,
};
pub use impact_model::{
    to_participation, CostModel, CostReport, EffectivePropagator, ModelError, PropagatorKernel,
    Schedule, VolumeProfile,
};
pub use market_data::{
    aggregate, classify_trades, mid_points, AggregationScheme, IntervalRow, IntervalSeries,
    MarketDataError, MidPoint, QuoteRecord, Session, SignedTrade, TradeRecord,
};
pub use optimizer::{
    almgren_chriss_frontier, almgren_chriss_schedule, bertsimas_lo_flat, default_lambda_grid,
    efficient_frontier, solve_closed_form, solve_with_spread, solve_with_spread_smoothed,
    FrontierPoint, OptimizationConfig, SolveDiagnostics, SolverError, SolverPath,
};
pub use simulator::{
    simulate_execution, simulate_execution_samples, simulate_market, simulate_tape, MagnitudeDist,
    MarketSpec, NoiseConvention, NoiseDist, SignProcess, SimError, SimulatedCosts, TapeSpec,
};
