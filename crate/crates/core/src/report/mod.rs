//! Result artifacts: accuracy curves, sampling-time tables and OOD
//! rejection summaries.

mod curves;
mod timing;

pub use curves::{
    aggregate_groups, collect_runs, curve_csv, curve_label, emit_curves, ood_csv, ood_summary, render_svg, CurveSet, EmittedCurves, OodRow,
};
pub use timing::{time_sampling, time_strategies, write_timing_csv, Timing, MIN_REPETITIONS};
