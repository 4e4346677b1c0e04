//! Compute-scaling harness: analytic MACs, memory estimates with
//! predicted out-of-memory flags, real-time factor and length sweeps.

pub mod cost;
pub mod memory;
pub mod rtf;
pub mod sweep;

pub use cost::{count_macs, layer_macs_per_frame, total_macs};
pub use memory::{estimate_peak_memory, estimate_training_peak_memory, MemoryEstimate, F64_BYTES};
pub use rtf::{measure_rtf, synthetic_wave};
pub use sweep::{read_sweep_csv, render_svg, sweep, write_sweep_csv, write_svg, SweepOptions, SweepRow, DEFAULT_LENGTHS};
