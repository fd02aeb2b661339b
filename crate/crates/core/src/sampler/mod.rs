//! Noise schedule, forward diffusion and the reverse reconstruction loop.

pub mod dc;
pub mod reverse;
pub mod schedule;

pub use dc::{
    gaussian_dc_gradient, gaussian_objective, poisson_curvature, poisson_dc_gradient, poisson_objective,
    positive_part,
};
pub use reverse::{
    initial_state, reconstruct_joint, reconstruct_single, reverse_step, run_sampler, write_trace_csv, DataScales,
    Measurements, Modality, SamplerConfig, SamplerState, SingleImage, TraceRow, UpdateRule,
};
pub use schedule::{forward_diffuse, sigma_at, NoiseSchedule};
