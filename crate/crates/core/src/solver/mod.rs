//! Samplers for the probability-flow ODE and the reverse SDE.
//!
//! All integrators run in EDM coordinates, where the PF ODE reads
//! `dx/dσ = (x − D(x, σ))/σ`. Models native to another frame are adapted
//! through [`FrameAdapter`].

mod guidance;
mod handle;
mod init;
mod ode;
mod sde;

pub use guidance::{guided_denoiser, Auxiliary, Classifier, GmmClassifier, Guided};
pub use handle::{
    Condition, Counted, Denoiser, FrameAdapter, NativeModel, OracleDenoiser, OracleModel,
};
pub use init::{exact_prior_init, standard_init, warm_start_init, InitKind};
pub use ode::{
    dpmpp_solve, ei_weights, euler_solve, heun_solve, unipc_solve, Sampler, Solution, Trajectory,
    TrajectoryRecord,
};
pub use sde::{em_step, sde_euler_maruyama};
