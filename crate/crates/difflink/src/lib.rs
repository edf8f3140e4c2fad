//! Desk-scale simulator of collaborative distributed diffusion over wireless
//! links.
//!
//! A denoising chain with a closed-form Gaussian-mixture denoiser is split
//! into a shared phase (run once per group of semantically similar users)
//! and per-user local phases. The intermediate latent crosses a simulated
//! lossy channel; the library measures what that does to output quality,
//! latency and energy under three network architectures.
//!
//! Modules:
//! - [`diffusion`]: schedules, latents, the analytic mixture score, ancestral
//!   sampling and shared/local split sampling.
//! - [`semantic`]: prompt parsing, knowledge-graph similarity, user grouping.
//! - [`channel`]: quantization, BER models (fixed, AWGN/Rayleigh BPSK) and
//!   seeded bit-flip transmission.
//! - [`orchestrator`]: task planning under the three architectures, cached
//!   execution, the latency/energy ledger and fade-driven split adaptation.
//! - [`metrics`]: MSE, PSNR, SSIM and nearest-prototype fidelity.
//! - [`config`] / [`harness`]: scenario files, presets, sweep execution and
//!   CSV/PGM artifacts.
//!
//! Start with the runnable examples (`cargo run --example sample_image`) or
//! the `difflink` binary (`difflink preset ber_sweep`).

pub mod assets;
pub mod channel;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod orchestrator;
pub mod rng;
pub mod semantic;

pub use error::{Error, Result};
