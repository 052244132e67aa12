//! Runtime primitives for a unified world-action model: action
//! representation, flow-matching sampling with a video-to-action schedule
//! and velocity caching, real-time chunk fusion for asynchronous control,
//! attention-mask construction, FP8 linear-layer emulation, and a
//! closed-loop simulator with latency accounting.
//!
//! Everything here is deterministic: given the same seed, config, and
//! velocity field, every sampler trajectory and every simulated episode is
//! bit-reproducible.

// `!(x > 0.0)` guards reject NaN along with the out-of-range values;
// `partial_cmp` would obscure that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chunk;
pub mod config;
pub mod error;
pub mod fp8;
pub mod fusion;
pub mod masks;
pub mod pose;
pub mod sampler;
pub mod sim;
pub mod smooth;
pub mod toy;

pub use chunk::{ActionChunk, ACTION_DIM};
pub use error::{Error, Result};
pub use pose::{GripperRange, Pose, RelAction};
