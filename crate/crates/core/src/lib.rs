//! Compressed gradient descent with matrix-valued stepsizes.
//!
//! The crate covers the two update rules `x - D S grad f(x)` and
//! `x - T D grad f(x)` with random unbiased sketches `S`, `T`:
//!
//! * [`linalg`]: symmetric PSD and block-diagonal matrices.
//! * [`sketch`]: sketch distributions and their closed-form second moments.
//! * [`stepsize`]: stepsize conditions, optimal and layerwise stepsizes,
//!   distributed feasibility and calibration.
//! * [`problems`]: objectives with gradient oracles and smoothness matrices.
//! * [`optimizer`] and [`distributed`]: the iteration loops and the
//!   multi-client simulator.
//! * [`report`]: communication-complexity table and trace aggregation.

pub mod distributed;
pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod problems;
pub mod report;
pub mod rng;
pub mod sketch;
pub mod stepsize;

pub use error::{Error, Result};
pub use linalg::{BlockDiagMatrix, LayerPartition, SpdMatrix};
pub use sketch::{LayerSketch, SketchSpec};
pub use stepsize::{StepsizeMatrix, Variant};
