//! Minimal dense-array engine with reverse-mode gradients.
//!
//! Everything the decoder, encoder and training loop need lives here:
//! [`Array`] (contiguous row-major storage), [`ParamStore`] (named parameters
//! with accumulating gradients), [`Graph`] (a tape recording forward ops and
//! replaying them backward), and [`gradcheck`] (central finite differences).
//!
//! Compute is generic over [`Scalar`] so training runs in `f32` while
//! gradient checks run the identical code in `f64`.

mod array;
mod gradcheck;
mod graph;
mod param;
mod rng;

pub use array::{Array, Scalar};
pub use gradcheck::{gradcheck, gradcheck_detailed, GradcheckReport};
pub use graph::{Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::RngStream;
