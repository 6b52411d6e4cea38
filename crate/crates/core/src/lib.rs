//! ADNet: adversarial decomposition of a sentence representation into a
//! meaning vector and a continuous form vector.
//!
//! * [`text`] turns two line-per-sentence corpora into a shared vocabulary
//!   and paired batches.
//! * [`model`] holds the encoder, generator and critics.
//! * [`training`] implements the reconstruction, adversarial and
//!   motivational losses and the two-stage training loop.
//! * [`evaluation`] measures transfer strength, content preservation,
//!   fluency and embedding separation.
//! * [`synth`] generates paired synthetic registers with known ground truth.

pub mod error;
pub mod evaluation;
pub mod model;
pub mod text;
pub mod synth;
pub mod training;

pub use error::{AdnetError, Result};
