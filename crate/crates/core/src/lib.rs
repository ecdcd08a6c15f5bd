//! Pseudorandom pseudodistributions for read-once branching programs, with
//! exact verification against brute-force oracles at desk scale.

pub mod bits;
pub mod capacity;
pub mod error;
pub mod eval;
pub mod forms;
pub mod mat;
pub mod pdist;
pub mod prpd;
pub mod recursion;
pub mod robp;
pub mod saks_zhou;
pub mod sampler;
pub mod verify;

pub use bits::BitString;
pub use error::{Error, Result};
pub use mat::{Mat, Scalar, Q};
pub use pdist::PseudoDist;
pub use robp::Robp;
