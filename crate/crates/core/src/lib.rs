//! Implicit material point method with tape-based automatic differentiation.

// `!(x > 0.0)` is used deliberately so NaN fails validation; index loops
// mirror the tensor notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod ad;
pub mod config;
pub mod constitutive;
pub mod inverse;
pub mod jacobian;
pub mod linalg;
pub mod mpm;
pub mod porous;
pub mod scenario;
pub mod shape;
pub mod tensor;
