//! Thin SVD, soft rank gating and the top/bottom spectral filters.

mod filter;
mod gate;
mod svd;

pub use filter::{filter_from_svd, filter_matrix, spectral_filter, GradientMode, Side, GAP_FLOOR};
pub use gate::{gate_weights, gate_weights_var, AlignmentGate};
pub use svd::{thin_svd, SvdFactors};
