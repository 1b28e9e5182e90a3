//! Privatization and compression channels plus Rényi-DP accounting.

mod accountant;
mod mechanism;

pub use accountant::{
    adaped_rdp, alpha_grid, rdp_compose, rdp_to_dp, AdapedAccounting, DpBudget, DpConversion,
    DpTarget, RdpCurve, RdpValue, GRID_MAX_ALPHA, GRID_MIN_ALPHA, GRID_POINTS,
};
pub use mechanism::{
    binary_response, binary_response_law, clip, gaussian_ldp_sigma, gaussian_mechanism,
    stochastic_quantizer, BinaryResponseLaw, ClipMode, ClipSpec, LdpSigma, MechanismSpec,
};
