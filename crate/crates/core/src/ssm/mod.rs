//! State space model kernels.
//!
//! Layout conventions: LTI helpers work per channel on `D×L` / `D×N`
//! tensors; the selective scan and the Mamba block are time-major
//! (`L×D`, `L×N`) because their inputs come from token-wise projections.

mod conv1d;
mod discretize;
mod init;
mod lti;
mod mamba;
mod scan;
mod selective;

pub use conv1d::causal_conv1d;
pub use discretize::{discretize_zoh, zoh_a_bar, zoh_b_bar, zoh_coefficient, DiscretizedStep};
pub use init::{init_a_log, init_delta_bias};
pub use lti::{
    build_conv_kernel, conv_apply_causal, conv_apply_op, conv_kernel_op, lti_recurrent, ConvKernel,
    LtiSsm, SsmParams,
};
pub use mamba::{MambaBlock, MambaConfig, RMS_EPS};
pub use scan::{
    linear_scan_op, recurrent_scan_parallel, recurrent_scan_sequential, scan_parallel,
    scan_sequential, ScanElement,
};
pub use selective::{
    selective_scan, selective_scan_op, BackwardMemory, ScanConfig, ScanMode, SelectiveSsm,
};
