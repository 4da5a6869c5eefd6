//! Convolutional kernels over 2-D signals: exact tangent and fixed-feature
//! kernels of multi-layer ReLU convolutional architectures, computed by a
//! dynamic program on position-pair planes.

pub mod arch;
pub mod plane;
pub mod propagate;
pub mod signal;

pub use arch::{ArchitectureSpec, LayerSpec, Pooling, DEFAULT_PLANE_BUDGET_BYTES};
pub use plane::{m_plane, patch_plane, phi1_plane, pool_plane, raw_plane, Grid, KernelPlane};
pub use propagate::{
    conv_ckn, conv_ntk, conv_pair, covariance_stage_planes, cross_kernels, gram,
    relative_distance, self_trace, ConvKernels, KernelKind, SelfTrace,
};
pub use signal::ImageSignal;
