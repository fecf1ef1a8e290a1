//! Rigid-body assembly toolkit: SE(3) algebra on quaternions, closed-form
//! rigid RMSD, permutation-invariant packing metrics and losses, exact and
//! entropic assignment, and a direct-regression fitter.

pub mod assignment;
pub mod error;
pub mod fitter;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod random;
pub mod rigid_body;
pub mod se3;
pub mod selftest;

pub use assignment::{
    default_reg, lsa_solve, plan_round, sinkhorn, sinkhorn_with, CostMatrix, Permutation, SinkhornOptions,
    TransportPlan,
};
pub use error::{Error, Result};
pub use fitter::{fit_assembly, flow_trajectory, global_alignment, FitConfig, FitResult, DEFAULT_FLOW_STEPS};
pub use io::{parse_assembly_xyz, parse_transforms, write_assembly_xyz, write_transforms, AssemblyFile, TransformsFile};
pub use losses::{
    loss_geom, loss_gradient, loss_ml, loss_rmsd, loss_star, relative_rmsd, LossKind, LossValue, Pairing,
    TransformGradient, DEFAULT_ALPHA,
};
pub use metrics::{
    cost_matrix, metric, metric_star, pm_atom, pm_center, reconstruct_positions, rmsd_atom, AssignmentMode, CostKind,
    MetricKind, MetricReport,
};
pub use rigid_body::{local_frame_init, Assembly, MoleculeTemplate, WeightMode};
pub use se3::{interp_transform, slerp, Mat3, Quaternion, RigidTransform, Vec3};
