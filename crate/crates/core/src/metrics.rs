//! Packing-matching and RMSD metrics, optionally corrected for the arbitrary
//! ordering of identical molecules.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::assignment::{default_reg, lsa_solve, plan_round, sinkhorn, CostMatrix, Permutation};
use crate::error::{Error, Result};
use crate::rigid_body::{apply_transform, Assembly};
use crate::se3::{RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    PmAtom,
    PmCenter,
    RmsdAtom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentMode {
    #[default]
    None,
    Exact,
    Sinkhorn,
}

/// Per-pair cost used to pair ground-truth and predicted molecules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    /// Squared rigid RMSD between the two placed copies.
    #[default]
    RigidRmsdSq,
    /// Squared distance between the placed centers of mass.
    CenterDistSq,
}

impl MetricKind {
    /// The per-pair cost whose optimal assignment is meaningful for this
    /// metric.
    pub fn matching_cost(self) -> CostKind {
        match self {
            MetricKind::PmCenter => CostKind::CenterDistSq,
            MetricKind::PmAtom | MetricKind::RmsdAtom => CostKind::RigidRmsdSq,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::PmAtom => "pm_atom",
            MetricKind::PmCenter => "pm_center",
            MetricKind::RmsdAtom => "rmsd_atom",
        }
    }
}

impl AssignmentMode {
    pub fn name(self) -> &'static str {
        match self {
            AssignmentMode::None => "none",
            AssignmentMode::Exact => "exact",
            AssignmentMode::Sinkhorn => "sinkhorn",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for AssignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pm_atom" => Ok(MetricKind::PmAtom),
            "pm_center" => Ok(MetricKind::PmCenter),
            "rmsd_atom" => Ok(MetricKind::RmsdAtom),
            _ => Err(Error::invalid(format!("unknown metric {s:?}"))),
        }
    }
}

impl FromStr for AssignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AssignmentMode::None),
            "exact" => Ok(AssignmentMode::Exact),
            "sinkhorn" => Ok(AssignmentMode::Sinkhorn),
            _ => Err(Error::invalid(format!("unknown assignment mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub kind: MetricKind,
    /// Angstrom.
    pub value: f64,
    /// `permutation[i]` is the predicted molecule paired with ground-truth
    /// molecule `i`; present whenever an assignment was solved.
    pub permutation: Option<Permutation>,
    pub assignment_mode: AssignmentMode,
}

fn check_lengths(pred: &[Vec3], gt: &[Vec3]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction has {} points, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("at least one point is required"));
    }
    Ok(())
}

/// Root mean squared difference of all pairwise distances, `i == j` terms
/// included in the `1/N^2` normalization.
fn packing_matching(pred: &[Vec3], gt: &[Vec3]) -> f64 {
    let n = pred.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = (pred[i] - pred[j]).norm() - (gt[i] - gt[j]).norm();
            sum += d * d;
        }
    }
    (sum / (n * n) as f64).sqrt()
}

pub fn pm_atom(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(packing_matching(pred, gt))
}

/// Packing matching on molecule centers of mass.
pub fn pm_center(pred_centers: &[Vec3], gt_centers: &[Vec3]) -> Result<f64> {
    check_lengths(pred_centers, gt_centers)?;
    Ok(packing_matching(pred_centers, gt_centers))
}

pub fn rmsd_atom(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_lengths(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// World-frame atoms of every molecule, molecule-major.
pub fn reconstruct_positions(assembly: &Assembly) -> Vec<Vec3> {
    assembly
        .transforms()
        .iter()
        .flat_map(|t| apply_transform(assembly.template(), t))
        .collect()
}

/// Squared rigid RMSD between two placements of the same COM-centered
/// template.
#[inline]
pub(crate) fn pair_rmsd_sq(assembly: &Assembly, pred: &RigidTransform, gt: &RigidTransform) -> f64 {
    assembly.template().rmsd_sq(&pred.inverse().compose(gt))
}

/// `C[i][j]`: cost of pairing ground-truth molecule `i` with predicted
/// molecule `j`. Rows are filled in parallel; each entry is computed
/// independently so the result does not depend on the thread count.
pub fn cost_matrix(pred: &Assembly, gt: &Assembly, kind: CostKind) -> Result<CostMatrix> {
    pred.check_compatible(gt)?;
    let m = pred.len();
    let p = pred.transforms();
    let g = gt.transforms();
    let data: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..m).map(move |j| match kind {
                CostKind::RigidRmsdSq => pair_rmsd_sq(pred, &p[j], &g[i]),
                CostKind::CenterDistSq => (p[j].t - g[i].t).norm_squared(),
            })
        })
        .collect();
    CostMatrix::new(m, data)
}

/// Solves the pairing for `cost` in the requested mode. `None` means the
/// identity pairing was requested.
pub fn solve_assignment(cost: &CostMatrix, mode: AssignmentMode, reg: Option<f64>) -> Result<Option<Permutation>> {
    match mode {
        AssignmentMode::None => Ok(None),
        AssignmentMode::Exact => Ok(Some(lsa_solve(cost)?.0)),
        AssignmentMode::Sinkhorn => {
            let reg = reg.unwrap_or_else(|| default_reg(cost));
            Ok(Some(plan_round(&sinkhorn(cost, reg)?)))
        }
    }
}

/// Unassigned metric between two compatible assemblies, molecule `k` of
/// `pred` compared with molecule `k` of `gt`.
pub fn metric(kind: MetricKind, pred: &Assembly, gt: &Assembly) -> Result<f64> {
    pred.check_compatible(gt)?;
    match kind {
        MetricKind::PmAtom => pm_atom(&reconstruct_positions(pred), &reconstruct_positions(gt)),
        MetricKind::RmsdAtom => rmsd_atom(&reconstruct_positions(pred), &reconstruct_positions(gt)),
        MetricKind::PmCenter => pm_center(&pred.centers(), &gt.centers()),
    }
}

/// Metric after pairing molecules by the optimal assignment of `cost_kind`
/// costs (rounded to a permutation in Sinkhorn mode).
pub fn metric_star(
    kind: MetricKind,
    pred: &Assembly,
    gt: &Assembly,
    mode: AssignmentMode,
    cost_kind: CostKind,
    reg: Option<f64>,
) -> Result<MetricReport> {
    pred.check_compatible(gt)?;
    let permutation = match mode {
        AssignmentMode::None => None,
        _ => solve_assignment(&cost_matrix(pred, gt, cost_kind)?, mode, reg)?,
    };
    let value = match &permutation {
        None => metric(kind, pred, gt)?,
        Some(p) => metric(kind, &pred.reindexed(p.as_slice())?, gt)?,
    };
    Ok(MetricReport {
        kind,
        value,
        permutation,
        assignment_mode: mode,
    })
}
