//! Rigid-body training objectives and their permutation-invariant forms.
//!
//! Gradients are taken with respect to each predicted transform `(t, q)`
//! under independent perturbations `t -> t + dt` and
//! `q -> exp(w/2) * q` (a world-frame rotation increment `w` applied about
//! the molecule's own center). The assignment, hard or soft, is held fixed
//! while differentiating.

use std::fmt;

use crate::assignment::{default_reg, lsa_solve, sinkhorn, CostMatrix, Permutation, TransportPlan};
use crate::error::{Error, Result};
use crate::metrics::AssignmentMode;
use crate::rigid_body::{rmsd_sq_parts_unchecked, Assembly, MoleculeTemplate};
use crate::se3::{Mat3, RigidTransform, Vec3};

/// Rotation weight of the decoupled loss used when none is given.
pub const DEFAULT_ALPHA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `|dt|^2 + alpha * |dq|^2`, translation and rotation treated separately.
    Ml { alpha: f64 },
    /// Squared rigid RMSD between predicted and target placements.
    Rmsd,
    /// Mean squared rigid RMSD of every molecule after superposing the
    /// reference molecule of both assemblies.
    Geom { ref_index: usize },
}

impl LossKind {
    pub fn ml() -> Self {
        LossKind::Ml { alpha: DEFAULT_ALPHA }
    }

    /// Geometric loss referenced on the last molecule, the central molecule
    /// of a cluster.
    pub fn geom_for(m: usize) -> Self {
        LossKind::Geom {
            ref_index: m.saturating_sub(1),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ml { .. } => "loss_ml",
            LossKind::Rmsd => "loss_rmsd",
            LossKind::Geom { .. } => "loss_geom",
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        match *self {
            LossKind::Ml { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::invalid(format!("alpha must be positive, got {alpha}")))
            }
            LossKind::Geom { .. } if m < 2 => Err(Error::invalid("the geometric loss needs at least two molecules")),
            LossKind::Geom { ref_index } if ref_index >= m => Err(Error::invalid(format!(
                "reference molecule {ref_index} out of range for {m} molecules"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Derivative of a loss with respect to one rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransformGradient {
    pub d_t: Vec3,
    pub d_omega: Vec3,
}

impl TransformGradient {
    fn add_scaled(&mut self, other: &TransformGradient, w: f64) {
        self.d_t += other.d_t * w;
        self.d_omega += other.d_omega * w;
    }

    pub fn norm_squared(&self) -> f64 {
        self.d_t.norm_squared() + self.d_omega.norm_squared()
    }
}

/// How ground-truth slots were paired with predicted molecules.
#[derive(Debug, Clone, PartialEq)]
pub enum Pairing {
    Identity,
    Permutation(Permutation),
    Plan(TransportPlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub pairing: Pairing,
}

pub fn loss_ml(pred: &RigidTransform, gt: &RigidTransform, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(ml_value(pred, gt, alpha))
}

fn ml_value(pred: &RigidTransform, gt: &RigidTransform, alpha: f64) -> f64 {
    (pred.t - gt.t).norm_squared() + alpha * pred.q.double_cover_distance_squared(&gt.q)
}

fn ml_grad(pred: &RigidTransform, gt: &RigidTransform, alpha: f64) -> TransformGradient {
    let minus = (pred.q - gt.q).norm_squared();
    let plus = (pred.q + gt.q).norm_squared();
    let e = if minus <= plus { pred.q - gt.q } else { pred.q + gt.q };
    let (s, v) = (pred.q.s, &pred.q.v);
    TransformGradient {
        d_t: (pred.t - gt.t) * 2.0,
        d_omega: (-v * e.s + e.v * s + v.cross(&e.v)) * alpha,
    }
}

/// Squared rigid RMSD between two placements of `template`, evaluated on
/// `pred^-1 ∘ gt` in the template's center-of-mass frame.
pub fn loss_rmsd(pred: &RigidTransform, gt: &RigidTransform, template: &MoleculeTemplate) -> f64 {
    template.rmsd_sq(&pred.inverse().compose(gt))
}

/// Translational and rotational contributions to [`loss_rmsd`].
pub fn loss_rmsd_parts(pred: &RigidTransform, gt: &RigidTransform, template: &MoleculeTemplate) -> (f64, f64) {
    rmsd_sq_parts_unchecked(
        &pred.inverse().compose(gt),
        template.inertia(),
        template.total_weight(),
    )
}

fn vee_antisymmetric(a: &Mat3) -> Vec3 {
    Vec3::new(a[(1, 2)] - a[(2, 1)], a[(2, 0)] - a[(0, 2)], a[(0, 1)] - a[(1, 0)])
}

/// Gradients of `loss_rmsd(x, y)` with respect to `x` and to `y`.
fn rmsd_pair_grad(x: &RigidTransform, y: &RigidTransform, template: &MoleculeTemplate) -> (TransformGradient, TransformGradient) {
    let rx = x.rotation_matrix();
    let ry = y.rotation_matrix();
    let cross = vee_antisymmetric(&(rx * template.second_moment() * ry.transpose())) * (2.0 / template.total_weight());
    let dt = (x.t - y.t) * 2.0;
    (
        TransformGradient { d_t: dt, d_omega: -cross },
        TransformGradient { d_t: -dt, d_omega: cross },
    )
}

/// Squared RMSD of molecule `i` once the local frames of molecule `j` in the
/// prediction and in the ground truth are superposed.
pub fn relative_rmsd(
    ti_pred: &RigidTransform,
    tj_pred: &RigidTransform,
    ti_gt: &RigidTransform,
    tj_gt: &RigidTransform,
    template: &MoleculeTemplate,
) -> f64 {
    loss_rmsd(
        &tj_pred.inverse().compose(ti_pred),
        &tj_gt.inverse().compose(ti_gt),
        template,
    )
}

/// Gradients of [`relative_rmsd`] with respect to `ti_pred` and `tj_pred`.
fn relative_rmsd_grad(
    ti_pred: &RigidTransform,
    tj_pred: &RigidTransform,
    ti_gt: &RigidTransform,
    tj_gt: &RigidTransform,
    template: &MoleculeTemplate,
) -> (TransformGradient, TransformGradient) {
    // equals loss_rmsd(ti_pred, tj_pred ∘ b) with b the ground-truth relative placement
    let b = tj_gt.inverse().compose(ti_gt);
    let y = tj_pred.compose(&b);
    let (gi, gy) = rmsd_pair_grad(ti_pred, &y, template);
    let lever = tj_pred.q.rotate_unchecked(&b.t);
    let gj = TransformGradient {
        d_t: gy.d_t,
        d_omega: gy.d_omega + lever.cross(&gy.d_t),
    };
    (gi, gj)
}

pub fn loss_geom(pred: &Assembly, gt: &Assembly, ref_index: usize) -> Result<f64> {
    pred.check_compatible(gt)?;
    let kind = LossKind::Geom { ref_index };
    kind.validate(pred.len())?;
    loss_with_pairing(&kind, pred, gt, &Pairing::Identity)
}

/// Indices of the molecules taking part in the assignment: all of them, or
/// all but the reference for the geometric loss.
fn slots(kind: &LossKind, m: usize) -> Vec<usize> {
    match *kind {
        LossKind::Geom { ref_index } => (0..m).filter(|&k| k != ref_index).collect(),
        _ => (0..m).collect(),
    }
}

/// Expands a pairing of assignable slots into a permutation of all `m`
/// molecules: entry `i` is the predicted molecule paired with ground-truth
/// molecule `i`. The geometric loss's reference maps to itself.
pub fn molecule_pairing(kind: &LossKind, m: usize, slot_pairing: &Permutation) -> Result<Permutation> {
    kind.validate(m)?;
    let idx = slots(kind, m);
    if slot_pairing.len() != idx.len() {
        return Err(Error::invalid("pairing size does not match the number of assignable molecules"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    for (a, &b) in slot_pairing.as_slice().iter().enumerate() {
        order[idx[a]] = idx[b];
    }
    Permutation::new(order)
}

fn pair_value(kind: &LossKind, pred: &Assembly, gt: &Assembly, gt_index: usize, pred_index: usize) -> f64 {
    let p = pred.transforms();
    let g = gt.transforms();
    match *kind {
        LossKind::Ml { alpha } => ml_value(&p[pred_index], &g[gt_index], alpha),
        LossKind::Rmsd => loss_rmsd(&p[pred_index], &g[gt_index], pred.template()),
        LossKind::Geom { ref_index } => relative_rmsd(
            &p[pred_index],
            &p[ref_index],
            &g[gt_index],
            &g[ref_index],
            pred.template(),
        ),
    }
}

/// Adds `w * d pair / d pred` into `grads`.
fn accumulate_pair_grad(
    kind: &LossKind,
    pred: &Assembly,
    gt: &Assembly,
    gt_index: usize,
    pred_index: usize,
    w: f64,
    grads: &mut [TransformGradient],
) {
    let p = pred.transforms();
    let g = gt.transforms();
    match *kind {
        LossKind::Ml { alpha } => {
            grads[pred_index].add_scaled(&ml_grad(&p[pred_index], &g[gt_index], alpha), w);
        }
        LossKind::Rmsd => {
            let (gp, _) = rmsd_pair_grad(&p[pred_index], &g[gt_index], pred.template());
            grads[pred_index].add_scaled(&gp, w);
        }
        LossKind::Geom { ref_index } => {
            let (gi, gj) = relative_rmsd_grad(
                &p[pred_index],
                &p[ref_index],
                &g[gt_index],
                &g[ref_index],
                pred.template(),
            );
            grads[pred_index].add_scaled(&gi, w);
            grads[ref_index].add_scaled(&gj, w);
        }
    }
}

/// Per-pair loss matrix over the assignable slots; rows are ground truth,
/// columns prediction.
pub fn loss_cost_matrix(kind: &LossKind, pred: &Assembly, gt: &Assembly) -> Result<CostMatrix> {
    pred.check_compatible(gt)?;
    kind.validate(pred.len())?;
    let idx = slots(kind, pred.len());
    CostMatrix::from_fn(idx.len(), |a, b| pair_value(kind, pred, gt, idx[a], idx[b]))
}

fn normalizer(kind: &LossKind, m: usize) -> f64 {
    match kind {
        LossKind::Geom { .. } => (m - 1) as f64,
        _ => m as f64,
    }
}

/// Weighted `(row, column, weight)` triples of a pairing, row-major.
fn pairing_weights(pairing: &Pairing, n: usize) -> Result<Vec<(usize, usize, f64)>> {
    match pairing {
        Pairing::Identity => Ok((0..n).map(|i| (i, i, 1.0)).collect()),
        Pairing::Permutation(p) if p.len() == n => Ok(p.as_slice().iter().enumerate().map(|(i, &j)| (i, j, 1.0)).collect()),
        Pairing::Plan(plan) if plan.size() == n => Ok((0..n * n).map(|k| (k / n, k % n, plan.as_slice()[k])).collect()),
        _ => Err(Error::invalid("pairing size does not match the number of assignable molecules")),
    }
}

/// Loss value for a fixed pairing of slots.
pub fn loss_with_pairing(kind: &LossKind, pred: &Assembly, gt: &Assembly, pairing: &Pairing) -> Result<f64> {
    pred.check_compatible(gt)?;
    kind.validate(pred.len())?;
    let idx = slots(kind, pred.len());
    let sum: f64 = pairing_weights(pairing, idx.len())?
        .into_iter()
        .map(|(a, b, w)| w * pair_value(kind, pred, gt, idx[a], idx[b]))
        .sum();
    Ok(sum / normalizer(kind, pred.len()))
}

/// Gradient for a fixed pairing of slots.
pub fn gradient_with_pairing(kind: &LossKind, pred: &Assembly, gt: &Assembly, pairing: &Pairing) -> Result<Vec<TransformGradient>> {
    pred.check_compatible(gt)?;
    kind.validate(pred.len())?;
    let m = pred.len();
    let idx = slots(kind, m);
    let mut grads = vec![TransformGradient::default(); m];
    for (a, b, w) in pairing_weights(pairing, idx.len())? {
        if w != 0.0 {
            accumulate_pair_grad(kind, pred, gt, idx[a], idx[b], w, &mut grads);
        }
    }
    let norm = normalizer(kind, m);
    for g in &mut grads {
        g.d_t /= norm;
        g.d_omega /= norm;
    }
    Ok(grads)
}

/// Loss with the molecule pairing chosen by `mode`: identity, exact optimal
/// assignment, or the entropic plan (`reg` defaults to 5% of the median
/// pair cost).
pub fn loss_star(kind: &LossKind, pred: &Assembly, gt: &Assembly, mode: AssignmentMode, reg: Option<f64>) -> Result<LossValue> {
    let cost = loss_cost_matrix(kind, pred, gt)?;
    let norm = normalizer(kind, pred.len());
    let (value, pairing) = match mode {
        AssignmentMode::None => {
            let n = cost.size();
            let sum: f64 = (0..n).map(|i| cost.get(i, i)).sum();
            (sum, Pairing::Identity)
        }
        AssignmentMode::Exact => {
            let (perm, total) = lsa_solve(&cost)?;
            (total, Pairing::Permutation(perm))
        }
        AssignmentMode::Sinkhorn => {
            let plan = sinkhorn(&cost, reg.unwrap_or_else(|| default_reg(&cost)))?;
            (plan.cost(&cost), Pairing::Plan(plan))
        }
    };
    Ok(LossValue {
        value: value / norm,
        pairing,
    })
}

/// Gradient of the (possibly assigned) loss with respect to every predicted
/// transform, holding the freshly solved pairing fixed.
pub fn loss_gradient(
    kind: &LossKind,
    pred: &Assembly,
    gt: &Assembly,
    mode: AssignmentMode,
    reg: Option<f64>,
) -> Result<Vec<TransformGradient>> {
    Ok(loss_and_gradient(kind, pred, gt, mode, reg)?.1)
}

pub fn loss_and_gradient(
    kind: &LossKind,
    pred: &Assembly,
    gt: &Assembly,
    mode: AssignmentMode,
    reg: Option<f64>,
) -> Result<(LossValue, Vec<TransformGradient>)> {
    let value = loss_star(kind, pred, gt, mode, reg)?;
    let grads = gradient_with_pairing(kind, pred, gt, &value.pairing)?;
    Ok((value, grads))
}

/// Moves `t` by `-step * gradient`: a straight translation step and a
/// rotation by `-step * d_omega` retracted onto the unit quaternions.
pub fn descend(t: &RigidTransform, g: &TransformGradient, step: f64) -> RigidTransform {
    RigidTransform {
        t: t.t - g.d_t * step,
        q: (crate::se3::Quaternion::from_rotation_vector(&(-g.d_omega * step)) * t.q).normalized(),
    }
}
