//! Direct regression of per-molecule transforms onto a target assembly.

use crate::assignment::Permutation;
use crate::error::{Error, Result};
use crate::losses::{descend, gradient_with_pairing, loss_star, molecule_pairing, LossKind, LossValue, Pairing, TransformGradient};
use crate::metrics::{reconstruct_positions, AssignmentMode};
use crate::rigid_body::{superpose, Assembly};
use crate::se3::{interp_transform, RigidTransform};

pub const DEFAULT_FLOW_STEPS: usize = 50;

const MAX_HALVINGS: usize = 30;
const ARMIJO: f64 = 1e-4;
// trial steps never exceed this multiple of the configured step size
const MAX_GROWTH: f64 = 1048576.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub loss_kind: LossKind,
    pub assignment_mode: AssignmentMode,
    pub reg: Option<f64>,
    pub step_size: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(loss_kind: LossKind, assignment_mode: AssignmentMode) -> Self {
        FitConfig {
            loss_kind,
            assignment_mode,
            reg: None,
            step_size: 1e-2,
            max_iters: 10_000,
            rel_tol: 1e-8,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("rel_tol must be non-negative"));
        }
        if let Some(reg) = self.reg {
            if !(reg > 0.0 && reg.is_finite()) {
                return Err(Error::invalid(format!("reg must be positive, got {reg}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub transforms: Vec<RigidTransform>,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub loss_trace: Vec<f64>,
    /// Hard assignment at the final state, when one was solved: entry `i` is
    /// the fitted molecule paired with target molecule `i`.
    pub assignment: Option<Permutation>,
}

fn evaluate(pred: &Assembly, target: &Assembly, config: &FitConfig) -> Result<LossValue> {
    loss_star(&config.loss_kind, pred, target, config.assignment_mode, config.reg)
}

fn dot(a: &[TransformGradient], b: &[TransformGradient]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.d_t.dot(&y.d_t) + x.d_omega.dot(&y.d_omega)).sum()
}

fn step_all(current: &Assembly, grads: &[TransformGradient], step: f64) -> Result<Assembly> {
    let moved = current
        .transforms()
        .iter()
        .zip(grads)
        .map(|(t, g)| descend(t, g, step))
        .collect();
    current.with_transforms(moved)
}

/// Gradient descent on the configured starred loss with a backtracking line
/// search. The pairing is re-solved at every iterate and held fixed for the
/// gradient. Each line search starts from the Barzilai-Borwein step of the
/// last two gradients (the configured step size on the first iteration) and
/// halves until the Armijo condition holds. Stops when the relative decrease
/// falls to `rel_tol`, when no descent step is found after 30 halvings, or
/// after `max_iters`.
pub fn fit_assembly(initial: &Assembly, target: &Assembly, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    initial.check_compatible(target)?;

    let mut current = initial.clone();
    let mut value = evaluate(&current, target, config)?;
    if !value.value.is_finite() {
        return Err(Error::invalid("initial loss is not finite"));
    }
    let mut trace = vec![value.value];
    let mut iterations = 0;
    let mut converged = value.value == 0.0;
    let max_step = config.step_size * MAX_GROWTH;
    let mut previous_grads: Option<(Vec<TransformGradient>, f64)> = None;

    while !converged && iterations < config.max_iters {
        let grads = gradient_with_pairing(&config.loss_kind, &current, target, &value.pairing)?;
        let slope = dot(&grads, &grads);
        if slope == 0.0 {
            converged = true;
            break;
        }
        let mut step = match &previous_grads {
            None => config.step_size,
            Some((prev, last)) => {
                // s = -last * prev, y = grads - prev
                let pp = dot(prev, prev);
                let sy = pp - dot(prev, &grads);
                if sy > 0.0 {
                    (last * pp / sy).min(max_step)
                } else {
                    (last * 2.0).min(max_step)
                }
            }
        };

        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = step_all(&current, &grads, step)?;
            let cand_value = evaluate(&candidate, target, config)?;
            if cand_value.value.is_finite() && cand_value.value <= value.value - ARMIJO * step * slope {
                accepted = Some((candidate, cand_value));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_value)) = accepted else {
            log::debug!("no descent step after {MAX_HALVINGS} halvings at iteration {iterations}");
            converged = true;
            break;
        };

        let decrease = value.value - cand_value.value;
        let previous = value.value;
        current = candidate;
        value = cand_value;
        trace.push(value.value);
        iterations += 1;
        if decrease <= config.rel_tol * previous || value.value == 0.0 {
            converged = true;
        }
        previous_grads = Some((grads, step));
    }

    log::debug!(
        "fit finished after {iterations} iterations, loss {:.6e}, converged {converged}",
        value.value
    );
    let assignment = match &value.pairing {
        Pairing::Permutation(p) => Some(molecule_pairing(&config.loss_kind, current.len(), p)?),
        _ => None,
    };
    Ok(FitResult {
        transforms: current.transforms().to_vec(),
        final_loss: value.value,
        iterations,
        converged,
        loss_trace: trace,
        assignment,
    })
}

/// Straight-line SE(3) path from `initial` to `target`, sampled at
/// `t = k / (steps - 1)`.
pub fn flow_trajectory(initial: &Assembly, target: &Assembly, steps: usize) -> Result<Vec<Assembly>> {
    if steps < 2 {
        return Err(Error::invalid(format!("a trajectory needs at least 2 steps, got {steps}")));
    }
    initial.check_compatible(target)?;
    (0..steps)
        .map(|k| {
            let time = if k == steps - 1 { 1.0 } else { k as f64 / (steps - 1) as f64 };
            let transforms = initial
                .transforms()
                .iter()
                .zip(target.transforms())
                .map(|(a, b)| interp_transform(a, b, time))
                .collect::<Result<Vec<_>>>()?;
            initial.with_transforms(transforms)
        })
        .collect()
}

/// Single rigid motion of the whole assembly that best superposes its atoms
/// onto `target`'s atoms (molecule order as given).
pub fn global_alignment(moving: &Assembly, target: &Assembly) -> Result<RigidTransform> {
    moving.check_compatible(target)?;
    let source = reconstruct_positions(moving);
    let dest = reconstruct_positions(target);
    let weights: Vec<f64> = (0..moving.len()).flat_map(|_| moving.template().weights().iter().copied()).collect();
    Ok(superpose(&source, &dest, &weights)?.0)
}
