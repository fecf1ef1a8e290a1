//! Molecules as rigid bodies: mass properties, principal frames, placement,
//! and the closed-form rigid RMSD kernels.
//!
//! For a rigid motion `T = (t, q)` acting on a body with weights `w_i`, total
//! weight `W`, center `c` and inertia tensor `I` (both taken in the frame `T`
//! acts in),
//!
//! ```text
//! RMSD^2 = t.t + (4/W) v^T I v + 2 t^T (R - E3) c,      q = [s, v]
//! ```
//!
//! where the last (cross) term vanishes when the frame is centered on the
//! center of mass. Templates are stored center-of-mass centered so the short
//! form applies everywhere inside the crate.

use std::sync::Arc;

use nalgebra::{Matrix4, SymmetricEigen};

use crate::error::{Error, Result};
use crate::se3::{Mat3, Quaternion, RigidTransform, Vec3};

/// Squared-RMSD values in `[-NEGATIVE_SQUARE_TOL, 0)` are rounding noise and
/// clamp to zero; anything below is reported as a frame inconsistency.
pub const NEGATIVE_SQUARE_TOL: f64 = 1e-9;

/// Relative eigenvalue gap (fraction of the trace) under which two principal
/// moments are treated as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-9;

/// Tolerance used when checking that two templates describe the same molecule.
pub const TEMPLATE_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Every atom weighs 1, so `W` is the atom count.
    #[default]
    Unit,
    /// Standard atomic masses looked up by element label.
    Mass,
}

/// Standard atomic weight for an element symbol (case-insensitive).
pub fn atomic_mass(label: &str) -> Option<f64> {
    let mass = match label.to_ascii_lowercase().as_str() {
        "h" => 1.008,
        "d" => 2.014,
        "he" => 4.0026,
        "li" => 6.94,
        "be" => 9.0122,
        "b" => 10.81,
        "c" => 12.011,
        "n" => 14.007,
        "o" => 15.999,
        "f" => 18.998,
        "ne" => 20.180,
        "na" => 22.990,
        "mg" => 24.305,
        "al" => 26.982,
        "si" => 28.085,
        "p" => 30.974,
        "s" => 32.06,
        "cl" => 35.45,
        "ar" => 39.948,
        "k" => 39.098,
        "ca" => 40.078,
        "fe" => 55.845,
        "cu" => 63.546,
        "zn" => 65.38,
        "se" => 78.971,
        "br" => 79.904,
        "sn" => 118.71,
        "i" => 126.90,
        _ => return None,
    };
    Some(mass)
}

pub fn weights_for(labels: &[String], mode: WeightMode) -> Result<Vec<f64>> {
    match mode {
        WeightMode::Unit => Ok(vec![1.0; labels.len()]),
        WeightMode::Mass => labels
            .iter()
            .map(|l| {
                atomic_mass(l).ok_or_else(|| Error::invalid(format!("no atomic mass for element {l:?}")))
            })
            .collect(),
    }
}

fn check_weighted(positions: &[Vec3], weights: &[f64]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::invalid("at least one atom is required"));
    }
    if positions.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} positions but {} weights",
            positions.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid("positions must be finite"));
    }
    Ok(weights.iter().sum())
}

/// `(1/W) sum w_i x_i`.
pub fn center_of_mass(positions: &[Vec3], weights: &[f64]) -> Result<Vec3> {
    let total = check_weighted(positions, weights)?;
    if !(total > 0.0) {
        return Err(Error::invalid("total weight must be positive"));
    }
    let sum = positions
        .iter()
        .zip(weights)
        .fold(Vec3::zeros(), |acc, (p, w)| acc + p * *w);
    Ok(sum / total)
}

/// Inertia tensor about the origin of the frame the positions are given in.
pub fn inertia_tensor(positions: &[Vec3], weights: &[f64]) -> Result<Mat3> {
    check_weighted(positions, weights)?;
    let mut m = Mat3::zeros();
    for (p, &w) in positions.iter().zip(weights) {
        let (x, y, z) = (p.x, p.y, p.z);
        m[(0, 0)] += w * (y * y + z * z);
        m[(1, 1)] += w * (x * x + z * z);
        m[(2, 2)] += w * (x * x + y * y);
        m[(0, 1)] -= w * x * y;
        m[(0, 2)] -= w * x * z;
        m[(1, 2)] -= w * y * z;
    }
    m[(1, 0)] = m[(0, 1)];
    m[(2, 0)] = m[(0, 2)];
    m[(2, 1)] = m[(1, 2)];
    Ok(m)
}

fn check_total_weight(total_weight: f64) -> Result<()> {
    if total_weight > 0.0 && total_weight.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("total weight must be positive, got {total_weight}")))
    }
}

/// Translational and rotational parts of the squared rigid RMSD in a
/// center-of-mass frame: `(t.t, (4/W) v^T I v)`.
pub fn rmsd_sq_parts(transform: &RigidTransform, inertia: &Mat3, total_weight: f64) -> Result<(f64, f64)> {
    check_total_weight(total_weight)?;
    Ok(rmsd_sq_parts_unchecked(transform, inertia, total_weight))
}

#[inline]
pub(crate) fn rmsd_sq_parts_unchecked(transform: &RigidTransform, inertia: &Mat3, total_weight: f64) -> (f64, f64) {
    let v = &transform.q.v;
    let translational = transform.t.norm_squared();
    let rotational = 4.0 / total_weight * v.dot(&(inertia * v));
    (translational, rotational)
}

/// `sqrt(t.t + (4/W) v^T I v)`, valid when `inertia` is taken about the
/// center of mass.
pub fn rmsd_rigid_com(transform: &RigidTransform, inertia: &Mat3, total_weight: f64) -> Result<f64> {
    let (a, b) = rmsd_sq_parts(transform, inertia, total_weight)?;
    Ok((a + b).sqrt())
}

/// Rigid RMSD in an arbitrary frame, keeping the `2 t^T (R - E3) c` cross term.
pub fn rmsd_rigid_general(
    transform: &RigidTransform,
    inertia: &Mat3,
    total_weight: f64,
    center: &Vec3,
) -> Result<f64> {
    let (a, b) = rmsd_sq_parts(transform, inertia, total_weight)?;
    let r = transform.rotation_matrix();
    let cross = 2.0 * transform.t.dot(&((r - Mat3::identity()) * center));
    let sq = a + b + cross;
    if sq < -NEGATIVE_SQUARE_TOL {
        return Err(Error::InconsistentFrame(sq));
    }
    Ok(sq.max(0.0).sqrt())
}

/// An immutable rigid molecule stored in a center-of-mass frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeTemplate {
    labels: Vec<String>,
    positions: Vec<Vec3>,
    weights: Vec<f64>,
    total_weight: f64,
    inertia: Mat3,
    // sum w a a^T, used by the rotation gradients
    second_moment: Mat3,
}

impl MoleculeTemplate {
    /// Builds a template, shifting the coordinates so the weighted center
    /// sits at the origin. Orientation is kept as given.
    pub fn new(labels: Vec<String>, positions: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if labels.len() != positions.len() {
            return Err(Error::invalid(format!(
                "{} labels but {} positions",
                labels.len(),
                positions.len()
            )));
        }
        let com = center_of_mass(&positions, &weights)?;
        let positions: Vec<Vec3> = positions.iter().map(|p| p - com).collect();
        let inertia = inertia_tensor(&positions, &weights)?;
        let second_moment = positions
            .iter()
            .zip(&weights)
            .fold(Mat3::zeros(), |acc, (p, w)| acc + p * p.transpose() * *w);
        Ok(MoleculeTemplate {
            total_weight: weights.iter().sum(),
            labels,
            positions,
            weights,
            inertia,
            second_moment,
        })
    }

    pub fn with_mode(labels: Vec<String>, positions: Vec<Vec3>, mode: WeightMode) -> Result<Self> {
        let weights = weights_for(&labels, mode)?;
        MoleculeTemplate::new(labels, positions, weights)
    }

    /// Template in the principal-axes frame of `raw`, together with the
    /// transform placing that template back onto `raw`.
    pub fn from_world(labels: Vec<String>, raw: &[Vec3], weights: Vec<f64>) -> Result<(Self, RigidTransform)> {
        let to_local = local_frame_init(raw, &weights)?;
        let local: Vec<Vec3> = raw.iter().map(|p| to_local.apply(p)).collect();
        let template = MoleculeTemplate::new(labels, local, weights)?;
        Ok((template, to_local.inverse()))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn inertia(&self) -> &Mat3 {
        &self.inertia
    }

    pub fn second_moment(&self) -> &Mat3 {
        &self.second_moment
    }

    /// Recomputed center of the stored positions (zero up to rounding).
    pub fn com(&self) -> Vec3 {
        center_of_mass(&self.positions, &self.weights).expect("validated at construction")
    }

    /// Same labels, weights and local coordinates within `tol`.
    pub fn matches(&self, other: &MoleculeTemplate, tol: f64) -> bool {
        self.labels == other.labels
            && self.weights == other.weights
            && self
                .positions
                .iter()
                .zip(&other.positions)
                .all(|(a, b)| (a - b).amax() <= tol)
    }

    /// Squared rigid RMSD of `transform` acting on this template.
    #[inline]
    pub fn rmsd_sq(&self, transform: &RigidTransform) -> f64 {
        let (a, b) = rmsd_sq_parts_unchecked(transform, &self.inertia, self.total_weight);
        a + b
    }
}

pub fn apply_transform(template: &MoleculeTemplate, transform: &RigidTransform) -> Vec<Vec3> {
    template.positions().iter().map(|p| transform.apply(p)).collect()
}

fn sign_fixed(mut e: Vec3) -> Vec3 {
    let mut k = 0;
    for i in 1..3 {
        if e[i].abs() > e[k].abs() {
            k = i;
        }
    }
    if e[k] < 0.0 {
        e = -e;
    }
    e
}

fn lex_greater(a: &Vec3, b: &Vec3) -> std::cmp::Ordering {
    for i in 0..3 {
        match b[i].partial_cmp(&a[i]).unwrap_or(std::cmp::Ordering::Equal) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Transform taking raw coordinates into the center-of-mass, principal-axes
/// frame.
///
/// Axes are ordered by descending principal moment. Each of the first two is
/// sign-fixed so its largest-magnitude component is positive; the third is
/// their cross product. Moments closer than `DEGENERATE_GAP * trace` are
/// ordered by lexicographically greatest eigenvector.
pub fn local_frame_init(positions: &[Vec3], weights: &[f64]) -> Result<RigidTransform> {
    let com = center_of_mass(positions, weights)?;
    let centered: Vec<Vec3> = positions.iter().map(|p| p - com).collect();
    let inertia = inertia_tensor(&centered, weights)?;
    let eig = SymmetricEigen::new(inertia);

    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|k| (eig.eigenvalues[k], sign_fixed(eig.eigenvectors.column(k).into_owned())))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let tol = DEGENERATE_GAP * inertia.trace().abs();
    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && (pairs[end - 1].0 - pairs[end].0).abs() <= tol {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lex_greater(&a.1, &b.1));
        start = end;
    }

    let e1 = pairs[0].1.normalize();
    let e2 = (pairs[1].1 - e1 * e1.dot(&pairs[1].1)).normalize();
    let e3 = e1.cross(&e2);
    let axes = Mat3::from_columns(&[e1, e2, e3]);
    let q = Quaternion::from_rotation_matrix(&axes.transpose());
    Ok(RigidTransform {
        t: -q.rotate_unchecked(&com),
        q,
    })
}

/// Best rigid placement of `template` onto `positions` (same atom order).
/// Returns the transform and the weighted RMSD residual.
pub fn register(template: &MoleculeTemplate, positions: &[Vec3]) -> Result<(RigidTransform, f64)> {
    if positions.len() != template.len() {
        return Err(Error::invalid(format!(
            "expected {} atoms, got {}",
            template.len(),
            positions.len()
        )));
    }
    superpose(template.positions(), positions, template.weights())
}

/// Weighted least-squares rigid motion taking `source` onto `target`, from
/// the dominant eigenvector of Horn's 4x4 quaternion matrix. Returns the
/// motion and the weighted RMSD left after applying it.
pub fn superpose(source: &[Vec3], target: &[Vec3], weights: &[f64]) -> Result<(RigidTransform, f64)> {
    if source.len() != target.len() {
        return Err(Error::invalid("point sets differ in length"));
    }
    let target_com = center_of_mass(target, weights)?;
    let source_com = center_of_mass(source, weights)?;
    let mut s = Mat3::zeros();
    for ((a, b), w) in source.iter().zip(target).zip(weights) {
        s += (a - source_com) * (b - target_com).transpose() * *w;
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let k = eig.eigenvalues.imax();
    let e = eig.eigenvectors.column(k);
    let q = Quaternion::new(e[0], e[1], e[2], e[3]).normalized().canonicalize();
    let t = target_com - q.rotate_unchecked(&source_com);
    let transform = RigidTransform { t, q };

    let total: f64 = weights.iter().sum();
    let sq: f64 = source
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((a, b), w)| w * (transform.apply(a) - b).norm_squared())
        .sum::<f64>()
        / total;
    Ok((transform, sq.sqrt()))
}

/// `M` placed copies of one template.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    template: Arc<MoleculeTemplate>,
    transforms: Vec<RigidTransform>,
}

impl Assembly {
    pub fn new(template: Arc<MoleculeTemplate>, transforms: Vec<RigidTransform>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::invalid("an assembly needs at least one molecule"));
        }
        for (k, t) in transforms.iter().enumerate() {
            t.q.ensure_unit()
                .map_err(|_| Error::invalid(format!("molecule {k} has a non-unit quaternion")))?;
        }
        Ok(Assembly { template, transforms })
    }

    pub fn template(&self) -> &MoleculeTemplate {
        &self.template
    }

    pub fn shared_template(&self) -> &Arc<MoleculeTemplate> {
        &self.template
    }

    pub fn transforms(&self) -> &[RigidTransform] {
        &self.transforms
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    /// Same template, new placements.
    pub fn with_transforms(&self, transforms: Vec<RigidTransform>) -> Result<Self> {
        Assembly::new(Arc::clone(&self.template), transforms)
    }

    /// Molecules re-indexed so that slot `i` holds molecule `order[i]`.
    pub fn reindexed(&self, order: &[usize]) -> Result<Self> {
        let transforms = order
            .iter()
            .map(|&k| {
                self.transforms
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("molecule index {k} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_transforms(transforms)
    }

    /// The same assembly moved by a global rigid motion.
    pub fn moved_by(&self, motion: &RigidTransform) -> Self {
        Assembly {
            template: Arc::clone(&self.template),
            transforms: self.transforms.iter().map(|t| motion.compose(t)).collect(),
        }
    }

    /// World-frame centers of mass of the molecules.
    pub fn centers(&self) -> Vec<Vec3> {
        self.transforms.iter().map(|t| t.t).collect()
    }

    pub fn check_compatible(&self, other: &Assembly) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!(
                "assemblies hold {} and {} molecules",
                self.len(),
                other.len()
            )));
        }
        if !Arc::ptr_eq(&self.template, &other.template)
            && !self.template.matches(&other.template, TEMPLATE_MATCH_TOL)
        {
            return Err(Error::invalid("assemblies use different molecule templates"));
        }
        Ok(())
    }
}
