//! Seeded generators for molecules, rigid motions and assembly fixtures.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::rigid_body::{Assembly, MoleculeTemplate};
use crate::se3::{Quaternion, RigidTransform, Vec3};

pub type FixtureRng = ChaCha8Rng;

pub fn rng(seed: u64) -> FixtureRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly distributed unit quaternion (Shoemake's subgroup algorithm).
pub fn unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (s2, c2) = (2.0 * PI * u2).sin_cos();
    let (s3, c3) = (2.0 * PI * u3).sin_cos();
    Quaternion::new(b * c3, a * s2, a * c2, b * s3)
}

/// Uniform direction on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Point with components uniform in `[-half_width, half_width]`.
pub fn box_point<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half_width..=half_width),
        rng.random_range(-half_width..=half_width),
        rng.random_range(-half_width..=half_width),
    )
}

/// Uniform rotation with translation components in `[-max_shift, max_shift]`.
pub fn rigid_transform<R: Rng + ?Sized>(rng: &mut R, max_shift: f64) -> RigidTransform {
    RigidTransform {
        t: box_point(rng, max_shift),
        q: unit_quaternion(rng),
    }
}

/// Random rotation by at most `max_angle` radians and translation of norm at
/// most `max_shift`.
pub fn bounded_perturbation<R: Rng + ?Sized>(rng: &mut R, max_shift: f64, max_angle: f64) -> RigidTransform {
    let axis = unit_vector(rng);
    let angle = rng.random_range(0.0..=max_angle);
    let shift = unit_vector(rng) * (max_shift * rng.random::<f64>().cbrt());
    RigidTransform {
        t: shift,
        q: Quaternion::from_rotation_vector(&(axis * angle)),
    }
}

/// Random point cloud of `n` atoms in a box of half-width `spread`.
pub fn point_cloud<R: Rng + ?Sized>(rng: &mut R, n: usize, spread: f64) -> Vec<Vec3> {
    (0..n).map(|_| box_point(rng, spread)).collect()
}

/// Random unit-weight molecule of `n` carbon atoms.
pub fn molecule<R: Rng + ?Sized>(rng: &mut R, n: usize, spread: f64) -> MoleculeTemplate {
    let positions = point_cloud(rng, n, spread);
    MoleculeTemplate::new(vec!["C".to_string(); n], positions, vec![1.0; n]).expect("n >= 1")
}

/// Random assembly of `m` molecules with centers in a box of half-width
/// `box_half_width`.
pub fn assembly<R: Rng + ?Sized>(rng: &mut R, template: &Arc<MoleculeTemplate>, m: usize, box_half_width: f64) -> Assembly {
    let transforms = (0..m).map(|_| rigid_transform(rng, box_half_width)).collect();
    Assembly::new(Arc::clone(template), transforms).expect("random quaternions are unit")
}

/// Random bijection on `0..n`.
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

/// Target/initial pair modelled on a 17-molecule cluster: 16 randomly
/// oriented neighbours at 7-11 A around a central molecule at the origin
/// (stored last), and an initial state where every molecule carries an
/// independent perturbation of at most 5 A and 60 degrees.
pub struct ClusterFixture {
    pub target: Assembly,
    pub initial: Assembly,
}

pub const CLUSTER_SIZE: usize = 17;
pub const CLUSTER_ATOMS: usize = 12;

pub fn cluster_fixture(seed: u64) -> ClusterFixture {
    let mut rng = rng(seed);
    let template = Arc::new(molecule(&mut rng, CLUSTER_ATOMS, 2.0));
    let mut target: Vec<RigidTransform> = Vec::with_capacity(CLUSTER_SIZE);
    while target.len() < CLUSTER_SIZE - 1 {
        let t = unit_vector(&mut rng) * rng.random_range(7.0..11.0);
        // keep centers at least 4 A apart
        if target.iter().all(|o| (o.t - t).norm() > 4.0) {
            target.push(RigidTransform {
                t,
                q: unit_quaternion(&mut rng),
            });
        }
    }
    // the central molecule goes last
    target.push(RigidTransform {
        t: Vec3::zeros(),
        q: unit_quaternion(&mut rng),
    });
    let initial = target
        .iter()
        .map(|t| {
            let p = bounded_perturbation(&mut rng, 5.0, PI / 3.0);
            // rotate about the molecule's own center, then shift
            RigidTransform {
                t: t.t + p.t,
                q: p.q * t.q,
            }
        })
        .collect();
    ClusterFixture {
        target: Assembly::new(Arc::clone(&template), target).expect("unit quaternions"),
        initial: Assembly::new(template, initial).expect("unit quaternions"),
    }
}
