//! On-disk formats.
//!
//! Assemblies use an extended XYZ layout:
//!
//! ```text
//! <total atom count>
//! rigidpack M=<M> units=angstrom [key=value ...]
//! <element> <x> <y> <z> <mol_id>
//! ...
//! ```
//!
//! with atoms grouped by ascending `mol_id` and every molecule listing its
//! atoms in the same order. Transforms files hold one `(t, q)` per molecule:
//!
//! ```text
//! rigidpack-transforms M=<M>
//! <mol_id> <tx> <ty> <tz> <qs> <qx> <qy> <qz>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rigid_body::{register, weights_for, Assembly, MoleculeTemplate, WeightMode};
use crate::se3::{Quaternion, RigidTransform, Vec3, UNIT_TOL};

/// Largest registration RMSD (A) accepted for a molecule block.
pub const REGISTRATION_TOL: f64 = 1e-3;
/// Quaternions further than this from unit norm are rejected on read.
pub const QUATERNION_REJECT_TOL: f64 = 1e-3;
/// Quaternions further than this from unit norm are renormalized with a
/// warning.
pub const QUATERNION_WARN_TOL: f64 = 1e-6;

const COORD_DECIMALS: usize = 9;
const TRANSFORM_DECIMALS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyFile {
    pub path: PathBuf,
    pub assembly: Assembly,
    /// Extra `key=value` pairs of the comment line (`M` and `units` excluded).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformsFile {
    pub path: PathBuf,
    pub transforms: Vec<RigidTransform>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Fixed-point with `decimals` digits; a rounded negative zero prints as zero.
fn fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_real(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(path, line, format!("{what}: expected a finite number, found {field:?}"))),
    }
}

fn parse_index(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| parse_error(path, line, format!("{what}: expected a non-negative integer, found {field:?}")))
}

/// Where the molecule template of a parsed assembly comes from.
#[derive(Debug, Clone)]
pub enum TemplateSource {
    /// Principal-axes frame of molecule 0, with the given weighting.
    FirstMolecule(WeightMode),
    /// An existing template; molecule blocks must match its elements.
    Given(Arc<MoleculeTemplate>),
}

impl Default for TemplateSource {
    fn default() -> Self {
        TemplateSource::FirstMolecule(WeightMode::Unit)
    }
}

struct Header {
    m: usize,
    metadata: BTreeMap<String, String>,
}

fn parse_header(path: &Path, line: &str) -> Result<Header> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("rigidpack") {
        return Err(parse_error(path, 2, "comment line must start with 'rigidpack'"));
    }
    let mut m = None;
    let mut units = None;
    let mut metadata = BTreeMap::new();
    for token in tokens {
        let Some((key, value)) = token.split_once('=') else {
            return Err(parse_error(path, 2, format!("expected key=value, found {token:?}")));
        };
        match key {
            "M" => m = Some(parse_index(path, 2, value, "M")?),
            "units" => units = Some(value.to_string()),
            _ => {
                if metadata.insert(key.to_string(), value.to_string()).is_some() {
                    return Err(parse_error(path, 2, format!("duplicate key {key:?}")));
                }
            }
        }
    }
    let m = m.ok_or_else(|| parse_error(path, 2, "missing M=<molecule count>"))?;
    if m == 0 {
        return Err(parse_error(path, 2, "M must be at least 1"));
    }
    match units.as_deref() {
        Some("angstrom") => {}
        Some(other) => return Err(parse_error(path, 2, format!("unsupported units {other:?}"))),
        None => return Err(parse_error(path, 2, "missing units=angstrom")),
    }
    Ok(Header { m, metadata })
}

struct Block {
    labels: Vec<String>,
    positions: Vec<Vec3>,
}

/// Parses assembly text; `path` only labels error messages.
pub fn parse_assembly_str(text: &str, path: &Path, source: &TemplateSource) -> Result<AssemblyFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let total = parse_index(path, 1, first.trim(), "atom count")?;
    let (_, second) = lines.next().ok_or_else(|| parse_error(path, 2, "missing comment line"))?;
    let header = parse_header(path, second)?;

    let mut blocks: Vec<Block> = Vec::new();
    let mut atoms = 0;
    let mut last_line = 2;
    for (number, line) in lines {
        last_line = number;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if atoms == total {
            return Err(parse_error(path, number, format!("more atom lines than the declared {total}")));
        }
        if fields.len() != 5 {
            return Err(parse_error(
                path,
                number,
                format!("expected 'element x y z mol_id', found {} fields", fields.len()),
            ));
        }
        let x = parse_real(path, number, fields[1], "x")?;
        let y = parse_real(path, number, fields[2], "y")?;
        let z = parse_real(path, number, fields[3], "z")?;
        let mol = parse_index(path, number, fields[4], "mol_id")?;
        if mol == blocks.len() {
            blocks.push(Block {
                labels: Vec::new(),
                positions: Vec::new(),
            });
        } else if mol + 1 != blocks.len() {
            return Err(parse_error(
                path,
                number,
                format!("mol_id {mol} out of order; atoms must be grouped by ascending mol_id from 0"),
            ));
        }
        let block = blocks.last_mut().expect("pushed above");
        block.labels.push(fields[0].to_string());
        block.positions.push(Vec3::new(x, y, z));
        atoms += 1;
    }
    if atoms != total {
        return Err(parse_error(
            path,
            last_line,
            format!("declared {total} atoms, found {atoms}"),
        ));
    }
    if blocks.len() != header.m {
        return Err(parse_error(
            path,
            2,
            format!("declared M={}, found {} molecules", header.m, blocks.len()),
        ));
    }

    let template = match source {
        TemplateSource::FirstMolecule(mode) => {
            let weights = weights_for(&blocks[0].labels, *mode)?;
            Arc::new(MoleculeTemplate::from_world(blocks[0].labels.clone(), &blocks[0].positions, weights)?.0)
        }
        TemplateSource::Given(t) => Arc::clone(t),
    };
    let mut transforms = Vec::with_capacity(blocks.len());
    for (k, block) in blocks.iter().enumerate() {
        if block.labels != template.labels() {
            return Err(Error::ElementMismatch {
                path: path.to_path_buf(),
                molecule: k,
                expected: template.labels().to_vec(),
                found: block.labels.clone(),
            });
        }
        let (transform, residual) = register(&template, &block.positions)?;
        if !(residual < REGISTRATION_TOL) {
            return Err(Error::Registration {
                path: path.to_path_buf(),
                molecule: k,
                residual,
            });
        }
        transforms.push(transform);
    }
    Ok(AssemblyFile {
        path: path.to_path_buf(),
        assembly: Assembly::new(template, transforms)?,
        metadata: header.metadata,
    })
}

pub fn read_assembly(path: &Path, source: &TemplateSource) -> Result<AssemblyFile> {
    parse_assembly_str(&read(path)?, path, source)
}

/// Unit-weight assembly with its template derived from molecule 0.
pub fn parse_assembly_xyz(path: &Path) -> Result<Assembly> {
    Ok(read_assembly(path, &TemplateSource::default())?.assembly)
}

pub fn format_assembly_xyz(assembly: &Assembly, metadata: &BTreeMap<String, String>) -> String {
    let template = assembly.template();
    let mut out = String::new();
    let _ = writeln!(out, "{}", template.len() * assembly.len());
    let _ = write!(out, "rigidpack M={} units=angstrom", assembly.len());
    for (key, value) in metadata {
        let _ = write!(out, " {key}={value}");
    }
    out.push('\n');
    for (k, t) in assembly.transforms().iter().enumerate() {
        for (label, p) in template.labels().iter().zip(template.positions()) {
            let x = t.apply(p);
            let _ = writeln!(
                out,
                "{label} {} {} {} {k}",
                fixed(x.x, COORD_DECIMALS),
                fixed(x.y, COORD_DECIMALS),
                fixed(x.z, COORD_DECIMALS)
            );
        }
    }
    out
}

pub fn write_assembly_xyz(assembly: &Assembly, path: &Path) -> Result<()> {
    write(path, &format_assembly_xyz(assembly, &BTreeMap::new()))
}

pub fn write_assembly_xyz_with_metadata(assembly: &Assembly, metadata: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    write(path, &format_assembly_xyz(assembly, metadata))
}

/// Concatenated frames, each tagged with `frame=<k>` and `time=<k/(n-1)>`.
pub fn format_trajectory_xyz(frames: &[Assembly]) -> String {
    let n = frames.len();
    frames
        .iter()
        .enumerate()
        .map(|(k, frame)| {
            let time = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
            let mut meta = BTreeMap::new();
            meta.insert("frame".to_string(), k.to_string());
            meta.insert("time".to_string(), format!("{time:.6}"));
            format_assembly_xyz(frame, &meta)
        })
        .collect()
}

/// Parses transforms text; `path` only labels error messages.
pub fn parse_transforms_str(text: &str, path: &Path) -> Result<TransformsFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("rigidpack-transforms") {
        return Err(parse_error(path, 1, "header must start with 'rigidpack-transforms'"));
    }
    let m = match (tokens.next().and_then(|t| t.strip_prefix("M=")), tokens.next()) {
        (Some(v), None) => parse_index(path, 1, v, "M")?,
        _ => return Err(parse_error(path, 1, "expected 'rigidpack-transforms M=<M>'")),
    };

    let mut slots: Vec<Option<RigidTransform>> = vec![None; m];
    let mut last_line = 1;
    for (number, line) in lines {
        last_line = number;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 8 {
            return Err(parse_error(
                path,
                number,
                format!("expected 'mol_id tx ty tz qs qx qy qz', found {} fields", fields.len()),
            ));
        }
        let id = parse_index(path, number, fields[0], "mol_id")?;
        let mut v = [0.0; 7];
        for (slot, (field, name)) in v
            .iter_mut()
            .zip(fields[1..].iter().zip(["tx", "ty", "tz", "qs", "qx", "qy", "qz"]))
        {
            *slot = parse_real(path, number, field, name)?;
        }
        if id >= m {
            return Err(parse_error(path, number, format!("mol_id {id} out of range for M={m}")));
        }
        if slots[id].is_some() {
            return Err(parse_error(path, number, format!("duplicate mol_id {id}")));
        }
        let mut q = Quaternion::new(v[3], v[4], v[5], v[6]);
        let off = (q.norm() - 1.0).abs();
        if off > QUATERNION_REJECT_TOL {
            return Err(parse_error(
                path,
                number,
                format!("quaternion norm {} is not unit", q.norm()),
            ));
        }
        if off > QUATERNION_WARN_TOL {
            log::warn!(
                "{}:{number}: renormalizing quaternion of norm {}",
                path.display(),
                q.norm()
            );
            q = q.normalized();
        } else if (q.norm_squared() - 1.0).abs() > UNIT_TOL {
            q = q.normalized();
        }
        slots[id] = Some(RigidTransform {
            t: Vec3::new(v[0], v[1], v[2]),
            q,
        });
    }
    let transforms = slots
        .into_iter()
        .enumerate()
        .map(|(id, t)| t.ok_or_else(|| parse_error(path, last_line, format!("missing mol_id {id}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformsFile {
        path: path.to_path_buf(),
        transforms,
    })
}

pub fn parse_transforms(path: &Path) -> Result<TransformsFile> {
    parse_transforms_str(&read(path)?, path)
}

pub fn format_transforms(transforms: &[RigidTransform]) -> String {
    let mut out = format!("rigidpack-transforms M={}\n", transforms.len());
    for (k, t) in transforms.iter().enumerate() {
        let q = t.q.canonicalize();
        let fields = [t.t.x, t.t.y, t.t.z, q.s, q.v.x, q.v.y, q.v.z].map(|x| fixed(x, TRANSFORM_DECIMALS));
        let _ = writeln!(out, "{k} {}", fields.join(" "));
    }
    out
}

pub fn write_transforms(path: &Path, transforms: &[RigidTransform]) -> Result<()> {
    write(path, &format_transforms(transforms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.xyz")
    }

    #[test]
    fn fixed_drops_negative_zero() {
        assert_eq!(fixed(-1e-15, 9), "0.000000000");
        assert_eq!(fixed(-0.5, 3), "-0.500");
        assert_eq!(fixed(2.0, 2), "2.00");
    }

    #[test]
    fn single_atom_file() {
        let text = "1\nrigidpack M=1 units=angstrom\nC 1.0 2.0 3.0 0\n";
        let f = parse_assembly_str(text, p(), &TemplateSource::default()).unwrap();
        assert_eq!(f.assembly.len(), 1);
        let t = f.assembly.transforms()[0];
        assert!((t.t - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!(t.q.is_unit());
    }

    #[test]
    fn header_errors() {
        let bad = [
            "x\nrigidpack M=1 units=angstrom\nC 0 0 0 0\n",
            "1\nxyz M=1 units=angstrom\nC 0 0 0 0\n",
            "1\nrigidpack units=angstrom\nC 0 0 0 0\n",
            "1\nrigidpack M=1 units=bohr\nC 0 0 0 0\n",
            "1\nrigidpack M=1 units=angstrom junk\nC 0 0 0 0\n",
            "1\nrigidpack M=2 units=angstrom\nC 0 0 0 0\n",
            "2\nrigidpack M=1 units=angstrom\nC 0 0 0 0\n",
            "1\nrigidpack M=1 units=angstrom\nC 0 0 0 0\nC 1 1 1 0\n",
            "1\nrigidpack M=1 units=angstrom\nC 0 nan 0 0\n",
            "1\nrigidpack M=1 units=angstrom\nC 0 0 0 1\n",
        ];
        for text in bad {
            assert!(
                matches!(parse_assembly_str(text, p(), &TemplateSource::default()), Err(Error::Parse { .. })),
                "{text}"
            );
        }
    }

    #[test]
    fn non_numeric_names_line() {
        let text = "2\nrigidpack M=1 units=angstrom\nC 0 0 0 0\nC 1 abc 0 0\n";
        match parse_assembly_str(text, p(), &TemplateSource::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn element_mismatch() {
        let text = "4\nrigidpack M=2 units=angstrom\nC 0 0 0 0\nO 1 0 0 0\nO 5 0 0 1\nC 6 0 0 1\n";
        match parse_assembly_str(text, p(), &TemplateSource::default()) {
            Err(Error::ElementMismatch { molecule, .. }) => assert_eq!(molecule, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transforms_validation() {
        let ok = "rigidpack-transforms M=2\n1 0 0 0 1 0 0 0\n0 1 2 3 0 1 0 0\n";
        let f = parse_transforms_str(ok, p()).unwrap();
        assert_eq!(f.transforms[0].t, Vec3::new(1.0, 2.0, 3.0));
        let dup = "rigidpack-transforms M=3\n0 0 0 0 1 0 0 0\n1 0 0 0 1 0 0 0\n1 0 0 0 1 0 0 0\n";
        assert!(parse_transforms_str(dup, p()).unwrap_err().to_string().contains("duplicate"));
        let far = "rigidpack-transforms M=1\n0 0 0 0 1.01 0 0 0\n";
        assert!(parse_transforms_str(far, p()).is_err());
        let near = "rigidpack-transforms M=1\n0 0 0 0 1.0001 0 0 0\n";
        assert!(parse_transforms_str(near, p()).unwrap().transforms[0].q.is_unit());
        let missing = "rigidpack-transforms M=2\n0 0 0 0 1 0 0 0\n";
        assert!(parse_transforms_str(missing, p()).is_err());
    }
}
