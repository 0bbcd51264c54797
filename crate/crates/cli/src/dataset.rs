//! Dataset directories: operator samples, data, optional ground truth and
//! an optional cached decomposition under `svd/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dctmc_core::linalg::CMatrix;
use dctmc_core::tmatrix::SvdParts;
use dctmc_core::{OperatorSet, Potential, SvdCache};

use crate::error::{io_err, CliError, Result};
use crate::kv;
use crate::matrix_io::{format_pairs, read_matrix, read_real_vector, write_atomic, write_matrix, write_real_vector};

pub const A_FILE: &str = "A.txt";
pub const B_FILE: &str = "B.txt";
pub const GAMMA_FILE: &str = "Gamma.txt";
pub const C_FILE: &str = "C.txt";
pub const PHI_FILE: &str = "Phi.txt";
pub const PHANTOM_FILE: &str = "phantom.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const SVD_DIR: &str = "svd";

pub struct Dataset {
    pub ops: OperatorSet,
    pub phi: CMatrix,
    pub truth: Option<Potential>,
    pub cache: Option<SvdCache>,
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(t) => Ok(Some(t)),
        Err(CliError::MissingInput(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn read_potential(path: &Path) -> Result<Potential> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected a column vector, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(Potential::from_values(m.column(0).into_owned()))
}

pub fn write_potential(path: &Path, p: &Potential) -> Result<()> {
    write_matrix(path, &CMatrix::from_column_slice(p.len(), 1, p.values().as_slice()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_operators(dir: &Path, ops: &OperatorSet, phi: &CMatrix) -> Result<()> {
    write_matrix(&dir.join(A_FILE), &ops.a)?;
    write_matrix(&dir.join(B_FILE), &ops.b)?;
    write_matrix(&dir.join(GAMMA_FILE), &ops.gamma)?;
    write_matrix(&dir.join(C_FILE), &ops.c)?;
    write_matrix(&dir.join(PHI_FILE), phi)
}

pub fn load(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(CliError::MissingInput(dir.to_path_buf()));
    }
    let ops = OperatorSet::new(
        read_matrix(&dir.join(A_FILE))?,
        read_matrix(&dir.join(B_FILE))?,
        read_matrix(&dir.join(GAMMA_FILE))?,
        read_matrix(&dir.join(C_FILE))?,
    )?;
    let phi = read_matrix(&dir.join(PHI_FILE))?;
    if phi.shape() != (ops.n_detectors(), ops.n_sources()) {
        return Err(CliError::Format {
            path: dir.join(PHI_FILE),
            line: 1,
            reason: format!(
                "Phi is {}x{}, operators expect {}x{}",
                phi.nrows(),
                phi.ncols(),
                ops.n_detectors(),
                ops.n_sources()
            ),
        });
    }
    let truth = optional(read_potential(&dir.join(PHANTOM_FILE)))?;
    let cache = if dir.join(SVD_DIR).is_dir() {
        Some(read_cache(&dir.join(SVD_DIR))?)
    } else {
        None
    };
    Ok(Dataset { ops, phi, truth, cache })
}

const CACHE_MATRICES: [&str; 5] = ["left_a", "r_a", "r_b", "right_b", "q_a"];

pub fn write_cache(dir: &Path, cache: &SvdCache) -> Result<()> {
    create_dir(dir)?;
    let parts = cache.clone().into_parts();
    write_real_vector(&dir.join("sigma_a.txt"), &parts.sigma_a)?;
    write_real_vector(&dir.join("sigma_b.txt"), &parts.sigma_b)?;
    for (name, m) in CACHE_MATRICES
        .iter()
        .zip([&parts.left_a, &parts.r_a, &parts.r_b, &parts.right_b, &parts.q_a])
    {
        write_matrix(&dir.join(format!("{name}.txt")), m)?;
    }
    let manifest = format_pairs([
        ("epsilon", format!("{:?}", parts.epsilon)),
        ("m_a", parts.m_a.to_string()),
        ("m_b", parts.m_b.to_string()),
        ("n_voxels", cache.n_voxels().to_string()),
        ("n_detectors", cache.n_detectors().to_string()),
        ("n_sources", cache.n_sources().to_string()),
    ]);
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
}

fn manifest_value<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Format {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("missing or malformed `{key}`"),
        })
}

pub fn read_cache(dir: &Path) -> Result<SvdCache> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = kv::read(&manifest_path)?;
    let mut matrices: Vec<CMatrix> = Vec::with_capacity(CACHE_MATRICES.len());
    for name in CACHE_MATRICES {
        matrices.push(read_matrix(&dir.join(format!("{name}.txt")))?);
    }
    let [left_a, r_a, r_b, right_b, q_a]: [CMatrix; 5] = matrices.try_into().expect("five matrices");
    let parts = SvdParts {
        sigma_a: read_real_vector(&dir.join("sigma_a.txt"))?,
        sigma_b: read_real_vector(&dir.join("sigma_b.txt"))?,
        left_a,
        r_a,
        r_b,
        right_b,
        epsilon: manifest_value(&manifest, "epsilon", &manifest_path)?,
        m_a: manifest_value(&manifest, "m_a", &manifest_path)?,
        m_b: manifest_value(&manifest, "m_b", &manifest_path)?,
        q_a,
    };
    Ok(SvdCache::from_parts(parts)?)
}

/// Grid edge `L` when `n` is a perfect cube.
pub fn cube_root(n: usize) -> Option<usize> {
    let l = (n as f64).cbrt().round() as usize;
    (l.pow(3) == n).then_some(l)
}
