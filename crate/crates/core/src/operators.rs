//! The discretized physical model.
//!
//! A cubic sample of `L³` voxels with pitch `h` sits between two planar
//! `L × L` lattices: sources below the bottom face, detectors above the top
//! face (transmission) or on the source side (reflection). Kernel samplings
//! use one-point voxel quadrature with weight `h³`:
//!
//! - `A[m, j] = G₀(r_d[m], r[j]) h³`
//! - `B[j, n] = G₀(r[j], r_s[n]) h³`
//! - `Γ[i, j] = G₀(r[i], r[j]) h³` for `i ≠ j`, `Γ[i, i]` per [`SelfTerm`]
//! - `C[m, n] = G₀(r_d[m], r_s[n])` (direct field, no quadrature weight)

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::ComplexField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, c64, CMatrix, CVector, InversionCounter, C64, ZERO};

/// Forward operators whose condition number exceeds this are treated as
/// physically inadmissible.
pub const ADMISSIBILITY_CAP: f64 = 1e8;

/// Placement of the detector plane relative to the source plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Detectors above the top face, sources below the bottom face.
    Transmission,
    /// Detectors and sources both below the bottom face.
    Reflection,
}

/// Diagonal convention for `Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfTerm {
    Zero,
    /// Integral of `G₀` over the sphere with the voxel's volume.
    EquivalentSphere,
}

/// Radially symmetric kernel sampled on a uniform radius grid and linearly
/// interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    spacing: f64,
    values: Vec<C64>,
}

impl TabulatedKernel {
    /// `values[i]` is `G₀` at radius `i · spacing`.
    pub fn new(spacing: f64, values: Vec<C64>) -> Result<Self> {
        if !(spacing > 0.0) || values.len() < 2 {
            return Err(Error::InvalidConfig {
                key: "kernel_table".into(),
                reason: "need spacing > 0 and at least two samples".into(),
            });
        }
        Ok(Self { spacing, values })
    }

    pub fn max_radius(&self) -> f64 {
        self.spacing * (self.values.len() - 1) as f64
    }

    fn eval(&self, r: f64) -> C64 {
        let t = r / self.spacing;
        let i = (t as usize).min(self.values.len() - 2);
        let frac = t - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `exp(ik|r − r′|) / (4π|r − r′|)`.
    Helmholtz3d,
    Tabulated(TabulatedKernel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    pub grid_size: usize,
    pub pitch: f64,
    pub wavenumber: C64,
    /// Distance of the source plane from the nearest face, in pitches.
    pub source_standoff: f64,
    /// Distance of the detector plane from the nearest face, in pitches.
    pub detector_standoff: f64,
    pub layout: Layout,
    pub kernel: KernelKind,
    pub self_term: SelfTerm,
    /// Upper bound on `|k| h`.
    pub max_kh: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            grid_size: 4,
            pitch: 1.0,
            wavenumber: c64(1.0, 0.0),
            source_standoff: 1.0,
            detector_standoff: 1.0,
            layout: Layout::Transmission,
            kernel: KernelKind::Helmholtz3d,
            self_term: SelfTerm::Zero,
            max_kh: 2.0 * PI,
        }
    }
}

/// Keys understood by [`GeometryConfig::from_pairs`].
pub const GEOMETRY_KEYS: &[&str] = &[
    "grid_size",
    "pitch",
    "wavenumber",
    "wavenumber_im",
    "standoff",
    "source_standoff",
    "detector_standoff",
    "layout",
    "kernel",
    "self_term",
    "max_kh",
];

fn parse_value<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::InvalidConfig {
        key: key.to_string(),
        reason: format!("cannot parse `{value}`"),
    })
}

impl GeometryConfig {
    /// Builds a configuration from `key = value` pairs; absent keys keep
    /// their defaults, unknown keys are rejected.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut cfg = Self::default();
        let mut k_re = cfg.wavenumber.re;
        let mut k_im = cfg.wavenumber.im;
        for (key, value) in pairs {
            match key {
                "grid_size" => cfg.grid_size = parse_value(key, value)?,
                "pitch" => cfg.pitch = parse_value(key, value)?,
                "wavenumber" => k_re = parse_value(key, value)?,
                "wavenumber_im" => k_im = parse_value(key, value)?,
                "standoff" => {
                    let s = parse_value(key, value)?;
                    cfg.source_standoff = s;
                    cfg.detector_standoff = s;
                }
                "source_standoff" => cfg.source_standoff = parse_value(key, value)?,
                "detector_standoff" => cfg.detector_standoff = parse_value(key, value)?,
                "layout" => {
                    cfg.layout = match value.trim() {
                        "transmission" => Layout::Transmission,
                        "reflection" => Layout::Reflection,
                        other => {
                            return Err(Error::InvalidConfig {
                                key: key.into(),
                                reason: format!("unknown layout `{other}`"),
                            })
                        }
                    }
                }
                "kernel" => match value.trim() {
                    "helmholtz3d" => cfg.kernel = KernelKind::Helmholtz3d,
                    // the table itself has to be attached programmatically
                    "custom-tabulated" | "tabulated" => {
                        if !matches!(cfg.kernel, KernelKind::Tabulated(_)) {
                            return Err(Error::InvalidConfig {
                                key: key.into(),
                                reason: "tabulated kernel requires a table".into(),
                            });
                        }
                    }
                    other => {
                        return Err(Error::InvalidConfig {
                            key: key.into(),
                            reason: format!("unknown kernel `{other}`"),
                        })
                    }
                },
                "self_term" => {
                    cfg.self_term = match value.trim() {
                        "zero" => SelfTerm::Zero,
                        "equivalent-sphere" => SelfTerm::EquivalentSphere,
                        other => {
                            return Err(Error::InvalidConfig {
                                key: key.into(),
                                reason: format!("unknown self-term policy `{other}`"),
                            })
                        }
                    }
                }
                "max_kh" => cfg.max_kh = parse_value(key, value)?,
                other => {
                    return Err(Error::InvalidConfig {
                        key: other.into(),
                        reason: "unknown geometry key".into(),
                    })
                }
            }
        }
        cfg.wavenumber = c64(k_re, k_im);
        Ok(cfg)
    }
}

/// Validated imaging geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    config: GeometryConfig,
}

/// `build_geometry` over a string map.
pub fn build_geometry(config: &BTreeMap<String, String>) -> Result<Geometry> {
    let cfg = GeometryConfig::from_pairs(config.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Geometry::new(cfg)
}

impl Geometry {
    pub fn new(config: GeometryConfig) -> Result<Self> {
        if config.grid_size < 2 {
            return Err(Error::InvalidDimension(format!(
                "grid size L = {} must be at least 2",
                config.grid_size
            )));
        }
        if !(config.pitch > 0.0) || !config.pitch.is_finite() {
            return Err(Error::InvalidConfig {
                key: "pitch".into(),
                reason: "pitch must be positive".into(),
            });
        }
        for standoff in [config.source_standoff, config.detector_standoff] {
            if !(standoff >= 1.0) {
                return Err(Error::PlaneOverlapsVolume { standoff });
            }
        }
        let kh = config.wavenumber.norm() * config.pitch;
        if !(kh <= config.max_kh) {
            return Err(Error::InvalidConfig {
                key: "wavenumber".into(),
                reason: format!("|k| h = {kh} exceeds the sampling cap {}", config.max_kh),
            });
        }
        if let KernelKind::Tabulated(table) = &config.kernel {
            if config.self_term != SelfTerm::Zero {
                return Err(Error::InvalidConfig {
                    key: "self_term".into(),
                    reason: "equivalent-sphere self term requires the Helmholtz kernel".into(),
                });
            }
            let geometry = Self { config: config.clone() };
            if geometry.max_distance() > table.max_radius() {
                return Err(Error::InvalidConfig {
                    key: "kernel_table".into(),
                    reason: format!(
                        "table covers radius {} but the geometry needs {}",
                        table.max_radius(),
                        geometry.max_distance()
                    ),
                });
            }
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    pub fn grid_size(&self) -> usize {
        self.config.grid_size
    }

    pub fn n_voxels(&self) -> usize {
        self.config.grid_size.pow(3)
    }

    pub fn n_detectors(&self) -> usize {
        self.config.grid_size.pow(2)
    }

    pub fn n_sources(&self) -> usize {
        self.config.grid_size.pow(2)
    }

    /// Lattice coordinates `(x, y, z)` of voxel `j`; `j = x + L y + L² z`.
    pub fn voxel_coords(&self, j: usize) -> (usize, usize, usize) {
        let l = self.config.grid_size;
        (j % l, (j / l) % l, j / (l * l))
    }

    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        let l = self.config.grid_size;
        x + l * y + l * l * z
    }

    fn plane_coords(&self, n: usize) -> (usize, usize) {
        let l = self.config.grid_size;
        (n % l, n / l)
    }

    fn max_distance(&self) -> f64 {
        let span = (self.config.grid_size - 1) as f64;
        let s = self.config.source_standoff.max(self.config.detector_standoff);
        let dz = match self.config.layout {
            Layout::Transmission => span + self.config.source_standoff + self.config.detector_standoff,
            Layout::Reflection => span + s,
        };
        self.config.pitch * linalg::sqrt(2.0 * span * span + dz * dz)
    }

    fn kernel_at(&self, offsets_in_pitches: (f64, f64, f64)) -> C64 {
        let (dx, dy, dz) = offsets_in_pitches;
        let r = self.config.pitch * linalg::sqrt(dx * dx + dy * dy + dz * dz);
        if r == 0.0 {
            return ZERO;
        }
        match &self.config.kernel {
            KernelKind::Helmholtz3d => {
                let phase = C64::i() * self.config.wavenumber * r;
                phase.exp() / (4.0 * PI * r)
            }
            KernelKind::Tabulated(table) => table.eval(r),
        }
    }

    fn voxel_volume(&self) -> f64 {
        self.config.pitch * self.config.pitch * self.config.pitch
    }

    /// Diagonal entry of `Γ` under the configured self-term policy.
    pub fn gamma_self_term(&self) -> C64 {
        match self.config.self_term {
            SelfTerm::Zero => ZERO,
            SelfTerm::EquivalentSphere => {
                let radius = self.config.pitch * ComplexField::powf(3.0 / (4.0 * PI), 1.0 / 3.0);
                let k = self.config.wavenumber;
                let kr = k * radius;
                if kr.norm() < 0.5 {
                    // ∫₀ᴿ r e^{ikr} dr = Σ (ikR)ⁿ R² / (n! (n + 2)), free of
                    // the cancellation in the closed form
                    let ikr = C64::i() * kr;
                    let mut term = c64(1.0, 0.0);
                    let mut sum = ZERO;
                    for n in 0..40 {
                        sum += term / (n as f64 + 2.0);
                        term *= ikr / (n as f64 + 1.0);
                    }
                    sum * radius * radius
                } else {
                    let ikr = C64::i() * kr;
                    (ikr.exp() * (c64(1.0, 0.0) - ikr) - c64(1.0, 0.0)) / (k * k)
                }
            }
        }
    }

    /// Offset from voxel `j` to detector `m`, in pitches.
    fn detector_voxel_offset(&self, m: usize, j: usize) -> (f64, f64, f64) {
        let (x, y, z) = self.voxel_coords(j);
        let (dx, dy) = self.plane_coords(m);
        let span = self.config.grid_size - 1;
        let dz = match self.config.layout {
            Layout::Transmission => (span - z) as f64 + self.config.detector_standoff,
            Layout::Reflection => z as f64 + self.config.detector_standoff,
        };
        (dx as f64 - x as f64, dy as f64 - y as f64, dz)
    }

    fn voxel_source_offset(&self, j: usize, n: usize) -> (f64, f64, f64) {
        let (x, y, z) = self.voxel_coords(j);
        let (sx, sy) = self.plane_coords(n);
        (
            x as f64 - sx as f64,
            y as f64 - sy as f64,
            z as f64 + self.config.source_standoff,
        )
    }

    fn detector_source_offset(&self, m: usize, n: usize) -> (f64, f64, f64) {
        let (dx, dy) = self.plane_coords(m);
        let (sx, sy) = self.plane_coords(n);
        let span = (self.config.grid_size - 1) as f64;
        let dz = match self.config.layout {
            Layout::Transmission => span + self.config.detector_standoff + self.config.source_standoff,
            Layout::Reflection => self.config.detector_standoff - self.config.source_standoff,
        };
        (dx as f64 - sx as f64, dy as f64 - sy as f64, dz)
    }

    /// Permutation mapping voxel `j` to its mirror image across the mid-plane
    /// `z = (L − 1) h / 2`.
    pub fn z_mirror(&self, j: usize) -> usize {
        let (x, y, z) = self.voxel_coords(j);
        self.voxel_index(x, y, self.config.grid_size - 1 - z)
    }

    /// Samples `A`, `B`, `Γ` and `C` from the kernel.
    pub fn sample_operators(&self) -> OperatorSet {
        let nv = self.n_voxels();
        let nd = self.n_detectors();
        let ns = self.n_sources();
        let w = self.voxel_volume();
        let a = CMatrix::from_fn(nd, nv, |m, j| self.kernel_at(self.detector_voxel_offset(m, j)) * w);
        let b = CMatrix::from_fn(nv, ns, |j, n| self.kernel_at(self.voxel_source_offset(j, n)) * w);
        let self_term = self.gamma_self_term();
        let mut gamma = CMatrix::zeros(nv, nv);
        for i in 0..nv {
            let (xi, yi, zi) = self.voxel_coords(i);
            for j in 0..i {
                let (xj, yj, zj) = self.voxel_coords(j);
                let offset = (xi as f64 - xj as f64, yi as f64 - yj as f64, zi as f64 - zj as f64);
                let g = self.kernel_at(offset) * w;
                gamma[(i, j)] = g;
                gamma[(j, i)] = g;
            }
            gamma[(i, i)] = self_term;
        }
        let c = CMatrix::from_fn(nd, ns, |m, n| self.kernel_at(self.detector_source_offset(m, n)));
        OperatorSet { a, b, gamma, c }
    }
}

/// Sampled operators of the discretized model.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSet {
    /// Detectors × voxels.
    pub a: CMatrix,
    /// Voxels × sources.
    pub b: CMatrix,
    /// Voxels × voxels.
    pub gamma: CMatrix,
    /// Detectors × sources, the direct field.
    pub c: CMatrix,
}

impl OperatorSet {
    pub fn new(a: CMatrix, b: CMatrix, gamma: CMatrix, c: CMatrix) -> Result<Self> {
        let nv = a.ncols();
        if b.nrows() != nv || gamma.nrows() != nv || gamma.ncols() != nv {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}, Γ is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if c.nrows() != a.nrows() || c.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "C is {}x{}, expected {}x{}",
                c.nrows(),
                c.ncols(),
                a.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, gamma, c })
    }

    pub fn n_voxels(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_detectors(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.b.ncols()
    }

    /// Copy with `Γ` replaced.
    pub fn with_gamma(&self, gamma: CMatrix) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), gamma, self.c.clone())
    }
}

/// Diagonal interaction potential.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    upsilon: CVector,
    support: Vec<bool>,
}

impl Potential {
    pub fn zeros(n: usize) -> Self {
        Self {
            upsilon: CVector::zeros(n),
            support: alloc::vec![false; n],
        }
    }

    /// Support is the set of nonzero entries.
    pub fn from_values(upsilon: CVector) -> Self {
        let support = upsilon.iter().map(|z| *z != ZERO).collect();
        Self { upsilon, support }
    }

    /// Values outside `support` are zeroed.
    pub fn with_support(mut upsilon: CVector, support: Vec<bool>) -> Result<Self> {
        if support.len() != upsilon.len() {
            return Err(Error::DimensionMismatch(format!(
                "support has {} entries, potential has {}",
                support.len(),
                upsilon.len()
            )));
        }
        for (z, &active) in upsilon.iter_mut().zip(&support) {
            if !active {
                *z = ZERO;
            }
        }
        Ok(Self { upsilon, support })
    }

    pub fn values(&self) -> &CVector {
        &self.upsilon
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.upsilon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upsilon.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    /// Indices in the support, ascending.
    pub fn active_indices(&self) -> Vec<usize> {
        self.support
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    /// Drops exact zeros from the support.
    pub fn prune(mut self) -> Self {
        for (s, z) in self.support.iter_mut().zip(self.upsilon.iter()) {
            if *z == ZERO {
                *s = false;
            }
        }
        self
    }

    pub fn to_matrix(&self) -> CMatrix {
        CMatrix::from_diagonal(&self.upsilon)
    }

    pub fn into_values(self) -> CVector {
        self.upsilon
    }
}

/// `Φ = A (I − V̂Γ)⁻¹ V̂ B` by a dense solve, rejecting forward operators with
/// condition number above [`ADMISSIBILITY_CAP`].
pub fn forward_solve(potential: &Potential, ops: &OperatorSet) -> Result<CMatrix> {
    forward_solve_with_cap(potential, ops, ADMISSIBILITY_CAP)
}

pub fn forward_solve_with_cap(potential: &Potential, ops: &OperatorSet, cap: f64) -> Result<CMatrix> {
    let nv = ops.n_voxels();
    if potential.len() != nv {
        return Err(Error::DimensionMismatch(format!(
            "potential has {} entries, geometry has {nv} voxels",
            potential.len()
        )));
    }
    let v = potential.values();
    let resolvent = CMatrix::identity(nv, nv) - linalg::scale_rows(v, &ops.gamma);
    let counter = InversionCounter::new();
    let (inverse, _) = linalg::invert(&resolvent, cap, &counter)
        .map_err(|s| Error::SingularForwardOperator { condition: s.condition })?;
    let vb = linalg::scale_rows(v, &ops.b);
    Ok(&ops.a * (inverse * vb))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomShape {
    Empty,
    /// Single voxel; the centre voxel when `voxel` is `None`.
    Point {
        voxel: Option<usize>,
    },
    /// Compact block of `round(fraction · N_v)` voxels around the centre.
    Block {
        fraction: f64,
    },
    /// Two distinct voxels drawn from the seed.
    TwoInclusion,
    /// `count` distinct voxels drawn from the seed with contrast scaled by
    /// a factor in `[0.5, 1)`.
    Sparse {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub shape: PhantomShape,
    pub contrast: C64,
    pub seed: u64,
    /// Largest admissible `|contrast|`.
    pub contrast_cap: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            shape: PhantomShape::Empty,
            contrast: c64(1.0, 0.0),
            seed: 0,
            contrast_cap: 10.0,
        }
    }
}

fn distinct_voxels(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    while picked.len() < count {
        let j = rng.random_range(0..n);
        if !picked.contains(&j) {
            picked.push(j);
        }
    }
    picked.sort_unstable();
    picked
}

pub fn make_phantom(spec: &PhantomSpec, geometry: &Geometry) -> Result<Potential> {
    let n = geometry.n_voxels();
    if spec.contrast.norm() > spec.contrast_cap {
        return Err(Error::ContrastExceedsCap {
            contrast: spec.contrast.norm(),
            cap: spec.contrast_cap,
        });
    }
    let mut values = CVector::zeros(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match &spec.shape {
        PhantomShape::Empty => {}
        PhantomShape::Point { voxel } => {
            let half = geometry.grid_size() / 2;
            let j = voxel.unwrap_or_else(|| geometry.voxel_index(half, half, half));
            if j >= n {
                return Err(Error::InvalidConfig {
                    key: "phantom_voxel".into(),
                    reason: format!("voxel {j} outside 0..{n}"),
                });
            }
            values[j] = spec.contrast;
        }
        PhantomShape::Block { fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::InvalidConfig {
                    key: "phantom_fraction".into(),
                    reason: format!("fraction {fraction} outside [0, 1]"),
                });
            }
            let count = libm_round(fraction * n as f64);
            let centre = (geometry.grid_size() - 1) as f64 / 2.0;
            let mut order: Vec<(f64, usize)> = (0..n)
                .map(|j| {
                    let (x, y, z) = geometry.voxel_coords(j);
                    let d = |c: usize| (c as f64 - centre) * (c as f64 - centre);
                    (d(x) + d(y) + d(z), j)
                })
                .collect();
            order.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            for &(_, j) in order.iter().take(count) {
                values[j] = spec.contrast;
            }
        }
        PhantomShape::TwoInclusion => {
            for j in distinct_voxels(&mut rng, n, 2) {
                values[j] = spec.contrast;
            }
        }
        PhantomShape::Sparse { count } => {
            if *count > n {
                return Err(Error::InvalidConfig {
                    key: "phantom_count".into(),
                    reason: format!("{count} voxels requested, geometry has {n}"),
                });
            }
            for j in distinct_voxels(&mut rng, n, *count) {
                let scale: f64 = rng.random_range(0.5..1.0);
                values[j] = spec.contrast * scale;
            }
        }
    }
    Ok(Potential::from_values(values))
}

fn libm_round(x: f64) -> usize {
    ComplexField::floor(x + 0.5) as usize
}

/// Adds circular complex Gaussian noise with per-entry standard deviation
/// `level · rms(Φ)`.
pub fn add_noise(phi: &CMatrix, level: f64, seed: u64) -> Result<CMatrix> {
    if !(level >= 0.0) {
        return Err(Error::InvalidConfig {
            key: "noise_level".into(),
            reason: format!("level {level} must be non-negative"),
        });
    }
    if level == 0.0 || phi.is_empty() {
        return Ok(phi.clone());
    }
    let rms = phi.norm() / linalg::sqrt(phi.len() as f64);
    let sigma = level * rms / core::f64::consts::SQRT_2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = phi.clone();
    for z in noisy.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z += c64(sigma * re, sigma * im);
    }
    Ok(noisy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(l: usize, h: f64, k: f64, standoff: f64) -> Result<Geometry> {
        Geometry::new(GeometryConfig {
            grid_size: l,
            pitch: h,
            wavenumber: c64(k, 0.0),
            source_standoff: standoff,
            detector_standoff: standoff,
            ..GeometryConfig::default()
        })
    }

    #[test]
    fn sizes_follow_grid() {
        let g = geometry(4, 1.0, 1.0, 2.0).unwrap();
        assert_eq!((g.n_voxels(), g.n_detectors(), g.n_sources()), (64, 16, 16));
        let g = geometry(6, 0.5, 2.0 * PI, 1.0).unwrap();
        assert_eq!((g.n_voxels(), g.n_detectors(), g.n_sources()), (216, 36, 36));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(geometry(1, 1.0, 1.0, 2.0), Err(Error::InvalidDimension(_))));
        assert!(matches!(
            geometry(4, 1.0, 1.0, 0.5),
            Err(Error::PlaneOverlapsVolume { .. })
        ));
        assert!(matches!(geometry(4, 1.0, 10.0, 1.0), Err(Error::InvalidConfig { .. })));
        assert!(matches!(geometry(4, 0.0, 1.0, 1.0), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn builds_from_key_value_map() {
        let mut map = BTreeMap::new();
        for (k, v) in [
            ("grid_size", "4"),
            ("pitch", "1"),
            ("wavenumber", "1"),
            ("standoff", "2"),
        ] {
            map.insert(k.to_string(), v.to_string());
        }
        let g = build_geometry(&map).unwrap();
        assert_eq!(g.n_voxels(), 64);
        assert_eq!(g.config().detector_standoff, 2.0);
        map.insert("grid_size".into(), "1".into());
        assert!(matches!(build_geometry(&map), Err(Error::InvalidDimension(_))));
        map.insert("grid_size".into(), "4".into());
        map.insert("colour".into(), "blue".into());
        assert!(matches!(build_geometry(&map), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn gamma_is_symmetric_with_zero_diagonal() {
        let ops = geometry(3, 1.0, 1.3, 1.0).unwrap().sample_operators();
        assert_eq!(ops.gamma, ops.gamma.transpose());
        assert!(ops.gamma.diagonal().iter().all(|z| *z == ZERO));
    }

    #[test]
    fn reflection_layout_gives_b_equal_a_transpose() {
        let g = Geometry::new(GeometryConfig {
            grid_size: 3,
            layout: Layout::Reflection,
            wavenumber: c64(2.0, 0.1),
            ..GeometryConfig::default()
        })
        .unwrap();
        let ops = g.sample_operators();
        assert_eq!(linalg::max_abs_difference(&ops.b, &ops.a.transpose()), 0.0);
    }

    #[test]
    fn transmission_layout_is_mirror_reciprocal() {
        let g = geometry(4, 0.7, 3.0, 1.5).unwrap();
        let ops = g.sample_operators();
        for j in 0..g.n_voxels() {
            for n in 0..g.n_sources() {
                assert_eq!(ops.b[(j, n)], ops.a[(n, g.z_mirror(j))]);
            }
        }
    }

    #[test]
    fn equivalent_sphere_matches_small_k_limit() {
        let make = |k: f64| {
            Geometry::new(GeometryConfig {
                wavenumber: c64(k, 0.0),
                self_term: SelfTerm::EquivalentSphere,
                ..GeometryConfig::default()
            })
            .unwrap()
            .gamma_self_term()
        };
        // both branches of the evaluation agree near the switch-over
        let r = ComplexField::powf(3.0 / (4.0 * PI), 1.0 / 3.0);
        let below = make(0.4999 / r);
        let above = make(0.5001 / r);
        assert!((below - above).norm() < 1e-4);
        assert!((make(1e-9).re - r * r / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tabulated_kernel_interpolates_helmholtz() {
        let k = 1.0;
        let spacing = 0.01;
        let values = (0..1200)
            .map(|i| {
                let r = (i as f64 * spacing).max(1e-3);
                (C64::i() * k * r).exp() / (4.0 * PI * r)
            })
            .collect();
        let table = TabulatedKernel::new(spacing, values).unwrap();
        let cfg = GeometryConfig {
            grid_size: 3,
            kernel: KernelKind::Tabulated(table),
            ..GeometryConfig::default()
        };
        let tabulated = Geometry::new(cfg).unwrap().sample_operators();
        let exact = geometry(3, 1.0, 1.0, 1.0).unwrap().sample_operators();
        assert!(linalg::relative_error(&tabulated.a, &exact.a) < 1e-3);
        assert_eq!(tabulated.gamma, tabulated.gamma.transpose());
    }

    #[test]
    fn short_table_is_rejected() {
        let table = TabulatedKernel::new(0.1, alloc::vec![ZERO; 10]).unwrap();
        let cfg = GeometryConfig {
            kernel: KernelKind::Tabulated(table),
            ..GeometryConfig::default()
        };
        assert!(Geometry::new(cfg).is_err());
    }

    #[test]
    fn zero_potential_scatters_nothing() {
        let g = geometry(3, 1.0, 1.0, 1.0).unwrap();
        let ops = g.sample_operators();
        let phi = forward_solve(&Potential::zeros(27), &ops).unwrap();
        assert_eq!(phi.norm(), 0.0);
    }

    #[test]
    fn single_voxel_is_rank_one() {
        let g = geometry(3, 1.0, 1.0, 1.0).unwrap();
        let ops = g.sample_operators();
        let j = 13;
        let v = c64(0.7, 0.2);
        let mut values = CVector::zeros(27);
        values[j] = v;
        let phi = forward_solve(&Potential::from_values(values), &ops).unwrap();
        let expected = ops.a.column(j) * ops.b.row(j) * v;
        assert!(linalg::relative_error(&phi, &expected) < 1e-13);
    }

    #[test]
    fn resonant_potential_is_rejected() {
        // two voxels with v Γ₀₁ = 1 make I − V̂Γ exactly singular
        let g = geometry(2, 1.0, 0.0, 1.0).unwrap();
        let ops = g.sample_operators();
        let mut values = CVector::zeros(8);
        let v = c64(1.0, 0.0) / ops.gamma[(0, 1)];
        values[0] = v;
        values[1] = v;
        let err = forward_solve(&Potential::from_values(values), &ops).unwrap_err();
        assert!(matches!(err, Error::SingularForwardOperator { .. }));
    }

    #[test]
    fn phantom_shapes() {
        let g = geometry(4, 1.0, 1.0, 1.0).unwrap();
        let empty = make_phantom(&PhantomSpec::default(), &g).unwrap();
        assert_eq!(empty.values().norm(), 0.0);
        let point = make_phantom(
            &PhantomSpec {
                shape: PhantomShape::Point { voxel: Some(5) },
                contrast: c64(0.3, 0.1),
                ..PhantomSpec::default()
            },
            &g,
        )
        .unwrap();
        assert_eq!(point.values()[5], c64(0.3, 0.1));
        assert_eq!(point.active_indices(), alloc::vec![5]);
        let block = make_phantom(
            &PhantomSpec {
                shape: PhantomShape::Block { fraction: 0.1 },
                ..PhantomSpec::default()
            },
            &g,
        )
        .unwrap();
        assert_eq!(block.active_count(), 6);
        let capped = PhantomSpec {
            contrast: c64(20.0, 0.0),
            ..PhantomSpec::default()
        };
        assert!(matches!(
            make_phantom(&capped, &g),
            Err(Error::ContrastExceedsCap { .. })
        ));
    }

    #[test]
    fn seeded_shapes_are_deterministic() {
        let g = geometry(4, 1.0, 1.0, 1.0).unwrap();
        let spec = PhantomSpec {
            shape: PhantomShape::Sparse { count: 5 },
            seed: 11,
            ..PhantomSpec::default()
        };
        let a = make_phantom(&spec, &g).unwrap();
        let b = make_phantom(&spec, &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.active_count(), 5);
        let two = make_phantom(
            &PhantomSpec {
                shape: PhantomShape::TwoInclusion,
                seed: 3,
                ..PhantomSpec::default()
            },
            &g,
        )
        .unwrap();
        assert_eq!(two.active_count(), 2);
    }

    #[test]
    fn noise_is_reproducible_and_scaled() {
        let phi = CMatrix::from_fn(16, 16, |i, j| c64((i + j) as f64 * 0.1, (i as f64 - j as f64) * 0.05));
        assert_eq!(add_noise(&phi, 0.0, 1).unwrap(), phi);
        let a = add_noise(&phi, 0.01, 42).unwrap();
        let b = add_noise(&phi, 0.01, 42).unwrap();
        assert_eq!(a, b);
        let rel = (&a - &phi).norm() / phi.norm();
        assert!((0.005..=0.02).contains(&rel), "relative noise {rel}");
        assert!(add_noise(&phi, -1.0, 0).is_err());
    }
}
