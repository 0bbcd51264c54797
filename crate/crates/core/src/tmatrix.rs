//! T-matrix functionals and the singular-vector machinery.
//!
//! The representation of a [`TMatrix`] is carried in its type: the real-space
//! functionals (`𝒯`, `𝒯⁻¹`, `𝒟`) only accept [`RealSpace`], the masking and
//! overwrite operators only accept [`SingularVector`]. Mixing them up is a
//! compile error rather than a silent bug.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::marker::PhantomData;

use crate::error::{Error, Result};
use crate::linalg::{self, c64, CMatrix, InversionCounter, RESOLVENT_CONDITION_CAP, ZERO};
use crate::operators::Potential;

/// Marker for the voxel-basis representation `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RealSpace;

/// Marker for the rotated representation `T̃ = R_A* T R_B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularVector;

/// `N_v × N_v` T-matrix tagged with its representation.
pub struct TMatrix<R> {
    entries: CMatrix,
    _rep: PhantomData<R>,
}

impl<R> TMatrix<R> {
    pub fn new(entries: CMatrix) -> Self {
        Self {
            entries,
            _rep: PhantomData,
        }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

impl<R> Clone for TMatrix<R> {
    fn clone(&self) -> Self {
        Self::new(self.entries.clone())
    }
}

impl<R> PartialEq for TMatrix<R> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl<R> fmt::Debug for TMatrix<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TMatrix")
            .field("representation", &core::any::type_name::<R>())
            .field("entries", &self.entries)
            .finish()
    }
}

/// Threshold rule for the known block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonPolicy {
    /// `ε² = ε_rel · σ₁^A σ₁^B`.
    Relative(f64),
    /// `ε` given directly.
    Absolute(f64),
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        Self::Relative(1e-12)
    }
}

/// Raw contents of an [`SvdCache`], for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdParts {
    pub sigma_a: Vec<f64>,
    pub sigma_b: Vec<f64>,
    /// Left singular vectors of `A`, `N_d × N_d`.
    pub left_a: CMatrix,
    /// Right singular vectors of `A`, completed to `N_v × N_v`.
    pub r_a: CMatrix,
    /// Left singular vectors of `B`, completed to `N_v × N_v`.
    pub r_b: CMatrix,
    /// Right singular vectors of `B`, `N_s × N_s`.
    pub right_b: CMatrix,
    pub epsilon: f64,
    pub m_a: usize,
    pub m_b: usize,
    /// `Γ P_A`, `N_v × M_A`.
    pub q_a: CMatrix,
}

/// Singular triplets of `A` and `B` and everything derived from them.
///
/// Immutable once built. `σ` vectors are padded with zeros to length `N_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdCache {
    sigma_a: Vec<f64>,
    sigma_b: Vec<f64>,
    left_a: CMatrix,
    r_a: CMatrix,
    r_b: CMatrix,
    right_b: CMatrix,
    epsilon: f64,
    m_a: usize,
    m_b: usize,
    p_a: CMatrix,
    p_b: CMatrix,
    q_a: CMatrix,
}

/// Singular values in descending order with the matching permutation.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Largest `M_A × M_B` rectangle inside `{(μ, ν) : σ_μ^A σ_ν^B > ε²}`.
fn known_block(sigma_a: &[f64], sigma_b: &[f64], eps2: f64) -> (usize, usize) {
    let mut best = (0, 0);
    for (mu, &sa) in sigma_a.iter().enumerate() {
        let width = sigma_b.iter().take_while(|&&sb| sa * sb > eps2).count();
        if width == 0 {
            break;
        }
        if (mu + 1) * width > best.0 * best.1 {
            best = (mu + 1, width);
        }
    }
    best
}

/// Thin SVD factors `(U, σ, V)` with `σ` descending, `m = U Σ V*`.
fn sorted_svd(m: &CMatrix) -> Result<(CMatrix, Vec<f64>, CMatrix)> {
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::NumericallyFailedSvd)?;
    let u = svd.u.ok_or(Error::NumericallyFailedSvd)?;
    let v = svd.v_t.ok_or(Error::NumericallyFailedSvd)?.adjoint();
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();
    if raw.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericallyFailedSvd);
    }
    let order = descending_order(&raw);
    let sigma = order.iter().map(|&i| raw[i]).collect();
    let u = CMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = CMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    Ok((u, sigma, v))
}

fn padded(mut sigma: Vec<f64>, n: usize) -> Vec<f64> {
    sigma.resize(n, 0.0);
    sigma
}

/// `svd_pipeline` over sampled operators.
pub fn svd_pipeline(a: &CMatrix, b: &CMatrix, gamma: &CMatrix, policy: EpsilonPolicy) -> Result<SvdCache> {
    SvdCache::new(a, b, gamma, policy)
}

impl SvdCache {
    pub fn new(a: &CMatrix, b: &CMatrix, gamma: &CMatrix, policy: EpsilonPolicy) -> Result<Self> {
        let nv = a.ncols();
        let nd = a.nrows();
        let ns = b.ncols();
        if b.nrows() != nv || gamma.shape() != (nv, nv) {
            return Err(Error::DimensionMismatch(format!(
                "A is {nd}x{nv}, B is {}x{ns}, Γ is {}x{}",
                b.nrows(),
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if nd > nv || ns > nv {
            return Err(Error::InvalidDimension(format!(
                "need N_d, N_s ≤ N_v, got N_d = {nd}, N_s = {ns}, N_v = {nv}"
            )));
        }
        // both factor shapes are wide/tall relative to N_v, so the thin U of A
        // and the thin V of B are already square
        let (left_a, sigma_a, thin_ra) = sorted_svd(a)?;
        let (thin_rb, sigma_b, right_b) = sorted_svd(b)?;
        let r_a = linalg::complete_unitary(&thin_ra);
        let r_b = linalg::complete_unitary(&thin_rb);
        let sigma_a = padded(sigma_a, nv);
        let sigma_b = padded(sigma_b, nv);
        let epsilon = match policy {
            EpsilonPolicy::Relative(rel) => linalg::sqrt(rel * sigma_a[0] * sigma_b[0]),
            EpsilonPolicy::Absolute(eps) => eps,
        };
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig {
                key: "epsilon".into(),
                reason: format!("threshold {epsilon} must be finite and non-negative"),
            });
        }
        let (m_a, m_b) = known_block(&sigma_a, &sigma_b, epsilon * epsilon);
        let q_a = gamma * r_a.columns(0, m_a);
        Self::assemble(SvdParts {
            sigma_a,
            sigma_b,
            left_a,
            r_a,
            r_b,
            right_b,
            epsilon,
            m_a,
            m_b,
            q_a,
        })
    }

    /// Rebuilds a cache from persisted parts, checking shapes only.
    pub fn from_parts(parts: SvdParts) -> Result<Self> {
        Self::assemble(parts)
    }

    fn assemble(parts: SvdParts) -> Result<Self> {
        let nv = parts.r_a.nrows();
        let nd = parts.left_a.nrows();
        let ns = parts.right_b.nrows();
        let ok = parts.r_a.shape() == (nv, nv)
            && parts.r_b.shape() == (nv, nv)
            && parts.left_a.shape() == (nd, nd)
            && parts.right_b.shape() == (ns, ns)
            && parts.sigma_a.len() == nv
            && parts.sigma_b.len() == nv
            && parts.m_a <= nd
            && parts.m_b <= ns
            && parts.q_a.shape() == (nv, parts.m_a);
        if !ok {
            return Err(Error::DimensionMismatch("inconsistent SVD cache parts".into()));
        }
        let p_a = parts.r_a.columns(0, parts.m_a).into_owned();
        let p_b = parts.r_b.columns(0, parts.m_b).into_owned();
        Ok(Self {
            sigma_a: parts.sigma_a,
            sigma_b: parts.sigma_b,
            left_a: parts.left_a,
            r_a: parts.r_a,
            r_b: parts.r_b,
            right_b: parts.right_b,
            epsilon: parts.epsilon,
            m_a: parts.m_a,
            m_b: parts.m_b,
            p_a,
            p_b,
            q_a: parts.q_a,
        })
    }

    pub fn into_parts(self) -> SvdParts {
        SvdParts {
            sigma_a: self.sigma_a,
            sigma_b: self.sigma_b,
            left_a: self.left_a,
            r_a: self.r_a,
            r_b: self.r_b,
            right_b: self.right_b,
            epsilon: self.epsilon,
            m_a: self.m_a,
            m_b: self.m_b,
            q_a: self.q_a,
        }
    }

    /// Same singular data, `Q_A` recomputed for a different `Γ`.
    pub fn with_gamma(&self, gamma: &CMatrix) -> Self {
        let mut out = self.clone();
        out.q_a = gamma * &self.p_a;
        out
    }

    pub fn n_voxels(&self) -> usize {
        self.r_a.nrows()
    }

    pub fn n_detectors(&self) -> usize {
        self.left_a.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.right_b.nrows()
    }

    pub fn sigma_a(&self) -> &[f64] {
        &self.sigma_a
    }

    pub fn sigma_b(&self) -> &[f64] {
        &self.sigma_b
    }

    /// Columns are `|f_μ^A⟩`.
    pub fn left_a(&self) -> &CMatrix {
        &self.left_a
    }

    /// Columns are `|g_μ^A⟩`.
    pub fn r_a(&self) -> &CMatrix {
        &self.r_a
    }

    /// Columns are `|f_ν^B⟩`.
    pub fn r_b(&self) -> &CMatrix {
        &self.r_b
    }

    /// Columns are `|g_ν^B⟩`.
    pub fn right_b(&self) -> &CMatrix {
        &self.right_b
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn m_a(&self) -> usize {
        self.m_a
    }

    pub fn m_b(&self) -> usize {
        self.m_b
    }

    /// The nonzero columns of `P_A` (`N_v × M_A`).
    pub fn p_a(&self) -> &CMatrix {
        &self.p_a
    }

    /// The nonzero columns of `P_B` (`N_v × M_B`).
    pub fn p_b(&self) -> &CMatrix {
        &self.p_b
    }

    /// `Γ P_A` restricted to its nonzero columns.
    pub fn q_a(&self) -> &CMatrix {
        &self.q_a
    }

    /// `P_A` as a full `N_v × N_v` matrix with columns `≥ M_A` zeroed.
    pub fn p_a_full(&self) -> CMatrix {
        zero_padded(&self.p_a, self.n_voxels())
    }

    /// `P_B` as a full `N_v × N_v` matrix with columns `≥ M_B` zeroed.
    pub fn p_b_full(&self) -> CMatrix {
        zero_padded(&self.p_b, self.n_voxels())
    }

    /// `T_exp = P_A T̃_exp P_B*` using only the known block.
    pub fn real_space_t_exp(&self, t_exp: &TMatrix<SingularVector>) -> TMatrix<RealSpace> {
        let block = t_exp.entries().view((0, 0), (self.m_a, self.m_b));
        TMatrix::new(&self.p_a * block * self.p_b.adjoint())
    }
}

fn zero_padded(thin: &CMatrix, n: usize) -> CMatrix {
    let mut full = CMatrix::zeros(n, n);
    full.columns_mut(0, thin.ncols()).copy_from(thin);
    full
}

/// Measured data with its singular-vector representation, once computed.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    phi: CMatrix,
    phi_tilde: Option<CMatrix>,
}

impl DataMatrix {
    pub fn new(phi: CMatrix) -> Self {
        Self { phi, phi_tilde: None }
    }

    pub fn phi(&self) -> &CMatrix {
        &self.phi
    }

    pub fn phi_tilde(&self) -> Option<&CMatrix> {
        self.phi_tilde.as_ref()
    }

    /// Materializes `Φ̃` if it is not already present.
    pub fn materialize(&mut self, cache: &SvdCache) -> &CMatrix {
        let (phi, slot) = (&self.phi, &mut self.phi_tilde);
        slot.get_or_insert_with(|| cache.left_a.ad_mul(phi) * &cache.right_b)
    }
}

/// `Φ̃_μν = ⟨f_μ^A|Φ|g_ν^B⟩`.
pub fn phi_tilde(phi: &CMatrix, cache: &SvdCache) -> Result<DataMatrix> {
    if phi.shape() != (cache.n_detectors(), cache.n_sources()) {
        return Err(Error::DimensionMismatch(format!(
            "Φ is {}x{}, expected {}x{}",
            phi.nrows(),
            phi.ncols(),
            cache.n_detectors(),
            cache.n_sources()
        )));
    }
    let mut data = DataMatrix::new(phi.clone());
    data.materialize(cache);
    Ok(data)
}

/// `T̃_exp`: `Φ̃_μν / (σ_μ^A σ_ν^B)` inside the known block, zero elsewhere.
pub fn experimental_tmatrix(data: &DataMatrix, cache: &SvdCache) -> Result<TMatrix<SingularVector>> {
    let owned;
    let tilde = match data.phi_tilde() {
        Some(t) => t,
        None => {
            owned = phi_tilde(data.phi(), cache)?;
            owned.phi_tilde().expect("materialized above")
        }
    };
    let nv = cache.n_voxels();
    let mut t = CMatrix::zeros(nv, nv);
    for nu in 0..cache.m_b {
        for mu in 0..cache.m_a {
            t[(mu, nu)] = tilde[(mu, nu)] / (cache.sigma_a[mu] * cache.sigma_b[nu]);
        }
    }
    Ok(TMatrix::new(t))
}

/// `ℳ`: zeroes the known block.
pub fn mask_m(x: &TMatrix<SingularVector>, cache: &SvdCache) -> TMatrix<SingularVector> {
    let mut out = x.entries.clone();
    out.view_mut((0, 0), (cache.m_a, cache.m_b)).fill(ZERO);
    TMatrix::new(out)
}

/// `𝒩`: keeps only the known block.
pub fn mask_n(x: &TMatrix<SingularVector>, cache: &SvdCache) -> TMatrix<SingularVector> {
    let n = x.dim();
    let mut out = CMatrix::zeros(n, n);
    out.view_mut((0, 0), (cache.m_a, cache.m_b))
        .copy_from(&x.entries.view((0, 0), (cache.m_a, cache.m_b)));
    TMatrix::new(out)
}

/// `𝒪[X] = ℳ[X] + T̃_exp`.
pub fn enforce_data(
    x: &TMatrix<SingularVector>,
    t_exp: &TMatrix<SingularVector>,
    cache: &SvdCache,
) -> TMatrix<SingularVector> {
    let mut out = mask_m(x, cache).entries;
    out += &t_exp.entries;
    TMatrix::new(out)
}

/// `𝒯[V] = (I − VΓ)⁻¹ V`.
pub fn t_of_v(v: &CMatrix, gamma: &CMatrix, counter: &InversionCounter) -> Result<TMatrix<RealSpace>> {
    let n = v.nrows();
    let resolvent = CMatrix::identity(n, n) - v * gamma;
    let (inverse, _) = linalg::invert(&resolvent, RESOLVENT_CONDITION_CAP, counter)
        .map_err(|s| Error::SingularResolvent { condition: s.condition })?;
    Ok(TMatrix::new(inverse * v))
}

/// `𝒯⁻¹[T] = (I + TΓ)⁻¹ T`.
pub fn v_of_t(t: &TMatrix<RealSpace>, gamma: &CMatrix, counter: &InversionCounter) -> Result<CMatrix> {
    let n = t.dim();
    let m = CMatrix::identity(n, n) + t.entries() * gamma;
    let (inverse, _) = linalg::invert(&m, RESOLVENT_CONDITION_CAP, counter)
        .map_err(|s| Error::SingularInverse { condition: s.condition })?;
    Ok(inverse * t.entries())
}

/// `ℛ[T] = R_A* T R_B`.
pub fn rotate(t: &TMatrix<RealSpace>, cache: &SvdCache) -> TMatrix<SingularVector> {
    TMatrix::new(cache.r_a.ad_mul(t.entries()) * &cache.r_b)
}

/// `ℛ⁻¹[T̃] = R_A T̃ R_B*`.
pub fn rotate_inv(t: &TMatrix<SingularVector>, cache: &SvdCache) -> TMatrix<RealSpace> {
    TMatrix::new(&cache.r_a * t.entries() * cache.r_b.adjoint())
}

/// `𝒟`: the diagonal of a real-space matrix as a potential.
pub fn diag_of(v: &CMatrix) -> Potential {
    Potential::from_values(v.diagonal())
}

/// `‖V − diag V‖₂ / ‖diag V‖₂`, or `+∞` when the diagonal vanishes.
pub fn diagonality_ratio(v: &CMatrix) -> f64 {
    let diag = v.diagonal().norm();
    let mut off_sq = 0.0;
    for (j, col) in v.column_iter().enumerate() {
        for (i, z) in col.iter().enumerate() {
            if i != j {
                off_sq += z.norm_sqr();
            }
        }
    }
    let off = linalg::sqrt(off_sq);
    if diag == 0.0 {
        if off == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        off / diag
    }
}

/// `‖T − Tᵀ‖₂ / ‖T‖₂`, monitored but never enforced.
pub fn symmetry_defect(t: &CMatrix) -> f64 {
    linalg::relative_error(&t.transpose(), t)
}

/// `1` on the diagonal of an `n × n` matrix, for tests and oracles.
pub fn identity(n: usize) -> CMatrix {
    CMatrix::from_diagonal_element(n, n, c64(1.0, 0.0))
}
