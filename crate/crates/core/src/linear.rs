//! The linear regime.
//!
//! Linearizing data transforms map `Φ` to `Ψ ≈ AVB`. With `Γ = 0` the
//! completion iteration collapses to a Richardson iteration on
//! `W υ = υ_exp`, where `W_ij = (P_A P_A*)_ij (P_B P_B*)_ji`. The same
//! equation follows from the stacked system `K υ = ψ` by a unitary change of
//! basis, truncation and diagonal scaling; [`stacked_route_artifacts`] builds
//! that route explicitly so the two derivations can be checked against each
//! other.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, c64, CMatrix, CVector, ONE, ZERO};
use crate::operators::{OperatorSet, Potential};
use crate::solver::{self, Problem, SolverOptions, TState};
use crate::tmatrix::{experimental_tmatrix, phi_tilde, SingularVector, SvdCache, TMatrix};

/// Largest number of entries any oracle-only matrix (`K`, `U`) may have.
pub const ORACLE_ENTRY_LIMIT: usize = 1 << 24;

/// Rytov entries with `|1 + Φ/C|` below this, or this close to the negative
/// real axis, are branch-ambiguous.
pub const RYTOV_EXCLUSION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Born,
    Rytov,
    MeanField,
}

impl TransformKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Born => "born",
            Self::Rytov => "rytov",
            Self::MeanField => "meanfield",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "born" => Some(Self::Born),
            "rytov" => Some(Self::Rytov),
            "meanfield" | "mean-field" => Some(Self::MeanField),
            _ => None,
        }
    }
}

/// `Ψ = Φ`.
pub fn born_transform(phi: &CMatrix) -> CMatrix {
    phi.clone()
}

fn check_direct_field(phi: &CMatrix, c: &CMatrix) -> Result<()> {
    if phi.shape() != c.shape() {
        return Err(Error::DimensionMismatch(format!(
            "Φ is {}x{}, C is {}x{}",
            phi.nrows(),
            phi.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    for col in 0..c.ncols() {
        for row in 0..c.nrows() {
            if c[(row, col)] == ZERO {
                return Err(Error::ZeroDirectField { row, col });
            }
        }
    }
    Ok(())
}

/// `Ψ_ij = C_ij log(1 + Φ_ij / C_ij)` on the principal branch.
pub fn rytov_transform(phi: &CMatrix, c: &CMatrix) -> Result<CMatrix> {
    check_direct_field(phi, c)?;
    let mut flagged = Vec::new();
    let mut psi = CMatrix::zeros(phi.nrows(), phi.ncols());
    for col in 0..phi.ncols() {
        for row in 0..phi.nrows() {
            let cij = c[(row, col)];
            let z = ONE + phi[(row, col)] / cij;
            let near_cut = z.re < 0.0 && z.im.abs() < RYTOV_EXCLUSION;
            if z.norm() < RYTOV_EXCLUSION || near_cut {
                flagged.push((row, col));
            } else {
                psi[(row, col)] = cij * z.ln();
            }
        }
    }
    if flagged.is_empty() {
        Ok(psi)
    } else {
        Err(Error::BranchAmbiguous { entries: flagged })
    }
}

/// `Ψ_ij = 1 / (1/Φ_ij + 1/C_ij)`, with `Φ_ij = 0 ↦ 0`.
pub fn meanfield_transform(phi: &CMatrix, c: &CMatrix) -> Result<CMatrix> {
    check_direct_field(phi, c)?;
    let mut poles = Vec::new();
    let mut psi = CMatrix::zeros(phi.nrows(), phi.ncols());
    for col in 0..phi.ncols() {
        for row in 0..phi.nrows() {
            let p = phi[(row, col)];
            if p == ZERO {
                continue;
            }
            let cij = c[(row, col)];
            let sum = p + cij;
            if sum.norm() <= f64::EPSILON * cij.norm() {
                poles.push((row, col));
            } else {
                // algebraically 1/(1/Φ + 1/C), without the two reciprocals
                psi[(row, col)] = p * cij / sum;
            }
        }
    }
    if poles.is_empty() {
        Ok(psi)
    } else {
        Err(Error::PoleEntry { entries: poles })
    }
}

pub fn apply_transform(kind: TransformKind, phi: &CMatrix, c: &CMatrix) -> Result<CMatrix> {
    match kind {
        TransformKind::Born => Ok(born_transform(phi)),
        TransformKind::Rytov => rytov_transform(phi, c),
        TransformKind::MeanField => meanfield_transform(phi, c),
    }
}

/// Column-stacked `vec(X)`: entry `(m, n)` lands at `m + n · rows`.
pub fn vec_columns(x: &CMatrix) -> CVector {
    CVector::from_column_slice(x.as_slice())
}

/// `K_(mn),j = A_mj B_jn` with `(mn) ↦ m + n N_d`.
pub fn build_k(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let (nd, nv) = a.shape();
    let ns = b.ncols();
    if b.nrows() != nv {
        return Err(Error::DimensionMismatch(format!(
            "A is {nd}x{nv}, B is {}x{ns}",
            b.nrows()
        )));
    }
    let entries = nd * ns * nv;
    if entries > ORACLE_ENTRY_LIMIT {
        return Err(Error::OracleScaleExceeded(format!(
            "K would have {entries} entries (limit {ORACLE_ENTRY_LIMIT})"
        )));
    }
    Ok(CMatrix::from_fn(nd * ns, nv, |row, j| {
        let (m, n) = (row % nd, row / nd);
        a[(m, j)] * b[(j, n)]
    }))
}

/// `K υ = ψ` in stacked form.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub k: CMatrix,
    pub psi: CVector,
}

impl LinearizedSystem {
    pub fn new(a: &CMatrix, b: &CMatrix, psi: &CMatrix) -> Result<Self> {
        let k = build_k(a, b)?;
        if psi.shape() != (a.nrows(), b.ncols()) {
            return Err(Error::DimensionMismatch("Ψ does not match A and B".into()));
        }
        Ok(Self {
            k,
            psi: vec_columns(psi),
        })
    }
}

/// `W_ij = (P_A P_A*)_ij (P_B P_B*)_ji`.
pub fn build_w(cache: &SvdCache) -> CMatrix {
    let pi_a = cache.p_a() * cache.p_a().adjoint();
    let pi_b = cache.p_b() * cache.p_b().adjoint();
    pi_a.component_mul(&pi_b.transpose())
}

/// `W` assembled term by term from the retained singular vectors.
pub fn w_from_singular_vectors(cache: &SvdCache) -> CMatrix {
    let n = cache.n_voxels();
    let (g, f) = (cache.r_a(), cache.r_b());
    let mut w = CMatrix::zeros(n, n);
    for nu in 0..cache.m_b() {
        for mu in 0..cache.m_a() {
            for j in 0..n {
                let right = g[(j, mu)].conj() * f[(j, nu)];
                for i in 0..n {
                    // ⟨i|g⟩⟨g|j⟩⟨j|f⟩⟨f|i⟩
                    w[(i, j)] += g[(i, mu)] * right * f[(i, nu)].conj();
                }
            }
        }
    }
    w
}

/// `W` together with `υ_exp = diag(T_exp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WSystem {
    pub w: CMatrix,
    pub upsilon_exp: CVector,
    /// `λ_min(W)`, once computed.
    pub xi: Option<f64>,
}

impl WSystem {
    pub fn new(cache: &SvdCache, t_exp: &TMatrix<SingularVector>) -> Self {
        Self {
            w: build_w(cache),
            upsilon_exp: cache.real_space_t_exp(t_exp).entries().diagonal(),
            xi: None,
        }
    }

    pub fn from_data(psi: &CMatrix, cache: &SvdCache) -> Result<Self> {
        let data = phi_tilde(psi, cache)?;
        Ok(Self::new(cache, &experimental_tmatrix(&data, cache)?))
    }

    pub fn with_spectrum(mut self) -> Self {
        self.xi = Some(spectrum_check(&self.w).xi);
        self
    }

    /// `(W + λ²I) υ = υ_exp` by LU.
    pub fn solve_direct(&self, lambda: f64) -> Result<CVector> {
        let n = self.w.nrows();
        let shifted = &self.w + CMatrix::identity(n, n) * c64(lambda * lambda, 0.0);
        shifted.lu().solve(&self.upsilon_exp).ok_or(Error::SingularSystem)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonOutcome {
    pub upsilon: CVector,
    /// Index of the accepted iterate, counting `υ₁ = υ_exp` as 1.
    pub iterations: usize,
    pub step_norm: f64,
}

/// `υ_{k+1} = υ_exp + (I − W − λ²I) υ_k` from `υ₁ = υ_exp` until
/// `‖υ_{k+1} − υ_k‖ < tol`.
pub fn richardson_solve(
    w: &CMatrix,
    upsilon_exp: &CVector,
    max_iters: usize,
    tol: f64,
    lambda: f64,
) -> Result<RichardsonOutcome> {
    if !(lambda >= 0.0) || !(tol >= 0.0) {
        return Err(Error::InvalidOptions(format!(
            "need λ ≥ 0 and tol ≥ 0, got λ = {lambda}, tol = {tol}"
        )));
    }
    let shift = c64(1.0 - lambda * lambda, 0.0);
    let mut upsilon = upsilon_exp.clone();
    let mut step_norm = f64::INFINITY;
    for k in 1..max_iters {
        let next = upsilon_exp + &upsilon * shift - w * &upsilon;
        step_norm = (&next - &upsilon).norm();
        upsilon = next;
        if !step_norm.is_finite() {
            break;
        }
        if step_norm < tol {
            return Ok(RichardsonOutcome {
                upsilon,
                iterations: k + 1,
                step_norm,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: step_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `λ_min(W)`, the overlap of the retained singular vectors.
    pub xi: f64,
}

pub fn spectrum_check(w: &CMatrix) -> SpectrumReport {
    let eigenvalues = linalg::hermitian_eigenvalues(w);
    let xi = eigenvalues.first().copied().unwrap_or(0.0);
    SpectrumReport { eigenvalues, xi }
}

/// One measured identity of a verification oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub discrepancy: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.discrepancy <= self.tolerance
    }
}

/// Tolerance for every exact identity checked by the oracles.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedRouteArtifacts {
    /// `U_(μν),(mn) = ⟨f_μ^A|m⟩⟨n|g_ν^B⟩`.
    pub u: CMatrix,
    /// Diagonal of `Θ`: `1/(σ_μ^A σ_ν^B)` on retained rows, 0 elsewhere.
    pub theta: Vec<f64>,
    /// `Q_(μν),j = ⟨g_μ^A|j⟩⟨j|f_ν^B⟩` over retained `(μν) ↦ μ + ν M_A`.
    pub q: CMatrix,
    /// Retained entries of `T̃_exp` in the same order.
    pub tau: CVector,
    pub checks: Vec<Check>,
}

/// Builds `U`, `Θ`, `Q`, `τ` from the singular vectors and measures each
/// identity linking them to `K`, `W` and `υ_exp`.
pub fn stacked_route_artifacts(
    a: &CMatrix,
    b: &CMatrix,
    phi: &CMatrix,
    cache: &SvdCache,
) -> Result<StackedRouteArtifacts> {
    let (nd, ns, nv) = (cache.n_detectors(), cache.n_sources(), cache.n_voxels());
    let (ma, mb) = (cache.m_a(), cache.m_b());
    let rows = nd * ns;
    if rows * rows > ORACLE_ENTRY_LIMIT {
        return Err(Error::OracleScaleExceeded(format!(
            "U would have {} entries (limit {ORACLE_ENTRY_LIMIT})",
            rows * rows
        )));
    }
    let k = build_k(a, b)?;
    let (fa, gb) = (cache.left_a(), cache.right_b());
    let (ga, fb) = (cache.r_a(), cache.r_b());
    let (sa, sb) = (cache.sigma_a(), cache.sigma_b());

    let u = CMatrix::from_fn(rows, rows, |r, c| {
        let (mu, nu) = (r % nd, r / nd);
        let (m, n) = (c % nd, c / nd);
        fa[(m, mu)].conj() * gb[(n, nu)]
    });
    let mut theta = alloc::vec![0.0; rows];
    for nu in 0..mb {
        for mu in 0..ma {
            theta[mu + nu * nd] = 1.0 / (sa[mu] * sb[nu]);
        }
    }
    let q = CMatrix::from_fn(ma * mb, nv, |r, j| {
        let (mu, nu) = (r % ma, r / ma);
        ga[(j, mu)].conj() * fb[(j, nu)]
    });
    let t_exp = experimental_tmatrix(&phi_tilde(phi, cache)?, cache)?;
    let tau = CVector::from_fn(ma * mb, |r, _| t_exp.entries()[(r % ma, r / ma)]);
    let w = build_w(cache);
    let upsilon_exp = cache.real_space_t_exp(&t_exp).entries().diagonal();

    let uk = &u * &k;
    // equals σ_μ σ_ν Q on retained rows; every σ vanishes past N_d or N_s
    let expected_uk = CMatrix::from_fn(rows, nv, |r, j| {
        let (mu, nu) = (r % nd, r / nd);
        ga[(j, mu)].conj() * fb[(j, nu)] * (sa[mu] * sb[nu])
    });
    let theta_uk = CMatrix::from_fn(rows, nv, |r, j| uk[(r, j)] * theta[r]);
    let u_phi = &u * vec_columns(phi);
    let theta_u_phi = CVector::from_fn(rows, |r, _| u_phi[r] * theta[r]);
    let tau_padded = CVector::from_fn(rows, |r, _| {
        let (mu, nu) = (r % nd, r / nd);
        if mu < ma && nu < mb {
            tau[mu + nu * ma]
        } else {
            ZERO
        }
    });

    let identity = CMatrix::identity(rows, rows);
    let k_scale = uk.norm().max(f64::MIN_POSITIVE);
    let checks = alloc::vec![
        Check {
            name: "unitarity of U",
            discrepancy: linalg::max_abs_difference(&u.ad_mul(&u), &identity),
            tolerance: IDENTITY_TOLERANCE,
        },
        Check {
            name: "UK row identity",
            discrepancy: (&uk - &expected_uk).norm() / k_scale,
            tolerance: IDENTITY_TOLERANCE,
        },
        Check {
            name: "Q*Q = W",
            discrepancy: linalg::relative_error(&q.ad_mul(&q), &w),
            tolerance: IDENTITY_TOLERANCE,
        },
        Check {
            name: "Q*tau = upsilon_exp",
            discrepancy: linalg::relative_error_vec(&q.ad_mul(&tau), &upsilon_exp),
            tolerance: IDENTITY_TOLERANCE,
        },
        Check {
            name: "(ThetaUK)*(ThetaUK) = W",
            discrepancy: linalg::relative_error(&theta_uk.ad_mul(&theta_uk), &w),
            tolerance: IDENTITY_TOLERANCE,
        },
        Check {
            name: "ThetaU phi = tau",
            discrepancy: linalg::relative_error_vec(&theta_u_phi, &tau_padded),
            tolerance: IDENTITY_TOLERANCE,
        },
    ];
    Ok(StackedRouteArtifacts {
        u,
        theta,
        q,
        tau,
        checks,
    })
}

/// [`stacked_route_artifacts`], failing on the first identity out of tolerance.
pub fn stacked_route_pipeline(
    a: &CMatrix,
    b: &CMatrix,
    phi: &CMatrix,
    cache: &SvdCache,
) -> Result<StackedRouteArtifacts> {
    let artifacts = stacked_route_artifacts(a, b, phi, cache)?;
    if let Some(bad) = artifacts.checks.iter().find(|c| !c.passed()) {
        return Err(Error::VerificationFailure {
            check: bad.name.into(),
            discrepancy: bad.discrepancy,
            tolerance: bad.tolerance,
        });
    }
    Ok(artifacts)
}

/// `D_L` from the linearized equation with the chosen transform.
pub fn linear_initial_guess(
    ops: &OperatorSet,
    phi: &CMatrix,
    cache: &SvdCache,
    kind: TransformKind,
    lambda: f64,
) -> Result<Potential> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidOptions(format!("λ = {lambda} must be non-negative")));
    }
    let psi = apply_transform(kind, phi, &ops.c)?;
    let system = WSystem::from_data(&psi, cache)?;
    if system.upsilon_exp.iter().all(|z| *z == ZERO) {
        return Ok(Potential::zeros(cache.n_voxels()));
    }
    Ok(Potential::from_values(system.solve_direct(lambda)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub steps: usize,
    /// Largest relative difference between the two sequences of `D_k`.
    pub discrepancy: f64,
    /// `D_k` from the explicit diagonal recursion.
    pub recursion: Vec<CVector>,
}

/// Runs the streamlined engine with `Γ` forced to zero next to the explicit
/// recursion `D_{k+1} = D_k + D_exp − 𝒟[(P_A P_A*) D_k (P_B P_B*)]`.
pub fn gamma_zero_reduction_check(
    ops: &OperatorSet,
    phi: &CMatrix,
    cache: &SvdCache,
    n_steps: usize,
) -> Result<ReductionReport> {
    let nv = ops.n_voxels();
    let zero = CMatrix::zeros(nv, nv);
    let problem = Problem::new(ops.with_gamma(zero.clone())?, cache.with_gamma(&zero), phi.clone())?;
    let options = SolverOptions {
        max_iterations: n_steps,
        track_diagonality: false,
        ..SolverOptions::default()
    };
    let pi_a = cache.p_a_full() * cache.p_a_full().adjoint();
    let pi_b = cache.p_b_full() * cache.p_b_full().adjoint();
    let d_exp = problem.t_exp().diagonal();

    let mut state = TState::initial(&problem, &options)?;
    let mut d = d_exp.clone();
    let mut recursion = Vec::with_capacity(n_steps);
    let mut discrepancy: f64 = 0.0;
    for _ in 0..n_steps {
        state = solver::streamlined_step(&state, &problem, &options)?;
        discrepancy = discrepancy.max(linalg::relative_error_vec(state.d.values(), &d));
        recursion.push(d.clone());
        let projected = &pi_a * CMatrix::from_diagonal(&d) * &pi_b;
        d = &d + &d_exp - projected.diagonal();
    }
    Ok(ReductionReport {
        steps: n_steps,
        discrepancy,
        recursion,
    })
}
