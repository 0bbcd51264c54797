//! Iteration engines.
//!
//! The reference engine runs the six steps of the basic cycle literally:
//! `ℛ⁻¹ → 𝒯⁻¹ → 𝒟 → 𝒯 → ℛ → 𝒪`. The streamlined engine fuses steps 5, 6
//! and 1 into a masked low-rank update of the real-space T-matrix, replaces
//! steps 2 and 3 with a closed-form least-squares diagonal, and tracks
//! `Λ = ΓT` alongside `T` so that each iteration needs a single dense
//! inversion.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, c64, CMatrix, CVector, InversionCounter, C64, ONE, RESOLVENT_CONDITION_CAP, ZERO};
use crate::operators::{OperatorSet, Potential};
use crate::tmatrix::{
    self, diag_of, diagonality_ratio, enforce_data, experimental_tmatrix, phi_tilde, rotate, rotate_inv, v_of_t,
    DataMatrix, EpsilonPolicy, RealSpace, SingularVector, SvdCache, TMatrix,
};

/// Measured data together with everything derived from it once per run.
#[derive(Debug)]
pub struct Problem {
    ops: OperatorSet,
    cache: SvdCache,
    data: DataMatrix,
    t_exp_tilde: TMatrix<SingularVector>,
    t_exp: CMatrix,
    lambda_exp: CMatrix,
    ground_truth: Option<Potential>,
    counter: InversionCounter,
}

impl Problem {
    pub fn new(ops: OperatorSet, cache: SvdCache, phi: CMatrix) -> Result<Self> {
        if cache.n_voxels() != ops.n_voxels()
            || cache.n_detectors() != ops.n_detectors()
            || cache.n_sources() != ops.n_sources()
        {
            return Err(Error::DimensionMismatch(format!(
                "SVD cache is for {}x{}x{}, operators are {}x{}x{}",
                cache.n_detectors(),
                cache.n_voxels(),
                cache.n_sources(),
                ops.n_detectors(),
                ops.n_voxels(),
                ops.n_sources()
            )));
        }
        let data = phi_tilde(&phi, &cache)?;
        let t_exp_tilde = experimental_tmatrix(&data, &cache)?;
        let block = t_exp_tilde.entries().view((0, 0), (cache.m_a(), cache.m_b()));
        let t_exp = cache.real_space_t_exp(&t_exp_tilde).into_entries();
        let lambda_exp = cache.q_a() * block * cache.p_b().adjoint();
        Ok(Self {
            ops,
            cache,
            data,
            t_exp_tilde,
            t_exp,
            lambda_exp,
            ground_truth: None,
            counter: InversionCounter::new(),
        })
    }

    /// Builds the SVD cache from the operators.
    pub fn from_operators(ops: OperatorSet, phi: CMatrix, policy: EpsilonPolicy) -> Result<Self> {
        let cache = SvdCache::new(&ops.a, &ops.b, &ops.gamma, policy)?;
        Self::new(ops, cache, phi)
    }

    pub fn with_ground_truth(mut self, truth: Potential) -> Result<Self> {
        if truth.len() != self.ops.n_voxels() {
            return Err(Error::DimensionMismatch(format!(
                "ground truth has {} entries, expected {}",
                truth.len(),
                self.ops.n_voxels()
            )));
        }
        self.ground_truth = Some(truth);
        Ok(self)
    }

    pub fn ops(&self) -> &OperatorSet {
        &self.ops
    }

    pub fn cache(&self) -> &SvdCache {
        &self.cache
    }

    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    pub fn phi(&self) -> &CMatrix {
        self.data.phi()
    }

    pub fn t_exp_tilde(&self) -> &TMatrix<SingularVector> {
        &self.t_exp_tilde
    }

    pub fn t_exp(&self) -> &CMatrix {
        &self.t_exp
    }

    pub fn lambda_exp(&self) -> &CMatrix {
        &self.lambda_exp
    }

    pub fn ground_truth(&self) -> Option<&Potential> {
        self.ground_truth.as_ref()
    }

    /// Counter on every dense inversion performed for this problem.
    pub fn counter(&self) -> &InversionCounter {
        &self.counter
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Roughening {
    None,
    /// Zero every entry with `|D_ii| < t`.
    AbsoluteThreshold(f64),
    /// Keep the `m` entries of largest modulus.
    KeepTop(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    None,
    NonnegReal,
    NonnegImag,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartMode {
    /// `T₁ = T_exp`, `Λ₁ = Λ_exp`.
    FromTExp,
    /// First iterate built from an initial potential guess.
    FromPotential(Potential),
}

/// How the diagonal estimate `D_k` is extracted from `T_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalRule {
    /// `D = 𝒟[𝒯⁻¹[T]]`, one extra inversion.
    Inverse,
    /// The diagonal `D` minimizing `‖T − D − DΓT‖₂`, `O(N_v²)`.
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Basic,
    Streamlined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub stop_ratio: f64,
    /// Threshold on `‖T − D − DΓT‖₂`; `None` means `10⁻⁶ ‖T₁‖₂`.
    pub stop_residual: Option<f64>,
    pub lambda_reg: f64,
    pub roughening: Roughening,
    pub constraint: Constraint,
    pub start_mode: StartMode,
    pub diagonal_rule: DiagonalRule,
    /// Evaluate `𝒯⁻¹[T_k]` for the diagonality ratio when the diagonal rule
    /// does not already produce it. Costs one inversion per iteration.
    pub track_diagonality: bool,
    pub engine: Engine,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            stop_ratio: 1e-2,
            stop_residual: None,
            lambda_reg: 0.0,
            roughening: Roughening::None,
            constraint: Constraint::None,
            start_mode: StartMode::FromTExp,
            diagonal_rule: DiagonalRule::LeastSquares,
            track_diagonality: true,
            engine: Engine::Streamlined,
        }
    }
}

impl SolverOptions {
    /// Options matching the literal basic cycle.
    pub fn basic() -> Self {
        Self {
            diagonal_rule: DiagonalRule::Inverse,
            engine: Engine::Basic,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_voxels: usize) -> Result<()> {
        let nonneg = |name: &str, x: f64| {
            if x >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidOptions(format!("{name} = {x} must be non-negative")))
            }
        };
        nonneg("stop_ratio", self.stop_ratio)?;
        nonneg("lambda_reg", self.lambda_reg)?;
        if let Some(r) = self.stop_residual {
            nonneg("stop_residual", r)?;
        }
        match self.roughening {
            Roughening::AbsoluteThreshold(t) => nonneg("roughening threshold", t)?,
            Roughening::KeepTop(m) if m == 0 || m > n_voxels => {
                return Err(Error::InvalidOptions(format!(
                    "keep-top-m needs 1 ≤ m ≤ {n_voxels}, got {m}"
                )))
            }
            _ => {}
        }
        if let StartMode::FromPotential(p) = &self.start_mode {
            if p.len() != n_voxels {
                return Err(Error::InvalidOptions(format!(
                    "initial potential has {} entries, expected {n_voxels}",
                    p.len()
                )));
            }
        }
        if self.engine == Engine::Basic && self.lambda_reg != 0.0 {
            return Err(Error::InvalidOptions(
                "the basic cycle has no regularized overwrite; use the streamlined engine".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMetrics {
    /// Iteration index, starting at 1.
    pub k: usize,
    /// `‖V − 𝒟V‖ / ‖𝒟V‖` for `V = 𝒯⁻¹[T_k]`, when evaluated.
    pub diagonality_ratio: Option<f64>,
    /// `‖T_k − D_k − D_k Γ T_k‖₂`.
    pub residual_tdd: f64,
    /// `‖A T_k B − Φ‖₂ / ‖Φ‖₂`.
    pub data_residual: f64,
    /// `‖D_k − υ_true‖₂ / ‖υ_true‖₂`.
    pub reconstruction_error: Option<f64>,
}

/// Iteration state. `t` is data-compatible and `lambda` tracks `Γ t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TState {
    /// Completed iterations.
    pub k: usize,
    pub t: CMatrix,
    pub lambda: CMatrix,
    /// Diagonal estimate from the most recent iteration.
    pub d: Potential,
    pub metrics: Vec<ConvergenceMetrics>,
    /// Indices where the least-squares diagonal fell back to `T_ii` in the
    /// most recent iteration.
    pub flagged: Vec<usize>,
    t1_norm: f64,
}

impl TState {
    /// `T₁` and `Λ₁` per the start mode.
    pub fn initial(problem: &Problem, options: &SolverOptions) -> Result<Self> {
        let nv = problem.ops().n_voxels();
        let (t, lambda, d) = match &options.start_mode {
            StartMode::FromTExp => (
                problem.t_exp().clone(),
                problem.lambda_exp().clone(),
                Potential::zeros(nv),
            ),
            StartMode::FromPotential(guess) => {
                let (tp, lp) = sparse_propagate(guess, &problem.ops().gamma, problem.counter())?;
                let inner = masked_inner(&tp, problem.cache());
                let t = overwrite_with_inner(&tp, problem.t_exp(), problem.cache().p_a(), &inner, problem.cache());
                let lambda = overwrite_with_inner(
                    &lp,
                    problem.lambda_exp(),
                    problem.cache().q_a(),
                    &inner,
                    problem.cache(),
                );
                (t, lambda, guess.clone())
            }
        };
        let t1_norm = t.norm();
        Ok(Self {
            k: 0,
            t,
            lambda,
            d,
            metrics: Vec::new(),
            flagged: Vec::new(),
            t1_norm,
        })
    }

    pub fn t1_norm(&self) -> f64 {
        self.t1_norm
    }

    pub fn last_metrics(&self) -> Option<&ConvergenceMetrics> {
        self.metrics.last()
    }
}

/// Output of [`fast_diag`].
#[derive(Debug, Clone, PartialEq)]
pub struct FastDiag {
    pub potential: Potential,
    /// Indices with a degenerate denominator; `D_ii = T_ii` there.
    pub degenerate: Vec<usize>,
}

/// Least-squares diagonal: for each row `i`,
/// `D_ii = [T_ii + Σ_j T_ij Λ̄_ij] / [1 + 2 Re Λ_ii + Σ_j |Λ_ij|²]`,
/// the exact minimizer of `‖T − D − DΛ‖₂` with `Λ = ΓT`.
pub fn fast_diag(t: &CMatrix, lambda: &CMatrix) -> FastDiag {
    let n = t.nrows();
    let mut values = CVector::zeros(n);
    let mut degenerate = Vec::new();
    for i in 0..n {
        let mut num = t[(i, i)];
        let mut lambda_sq = 0.0;
        for j in 0..n {
            let l = lambda[(i, j)];
            num += t[(i, j)] * l.conj();
            lambda_sq += l.norm_sqr();
        }
        let denom = 1.0 + 2.0 * lambda[(i, i)].re + lambda_sq;
        // ‖e_i + Λ_i·‖² computed by cancellation; below this it is noise
        let floor = 1e-14 * (1.0 + lambda_sq);
        if !(denom > floor) || !num.re.is_finite() || !num.im.is_finite() {
            degenerate.push(i);
            values[i] = t[(i, i)];
        } else {
            values[i] = num / denom;
        }
    }
    FastDiag {
        potential: Potential::from_values(values),
        degenerate,
    }
}

/// `Δ = ΓD̂`, `S = (I − Δ)⁻¹`; returns `(T′, Λ′) = (D̂S, S − I)`.
pub fn propagate(d: &Potential, gamma: &CMatrix, counter: &InversionCounter) -> Result<(CMatrix, CMatrix)> {
    let n = d.len();
    let delta = linalg::scale_cols(gamma, d.values());
    let (s, _) = linalg::invert(&(CMatrix::identity(n, n) - delta), RESOLVENT_CONDITION_CAP, counter)
        .map_err(|s| Error::SingularResolvent { condition: s.condition })?;
    let t_prime = linalg::scale_rows(d.values(), &s);
    let mut lambda_prime = s;
    for i in 0..n {
        lambda_prime[(i, i)] -= ONE;
    }
    Ok((t_prime, lambda_prime))
}

/// [`propagate`] restricted to the support of `d`: one `m × m` inversion
/// for `m` active voxels. Rows and columns of `T′` outside the support are
/// zero; `Λ′` is nonzero only in the active columns.
pub fn sparse_propagate(d: &Potential, gamma: &CMatrix, counter: &InversionCounter) -> Result<(CMatrix, CMatrix)> {
    let n = d.len();
    let active = d.active_indices();
    let m = active.len();
    let d_a = CVector::from_fn(m, |p, _| d.values()[active[p]]);
    let gamma_aa = CMatrix::from_fn(m, m, |p, q| gamma[(active[p], active[q])]);
    let resolvent = CMatrix::identity(m, m) - linalg::scale_cols(&gamma_aa, &d_a);
    let (s_aa, _) = linalg::invert(&resolvent, RESOLVENT_CONDITION_CAP, counter)
        .map_err(|s| Error::SingularResolvent { condition: s.condition })?;
    let t_aa = linalg::scale_rows(&d_a, &s_aa);
    let gamma_cols = CMatrix::from_fn(n, m, |i, q| gamma[(i, active[q])]);
    let lambda_cols = gamma_cols * &t_aa;
    let mut t_prime = CMatrix::zeros(n, n);
    let mut lambda_prime = CMatrix::zeros(n, n);
    for (q, &j) in active.iter().enumerate() {
        for (p, &i) in active.iter().enumerate() {
            t_prime[(i, j)] = t_aa[(p, q)];
        }
        lambda_prime.set_column(j, &lambda_cols.column(q));
    }
    Ok((t_prime, lambda_prime))
}

/// `P_A* T′ P_B`, the `M_A × M_B` block shared by both updates.
pub fn masked_inner(t_prime: &CMatrix, cache: &SvdCache) -> CMatrix {
    cache.p_a().ad_mul(t_prime) * cache.p_b()
}

fn overwrite_with_inner(
    x_prime: &CMatrix,
    x_exp: &CMatrix,
    left: &CMatrix,
    inner: &CMatrix,
    cache: &SvdCache,
) -> CMatrix {
    let mut out = x_prime + x_exp;
    out -= left * inner * cache.p_b().adjoint();
    out
}

/// `T_next = T′ + T_exp − P_A (P_A* T′ P_B) P_B*`.
pub fn fast_overwrite(t_prime: &CMatrix, t_exp: &CMatrix, cache: &SvdCache) -> CMatrix {
    let inner = masked_inner(t_prime, cache);
    overwrite_with_inner(t_prime, t_exp, cache.p_a(), &inner, cache)
}

/// `Λ_next = Λ′ + Λ_exp − Q_A (P_A* T′ P_B) P_B*`.
pub fn update_lambda(lambda_prime: &CMatrix, lambda_exp: &CMatrix, t_prime: &CMatrix, cache: &SvdCache) -> CMatrix {
    let inner = masked_inner(t_prime, cache);
    overwrite_with_inner(lambda_prime, lambda_exp, cache.q_a(), &inner, cache)
}

/// Overwrite with Tikhonov-style damping of the diagonal:
/// `T_next = T′ − λ² 𝒟[T′] + T_exp − P_A (P_A* T′ P_B) P_B*`.
///
/// The companion `Λ` update subtracts `λ² Γ 𝒟[T′]`, which is what keeps
/// `Λ_next = Γ T_next` exact.
pub fn regularized_overwrite(
    t_prime: &CMatrix,
    lambda_prime: &CMatrix,
    problem: &Problem,
    lambda_reg: f64,
) -> (CMatrix, CMatrix) {
    let cache = problem.cache();
    let inner = masked_inner(t_prime, cache);
    let mut t_next = overwrite_with_inner(t_prime, problem.t_exp(), cache.p_a(), &inner, cache);
    let mut lambda_next = overwrite_with_inner(lambda_prime, problem.lambda_exp(), cache.q_a(), &inner, cache);
    if lambda_reg != 0.0 {
        let l2 = lambda_reg * lambda_reg;
        let diag = t_prime.diagonal();
        for i in 0..diag.len() {
            t_next[(i, i)] -= diag[i] * l2;
        }
        lambda_next -= linalg::scale_cols(&problem.ops().gamma, &diag) * c64(l2, 0.0);
    }
    (t_next, lambda_next)
}

pub fn roughen(d: &Potential, policy: &Roughening) -> Potential {
    let mut values = d.values().clone();
    match *policy {
        Roughening::None => return d.clone(),
        Roughening::AbsoluteThreshold(t) => {
            for z in values.iter_mut() {
                if z.norm() < t {
                    *z = ZERO;
                }
            }
        }
        Roughening::KeepTop(m) => {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&i, &j| {
                values[j]
                    .norm()
                    .partial_cmp(&values[i].norm())
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(i.cmp(&j))
            });
            for &i in order.iter().skip(m) {
                values[i] = ZERO;
            }
        }
    }
    restrict(values, d.support())
}

fn restrict(values: CVector, support: &[bool]) -> Potential {
    Potential::with_support(values, support.to_vec())
        .expect("support length unchanged")
        .prune()
}

pub fn apply_constraints(d: &Potential, constraint: Constraint) -> Potential {
    let clamp: fn(C64) -> C64 = match constraint {
        Constraint::None => return d.clone(),
        Constraint::NonnegReal => |z| c64(z.re.max(0.0), z.im),
        Constraint::NonnegImag => |z| c64(z.re, z.im.max(0.0)),
    };
    restrict(d.values().map(clamp), d.support())
}

fn refine_diagonal(d: Potential, options: &SolverOptions) -> Potential {
    apply_constraints(&roughen(&d, &options.roughening), options.constraint)
}

fn metrics_for(
    problem: &Problem,
    k: usize,
    t: &CMatrix,
    lambda: &CMatrix,
    d: &Potential,
    diagonality: Option<f64>,
) -> ConvergenceMetrics {
    let mut tdd = t - linalg::scale_rows(d.values(), lambda);
    for i in 0..d.len() {
        tdd[(i, i)] -= d.values()[i];
    }
    let ops = problem.ops();
    let predicted = &ops.a * t * &ops.b;
    let data_residual = linalg::relative_error(&predicted, problem.phi());
    let reconstruction_error = problem
        .ground_truth()
        .map(|truth| linalg::relative_error_vec(d.values(), truth.values()));
    ConvergenceMetrics {
        k,
        diagonality_ratio: diagonality,
        residual_tdd: tdd.norm(),
        data_residual,
        reconstruction_error,
    }
}

/// Diagonal estimate from `T_k` and, when available, `𝒯⁻¹[T_k]`'s ratio.
fn extract_diagonal(
    state: &TState,
    lambda: &CMatrix,
    problem: &Problem,
    options: &SolverOptions,
) -> Result<(Potential, Vec<usize>, Option<f64>)> {
    let gamma = &problem.ops().gamma;
    let counter = problem.counter();
    match options.diagonal_rule {
        DiagonalRule::Inverse => {
            let v = v_of_t(&TMatrix::<RealSpace>::new(state.t.clone()), gamma, counter)?;
            Ok((diag_of(&v), Vec::new(), Some(diagonality_ratio(&v))))
        }
        DiagonalRule::LeastSquares => {
            let fd = fast_diag(&state.t, lambda);
            let ratio = if options.track_diagonality {
                Some(
                    v_of_t(&TMatrix::<RealSpace>::new(state.t.clone()), gamma, counter)
                        .map(|v| diagonality_ratio(&v))
                        .unwrap_or(f64::INFINITY),
                )
            } else {
                None
            };
            Ok((fd.potential, fd.degenerate, ratio))
        }
    }
}

/// One literal pass of the six-step cycle.
pub fn basic_cycle_step(state: &TState, problem: &Problem, options: &SolverOptions) -> Result<TState> {
    if options.lambda_reg != 0.0 {
        return Err(Error::InvalidOptions(
            "the basic cycle has no regularized overwrite; use the streamlined engine".into(),
        ));
    }
    if state.k >= options.max_iterations {
        return Ok(state.clone());
    }
    let gamma = &problem.ops().gamma;
    let cache = problem.cache();
    // step 1 is the identity here: the state keeps T_k in real space
    let lambda = gamma * &state.t;
    let (d, flagged, ratio) = extract_diagonal(state, &lambda, problem, options)?;
    let d = refine_diagonal(d, options);
    let metrics = metrics_for(problem, state.k + 1, &state.t, &lambda, &d, ratio);
    let t_prime = tmatrix::t_of_v(&d.to_matrix(), gamma, problem.counter())?;
    let t_tilde = enforce_data(&rotate(&t_prime, cache), problem.t_exp_tilde(), cache);
    let t_next = rotate_inv(&t_tilde, cache).into_entries();
    let lambda_next = gamma * &t_next;
    Ok(advance(state, t_next, lambda_next, d, flagged, metrics))
}

/// One iteration of the streamlined cycle.
pub fn streamlined_step(state: &TState, problem: &Problem, options: &SolverOptions) -> Result<TState> {
    if state.k >= options.max_iterations {
        return Ok(state.clone());
    }
    let (d, flagged, ratio) = extract_diagonal(state, &state.lambda, problem, options)?;
    let d = refine_diagonal(d, options);
    let metrics = metrics_for(problem, state.k + 1, &state.t, &state.lambda, &d, ratio);
    let gamma = &problem.ops().gamma;
    let (t_prime, lambda_prime) = if d.active_count() < d.len() {
        sparse_propagate(&d, gamma, problem.counter())?
    } else {
        propagate(&d, gamma, problem.counter())?
    };
    let (t_next, lambda_next) = regularized_overwrite(&t_prime, &lambda_prime, problem, options.lambda_reg);
    Ok(advance(state, t_next, lambda_next, d, flagged, metrics))
}

fn advance(
    state: &TState,
    t: CMatrix,
    lambda: CMatrix,
    d: Potential,
    flagged: Vec<usize>,
    metrics: ConvergenceMetrics,
) -> TState {
    let mut history = state.metrics.clone();
    history.push(metrics);
    TState {
        k: state.k + 1,
        t,
        lambda,
        d,
        metrics: history,
        flagged,
        t1_norm: state.t1_norm,
    }
}

/// Dispatches on [`SolverOptions::engine`].
pub fn step(state: &TState, problem: &Problem, options: &SolverOptions) -> Result<TState> {
    match options.engine {
        Engine::Basic => basic_cycle_step(state, problem, options),
        Engine::Streamlined => streamlined_step(state, problem, options),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    StopRatio,
    StopResidual,
    MaxIterations,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::StopRatio => "stop_ratio",
            Self::StopResidual => "stop_residual",
            Self::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub potential: Potential,
    pub metrics: Vec<ConvergenceMetrics>,
    pub termination: Termination,
    pub state: TState,
}

/// Iterates until either stopping criterion fires or the iteration budget
/// is spent. Non-convergence is a termination reason, not an error.
pub fn run(problem: &Problem, options: &SolverOptions) -> Result<ReconstructionResult> {
    options.validate(problem.ops().n_voxels())?;
    let mut state = TState::initial(problem, options)?;
    let stop_residual = options.stop_residual.unwrap_or(1e-6 * state.t1_norm());
    let mut termination = Termination::MaxIterations;
    while state.k < options.max_iterations {
        state = step(&state, problem, options)?;
        let m = state.last_metrics().expect("step appends metrics");
        if m.diagonality_ratio.is_some_and(|r| r < options.stop_ratio) {
            termination = Termination::StopRatio;
            break;
        }
        if m.residual_tdd < stop_residual {
            termination = Termination::StopResidual;
            break;
        }
    }
    Ok(ReconstructionResult {
        potential: state.d.clone(),
        metrics: state.metrics.clone(),
        termination,
        state,
    })
}

/// Builds the problem with the default threshold policy and runs it.
pub fn reconstruct(
    ops: &OperatorSet,
    phi: &CMatrix,
    options: &SolverOptions,
    ground_truth: Option<&Potential>,
) -> Result<ReconstructionResult> {
    let mut problem = Problem::from_operators(ops.clone(), phi.clone(), EpsilonPolicy::default())?;
    if let Some(truth) = ground_truth {
        problem = problem.with_ground_truth(truth.clone())?;
    }
    run(&problem, options)
}
