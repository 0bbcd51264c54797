//! The four pipeline stages. Each reads only what the previous stage wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dctmc_core::linalg::{self, CMatrix};
use dctmc_core::linear::{self, build_w, gamma_zero_reduction_check, spectrum_check};
use dctmc_core::operators::{add_noise, forward_solve, make_phantom};
use dctmc_core::solver::{self, DiagonalRule, Engine, SolverOptions, StartMode, TState, Termination};
use dctmc_core::tmatrix::symmetry_defect;
use dctmc_core::{Geometry, Potential, Problem, SvdCache};

use crate::config::{RunConfig, StartSpec};
use crate::dataset::{self, cube_root, read_potential, write_potential, CONFIG_FILE, MANIFEST_FILE, PHANTOM_FILE};
use crate::error::{invalid, io_err, CliError, Result};
use crate::kv;
use crate::matrix_io::{format_pairs, write_atomic};

pub const POTENTIAL_FILE: &str = "potential.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const ERROR_TABLE_FILE: &str = "error_vs_iteration.csv";
pub const SLICE_TABLE_FILE: &str = "potential_slice.csv";

/// Largest voxel count the dense oracles in `verify` accept.
pub const ORACLE_VOXEL_LIMIT: usize = 216;

const METRIC_COLUMNS: [&str; 5] = [
    "k",
    "diagonality_ratio",
    "residual_tdd",
    "data_residual",
    "reconstruction_error",
];

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| invalid(key, "required by this command"))
}

fn seconds(start: Instant) -> String {
    format!("{:.6}", start.elapsed().as_secs_f64())
}

fn write_config_snapshot(dir: &Path, config: &RunConfig) -> Result<()> {
    write_atomic(&dir.join(CONFIG_FILE), format_pairs(config.to_pairs()).as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub dir: PathBuf,
    pub n_voxels: usize,
    pub phi_shape: (usize, usize),
    pub block: (usize, usize),
}

pub fn generate(config: &RunConfig) -> Result<GenerateSummary> {
    let dir = required(&config.output, "output")?;
    let t_ops = Instant::now();
    let geometry = Geometry::new(config.geometry.clone())?;
    let ops = geometry.sample_operators();
    let phantom = make_phantom(&config.phantom, &geometry)?;
    let time_ops = seconds(t_ops);

    let t_fwd = Instant::now();
    let phi = add_noise(&forward_solve(&phantom, &ops)?, config.noise_level, config.noise_seed)?;
    let time_fwd = seconds(t_fwd);

    let t_svd = Instant::now();
    let cache = SvdCache::new(&ops.a, &ops.b, &ops.gamma, config.epsilon_or_default())?;
    let time_svd = seconds(t_svd);

    dataset::create_dir(dir)?;
    dataset::write_operators(dir, &ops, &phi)?;
    write_potential(&dir.join(PHANTOM_FILE), &phantom)?;
    dataset::write_cache(&dir.join(dataset::SVD_DIR), &cache)?;
    write_config_snapshot(dir, config)?;
    let manifest = format_pairs([
        ("kind", "dataset".into()),
        ("version", dctmc_core::VERSION.into()),
        ("grid_size", geometry.grid_size().to_string()),
        ("n_voxels", ops.n_voxels().to_string()),
        ("n_detectors", ops.n_detectors().to_string()),
        ("n_sources", ops.n_sources().to_string()),
        ("m_a", cache.m_a().to_string()),
        ("m_b", cache.m_b().to_string()),
        ("epsilon", format!("{:?}", cache.epsilon())),
        ("phantom_active", phantom.active_count().to_string()),
        ("noise_level", format!("{:?}", config.noise_level)),
        ("threads", config.threads.to_string()),
        ("time_operators_s", time_ops),
        ("time_forward_s", time_fwd),
        ("time_svd_s", time_svd),
    ]);
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    Ok(GenerateSummary {
        dir: dir.to_path_buf(),
        n_voxels: ops.n_voxels(),
        phi_shape: phi.shape(),
        block: (cache.m_a(), cache.m_b()),
    })
}

/// The dataset's cached decomposition unless a threshold was requested or
/// the cache does not match the operators.
fn cache_for(config: &RunConfig, data: &mut dataset::Dataset) -> Result<SvdCache> {
    let ops = &data.ops;
    let fits = |c: &SvdCache| {
        (c.n_voxels(), c.n_detectors(), c.n_sources()) == (ops.n_voxels(), ops.n_detectors(), ops.n_sources())
    };
    match (config.epsilon, data.cache.take()) {
        (None, Some(cache)) if fits(&cache) => Ok(cache),
        (None, Some(_)) => Err(CliError::Format {
            path: PathBuf::from(dataset::SVD_DIR),
            line: 0,
            reason: "cached decomposition does not match the operators".into(),
        }),
        (policy, _) => Ok(SvdCache::new(&ops.a, &ops.b, &ops.gamma, policy.unwrap_or_default())?),
    }
}

fn metrics_csv(result: &solver::ReconstructionResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |source| CliError::Csv {
        path: PathBuf::from(METRICS_FILE),
        source,
    };
    w.write_record(METRIC_COLUMNS).map_err(fail)?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    for m in &result.metrics {
        w.write_record([
            m.k.to_string(),
            opt(m.diagonality_ratio),
            format!("{:e}", m.residual_tdd),
            format!("{:e}", m.data_residual),
            opt(m.reconstruction_error),
        ])
        .map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Io {
        path: PathBuf::from(METRICS_FILE),
        source: e.into_error(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructSummary {
    pub dir: PathBuf,
    pub termination: Termination,
    pub iterations: usize,
    pub guess_source: String,
}

pub fn reconstruct(config: &RunConfig) -> Result<ReconstructSummary> {
    let dataset_dir = required(&config.dataset, "dataset")?;
    let out = required(&config.output, "output")?;

    let t_load = Instant::now();
    let mut data = dataset::load(dataset_dir)?;
    let time_load = seconds(t_load);

    let t_svd = Instant::now();
    let cache = cache_for(config, &mut data)?;
    let time_svd = seconds(t_svd);

    let t_guess = Instant::now();
    let (start_mode, guess_source) = match &config.start {
        StartSpec::TExp => (StartMode::FromTExp, "t_exp".to_string()),
        StartSpec::Linear => {
            let guess =
                linear::linear_initial_guess(&data.ops, &data.phi, &cache, config.transform, config.guess_lambda)?;
            (
                StartMode::FromPotential(guess),
                format!("linear:{}", config.transform.as_str()),
            )
        }
        StartSpec::File(path) => (
            StartMode::FromPotential(read_potential(path)?),
            format!("file:{}", path.display()),
        ),
    };
    let time_guess = seconds(t_guess);

    let n_voxels = data.ops.n_voxels();
    let mut problem = Problem::new(data.ops, cache, data.phi)?;
    if let Some(truth) = &data.truth {
        problem = problem.with_ground_truth(truth.clone())?;
    }
    let options = SolverOptions {
        start_mode,
        ..config.solver.clone()
    };
    let t_solve = Instant::now();
    let result = solver::run(&problem, &options)?;
    let time_solve = seconds(t_solve);

    dataset::create_dir(out)?;
    write_potential(&out.join(POTENTIAL_FILE), &result.potential)?;
    write_atomic(&out.join(METRICS_FILE), &metrics_csv(&result)?)?;
    if let Some(truth) = &data.truth {
        write_potential(&out.join(GROUND_TRUTH_FILE), truth)?;
    }
    write_config_snapshot(out, config)?;

    let last = result.metrics.last();
    let fmt = |x: Option<f64>| x.map_or_else(|| "none".to_string(), |v| format!("{v:e}"));
    let mut manifest = vec![
        ("kind", "reconstruction".to_string()),
        ("version", dctmc_core::VERSION.into()),
        ("dataset", dataset_dir.display().to_string()),
        ("n_voxels", n_voxels.to_string()),
    ];
    if let Some(l) = cube_root(n_voxels) {
        manifest.push(("grid_size", l.to_string()));
    }
    manifest.extend([
        ("termination", result.termination.as_str().to_string()),
        ("iterations", result.state.k.to_string()),
        ("guess_source", guess_source.clone()),
        ("ground_truth", data.truth.is_some().to_string()),
        ("inversions", problem.counter().count().to_string()),
        ("threads", config.threads.to_string()),
        ("final_diagonality_ratio", fmt(last.and_then(|m| m.diagonality_ratio))),
        ("final_residual_tdd", fmt(last.map(|m| m.residual_tdd))),
        ("final_data_residual", fmt(last.map(|m| m.data_residual))),
        (
            "final_reconstruction_error",
            fmt(last.and_then(|m| m.reconstruction_error)),
        ),
        ("time_load_s", time_load),
        ("time_svd_s", time_svd),
        ("time_guess_s", time_guess),
        ("time_solve_s", time_solve),
    ]);
    // last, so a present manifest marks a complete result directory
    write_atomic(&out.join(MANIFEST_FILE), format_pairs(manifest).as_bytes())?;
    Ok(ReconstructSummary {
        dir: out.to_path_buf(),
        termination: result.termination,
        iterations: result.state.k,
        guess_source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub discrepancy: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: impl Into<String>, discrepancy: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            discrepancy,
            tolerance,
        }
    }

    /// NaN never passes.
    pub fn passed(&self) -> bool {
        self.discrepancy <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {}: discrepancy {:e}, tolerance {:e}\n",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.discrepancy,
                c.tolerance
            ));
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        out.push_str(&format!(
            "verify: {} passed, {failed} failed\n",
            self.checks.len() - failed
        ));
        out
    }
}

fn max_entrywise_relative(x: &CMatrix, reference: &CMatrix) -> f64 {
    let scale = reference.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diff = x
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn shortcut_check(problem: &Problem, steps: usize) -> Result<CheckResult> {
    let basic = SolverOptions {
        max_iterations: steps,
        track_diagonality: false,
        ..SolverOptions::basic()
    };
    let streamlined = SolverOptions {
        engine: Engine::Streamlined,
        diagonal_rule: DiagonalRule::Inverse,
        ..basic.clone()
    };
    let mut a = TState::initial(problem, &basic)?;
    let mut b = TState::initial(problem, &streamlined)?;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        a = solver::step(&a, problem, &basic)?;
        b = solver::step(&b, problem, &streamlined)?;
        worst = worst.max(max_entrywise_relative(&b.t, &a.t));
        worst = worst.max(max_entrywise_relative(&b.d.to_matrix(), &a.d.to_matrix()));
    }
    Ok(CheckResult::new("shortcut_equivalence", worst, 1e-8))
}

fn tracking_checks(problem: &Problem, steps: usize) -> Result<Vec<CheckResult>> {
    let options = SolverOptions {
        max_iterations: steps,
        track_diagonality: false,
        ..SolverOptions::default()
    };
    let gamma = &problem.ops().gamma;
    let gamma_norm = linalg::norm2(gamma);
    let defect = |s: &TState| {
        let scale = gamma_norm * linalg::norm2(&s.t);
        let d = linalg::norm2(&(&s.lambda - gamma * &s.t));
        if scale == 0.0 {
            d
        } else {
            d / scale
        }
    };
    let mut state = TState::initial(problem, &options)?;
    let mut worst = defect(&state);
    let before = problem.counter().count();
    for _ in 0..steps {
        state = solver::streamlined_step(&state, problem, &options)?;
        worst = worst.max(defect(&state));
    }
    let per_step = (problem.counter().count() - before) as f64 / steps as f64;
    Ok(vec![
        CheckResult::new("lambda_tracking", worst, 1e-8),
        CheckResult::new("inversions_per_iteration", (per_step - 1.0).abs(), 0.0),
    ])
}

pub fn verify(config: &RunConfig) -> Result<VerifyReport> {
    let dataset_dir = required(&config.dataset, "dataset")?;
    let mut data = dataset::load(dataset_dir)?;
    let nv = data.ops.n_voxels();
    if nv > ORACLE_VOXEL_LIMIT {
        return Err(dctmc_core::Error::OracleScaleExceeded(format!(
            "{nv} voxels exceed the oracle limit of {ORACLE_VOXEL_LIMIT}"
        ))
        .into());
    }
    let cache = cache_for(config, &mut data)?;
    let toggles = &config.verify;
    let mut report = VerifyReport::default();

    if toggles.symmetry {
        report.checks.push(CheckResult::new(
            "gamma_symmetry",
            symmetry_defect(&data.ops.gamma),
            1e-12,
        ));
    }
    if toggles.spectrum {
        let eig = spectrum_check(&build_w(&cache)).eigenvalues;
        let low = eig.first().map_or(0.0, |&e| -e);
        let high = eig.last().map_or(0.0, |&e| e - 1.0);
        report
            .checks
            .push(CheckResult::new("w_spectrum", low.max(high).max(0.0), 1e-10));
    }
    if toggles.stacked_route {
        let artifacts = linear::stacked_route_artifacts(&data.ops.a, &data.ops.b, &data.phi, &cache)?;
        for c in artifacts.checks {
            report.checks.push(CheckResult::new(
                format!("stacked_route.{}", c.name),
                c.discrepancy,
                c.tolerance,
            ));
        }
    }
    if toggles.gamma_zero {
        let r = gamma_zero_reduction_check(&data.ops, &data.phi, &cache, toggles.steps)?;
        report
            .checks
            .push(CheckResult::new("gamma_zero_reduction", r.discrepancy, 1e-10));
    }
    let problem = Problem::new(data.ops, cache, data.phi)?;
    if toggles.shortcut {
        report.checks.push(shortcut_check(&problem, toggles.steps)?);
    }
    if toggles.lambda_tracking {
        report.checks.extend(tracking_checks(&problem, toggles.steps)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub error_table: PathBuf,
    pub slice_table: PathBuf,
    pub has_ground_truth: bool,
}

struct MetricRow {
    k: String,
    diagonality_ratio: String,
    residual_tdd: String,
    data_residual: String,
    reconstruction_error: String,
}

fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    if !path.is_file() {
        return Err(CliError::MissingInput(path.to_path_buf()));
    }
    let fail = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(fail)?;
    let headers = reader.headers().map_err(fail)?.clone();
    if headers.iter().ne(METRIC_COLUMNS) {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected columns {}", METRIC_COLUMNS.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record.map_err(fail)?;
        rows.push(MetricRow {
            k: r[0].to_string(),
            diagonality_ratio: r[1].to_string(),
            residual_tdd: r[2].to_string(),
            data_residual: r[3].to_string(),
            reconstruction_error: r[4].to_string(),
        });
    }
    Ok(rows)
}

fn csv_bytes(rows: Vec<Vec<String>>, name: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).map_err(|source| CliError::Csv {
            path: PathBuf::from(name),
            source,
        })?;
    }
    w.into_inner().map_err(|e| CliError::Io {
        path: PathBuf::from(name),
        source: e.into_error(),
    })
}

/// Writes the error-vs-iteration table and one z-slice of the potential.
/// `slice_z` defaults to the middle layer.
pub fn report(result_dir: &Path, output: Option<&Path>, slice_z: Option<usize>) -> Result<ReportSummary> {
    let rows = read_metrics(&result_dir.join(METRICS_FILE))?;
    let potential = read_potential(&result_dir.join(POTENTIAL_FILE))?;
    let manifest = kv::read(&result_dir.join(MANIFEST_FILE))?;
    let truth = match read_potential(&result_dir.join(GROUND_TRUTH_FILE)) {
        Ok(t) => Some(t),
        Err(CliError::MissingInput(_)) => None,
        Err(e) => return Err(e),
    };
    let has_ground_truth = truth.is_some() && rows.iter().all(|r| !r.reconstruction_error.is_empty());

    let mut header: Vec<String> = ["k", "residual_tdd", "data_residual", "diagonality_ratio"]
        .map(String::from)
        .into();
    if has_ground_truth {
        header.push("reconstruction_error".into());
    }
    let mut table = vec![header];
    for r in &rows {
        let mut line = vec![
            r.k.clone(),
            r.residual_tdd.clone(),
            r.data_residual.clone(),
            r.diagonality_ratio.clone(),
        ];
        if has_ground_truth {
            line.push(r.reconstruction_error.clone());
        }
        table.push(line);
    }

    let n = potential.len();
    let l = manifest
        .get("grid_size")
        .and_then(|v| v.parse().ok())
        .or_else(|| cube_root(n))
        .filter(|l: &usize| l.pow(3) == n)
        .ok_or_else(|| invalid("grid_size", format!("{n} voxels do not form a cube")))?;
    let z = slice_z.unwrap_or(l / 2);
    if z >= l {
        return Err(invalid("slice_z", format!("layer {z} outside 0..{l}")));
    }
    let truth = truth.filter(|t: &Potential| t.len() == n);
    let mut slice_header: Vec<String> = ["x", "y", "z", "index", "re", "im"].map(String::from).into();
    if truth.is_some() {
        slice_header.extend(["truth_re".into(), "truth_im".into()]);
    }
    let mut slice = vec![slice_header];
    for y in 0..l {
        for x in 0..l {
            // x fastest, then y, then z
            let j = x + l * (y + l * z);
            let v = potential.values()[j];
            let mut line = vec![
                x.to_string(),
                y.to_string(),
                z.to_string(),
                j.to_string(),
                format!("{:e}", v.re),
                format!("{:e}", v.im),
            ];
            if let Some(t) = &truth {
                let tv = t.values()[j];
                line.extend([format!("{:e}", tv.re), format!("{:e}", tv.im)]);
            }
            slice.push(line);
        }
    }

    let out = output.unwrap_or(result_dir);
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let error_table = out.join(ERROR_TABLE_FILE);
    let slice_table = out.join(SLICE_TABLE_FILE);
    write_atomic(&error_table, &csv_bytes(table, ERROR_TABLE_FILE)?)?;
    write_atomic(&slice_table, &csv_bytes(slice, SLICE_TABLE_FILE)?)?;
    Ok(ReportSummary {
        error_table,
        slice_table,
        has_ground_truth,
    })
}
