//! Run configuration: one flat key space shared by config files and flags.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use dctmc_core::linalg::c64;
use dctmc_core::linear::TransformKind;
use dctmc_core::operators::{Geometry, GeometryConfig, Layout, PhantomShape, PhantomSpec, SelfTerm, GEOMETRY_KEYS};
use dctmc_core::solver::{Constraint, DiagonalRule, Engine, Roughening, SolverOptions};
use dctmc_core::EpsilonPolicy;

use crate::error::{invalid, Result};
use crate::kv;

/// Environment variable holding the default thread count.
pub const THREADS_ENV: &str = "DCTMC_THREADS";

/// Every accepted key with a one-line description. Flags are derived from
/// this table (`grid_size` becomes `--grid-size`).
pub const KEYS: &[(&str, &str)] = &[
    ("grid_size", "voxels per cube edge L"),
    ("pitch", "voxel pitch h"),
    ("wavenumber", "real part of the background wavenumber"),
    ("wavenumber_im", "imaginary part of the background wavenumber"),
    ("standoff", "source and detector standoff, in pitches"),
    ("source_standoff", "source plane standoff, in pitches"),
    ("detector_standoff", "detector plane standoff, in pitches"),
    ("layout", "transmission | reflection"),
    ("kernel", "helmholtz3d"),
    ("self_term", "zero | equivalent-sphere"),
    ("max_kh", "upper bound on |k| h"),
    ("phantom", "empty | point | block | two-inclusion | sparse"),
    ("phantom_voxel", "voxel index of a point phantom"),
    ("phantom_fraction", "volume fraction of a block phantom"),
    ("phantom_count", "voxel count of a sparse phantom"),
    ("contrast", "real part of the phantom contrast"),
    ("contrast_im", "imaginary part of the phantom contrast"),
    ("contrast_cap", "largest admissible |contrast|"),
    ("phantom_seed", "seed for random phantom placement"),
    ("noise_level", "relative noise level on Phi"),
    ("noise_seed", "seed for the noise draw"),
    ("max_iterations", "iteration budget"),
    ("stop_ratio", "stop when the diagonality ratio drops below this"),
    (
        "stop_residual",
        "stop when ||T - D - D Gamma T|| drops below this, or auto",
    ),
    ("lambda_reg", "regularization strength lambda"),
    ("roughening", "none | threshold | keep-top"),
    ("roughening_threshold", "modulus below which D entries are zeroed"),
    ("roughening_keep", "number of D entries kept"),
    ("constraint", "none | nonneg-real | nonneg-imag"),
    ("diagonal_rule", "least-squares | inverse"),
    ("engine", "streamlined | basic"),
    ("track_diagonality", "evaluate the diagonality ratio every iteration"),
    ("start_mode", "t-exp | linear | file"),
    ("initial_potential", "potential file used by start_mode = file"),
    ("transform", "born | rytov | meanfield, for start_mode = linear"),
    ("guess_lambda", "regularization of the linear initial guess"),
    ("epsilon_rel", "relative singular-value threshold"),
    ("epsilon_abs", "absolute singular-value threshold"),
    ("dataset", "dataset directory"),
    ("output", "output directory"),
    ("verify_stacked_route", "run the stacked-system pseudoinverse checks"),
    ("verify_gamma_zero", "run the Gamma = 0 reduction check"),
    ("verify_shortcut", "run the shortcut-equivalence check"),
    ("verify_spectrum", "run the W spectrum check"),
    ("verify_lambda_tracking", "run the Lambda-tracking check"),
    ("verify_symmetry", "run the Gamma symmetry check"),
    ("verify_steps", "iterations used by the iterative checks"),
    ("threads", "worker threads (default from DCTMC_THREADS, else 1)"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    TExp,
    Linear,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyToggles {
    pub stacked_route: bool,
    pub gamma_zero: bool,
    pub shortcut: bool,
    pub spectrum: bool,
    pub lambda_tracking: bool,
    pub symmetry: bool,
    pub steps: usize,
}

impl Default for VerifyToggles {
    fn default() -> Self {
        Self {
            stacked_route: true,
            gamma_zero: true,
            shortcut: true,
            spectrum: true,
            lambda_tracking: true,
            symmetry: true,
            steps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub phantom: PhantomSpec,
    pub noise_level: f64,
    pub noise_seed: u64,
    /// `start_mode` is left at its default; see [`RunConfig::start`].
    pub solver: SolverOptions,
    pub start: StartSpec,
    pub transform: TransformKind,
    pub guess_lambda: f64,
    /// `None` reuses a cached decomposition, or the library default.
    pub epsilon: Option<EpsilonPolicy>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub verify: VerifyToggles,
    pub threads: usize,
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse `{value}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(key, format!("expected true or false, got `{value}`"))),
    }
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            invalid(key, format!("`{value}` is not one of {}", names.join(", ")))
        })
}

/// Keys consumed so far; whatever remains at the end is unknown.
struct Pairs<'a> {
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Pairs<'a> {
    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.map.remove(key)
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.take(key).map(|v| num(key, v)).transpose()
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        Ok(self.take(key).map(|v| boolean(key, v)).transpose()?.unwrap_or(default))
    }

    /// Rejects a shape parameter that does not belong to the chosen shape.
    fn forbid(&mut self, key: &str, owner: &str) -> Result<()> {
        match self.take(key) {
            Some(_) => Err(invalid(key, format!("only applies to {owner}"))),
            None => Ok(()),
        }
    }
}

impl RunConfig {
    /// Builds the configuration from merged key-value pairs. `threads_env`
    /// is the value of [`THREADS_ENV`], if set.
    pub fn from_map(map: &BTreeMap<String, String>, threads_env: Option<&str>) -> Result<Self> {
        let mut pairs = Pairs {
            map: map.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
        };

        let geometry_pairs: Vec<(&str, &str)> = GEOMETRY_KEYS
            .iter()
            .filter_map(|&k| pairs.take(k).map(|v| (k, v)))
            .collect();
        let geometry = GeometryConfig::from_pairs(geometry_pairs)?;
        Geometry::new(geometry.clone())?;

        let shape = match pairs.take("phantom").unwrap_or("empty") {
            "empty" => PhantomShape::Empty,
            "point" => PhantomShape::Point {
                voxel: pairs.take_parsed("phantom_voxel")?,
            },
            "block" => PhantomShape::Block {
                fraction: pairs.take_parsed("phantom_fraction")?.unwrap_or(0.125),
            },
            "two-inclusion" => PhantomShape::TwoInclusion,
            "sparse" => PhantomShape::Sparse {
                count: pairs.take_parsed("phantom_count")?.unwrap_or(3),
            },
            other => return Err(invalid("phantom", format!("unknown phantom `{other}`"))),
        };
        pairs.forbid("phantom_voxel", "phantom = point")?;
        pairs.forbid("phantom_fraction", "phantom = block")?;
        pairs.forbid("phantom_count", "phantom = sparse")?;
        let defaults = PhantomSpec::default();
        let phantom = PhantomSpec {
            shape,
            contrast: c64(
                pairs.take_parsed("contrast")?.unwrap_or(defaults.contrast.re),
                pairs.take_parsed("contrast_im")?.unwrap_or(defaults.contrast.im),
            ),
            seed: pairs.take_parsed("phantom_seed")?.unwrap_or(defaults.seed),
            contrast_cap: pairs.take_parsed("contrast_cap")?.unwrap_or(defaults.contrast_cap),
        };

        let noise_level = pairs.take_parsed::<f64>("noise_level")?.unwrap_or(0.0);
        if noise_level.is_nan() || noise_level < 0.0 {
            return Err(invalid("noise_level", "must be non-negative"));
        }
        let noise_seed = pairs.take_parsed("noise_seed")?.unwrap_or(0);

        let mut solver = SolverOptions::default();
        if let Some(v) = pairs.take_parsed("max_iterations")? {
            solver.max_iterations = v;
        }
        if let Some(v) = pairs.take_parsed("stop_ratio")? {
            solver.stop_ratio = v;
        }
        solver.stop_residual = match pairs.take("stop_residual") {
            None | Some("auto") => None,
            Some(v) => Some(num("stop_residual", v)?),
        };
        if let Some(v) = pairs.take_parsed("lambda_reg")? {
            solver.lambda_reg = v;
        }
        solver.roughening = match pairs.take("roughening").unwrap_or("none") {
            "none" => Roughening::None,
            "threshold" => Roughening::AbsoluteThreshold(
                pairs
                    .take_parsed("roughening_threshold")?
                    .ok_or_else(|| invalid("roughening_threshold", "required by roughening = threshold"))?,
            ),
            "keep-top" => Roughening::KeepTop(
                pairs
                    .take_parsed("roughening_keep")?
                    .ok_or_else(|| invalid("roughening_keep", "required by roughening = keep-top"))?,
            ),
            other => return Err(invalid("roughening", format!("unknown policy `{other}`"))),
        };
        pairs.forbid("roughening_threshold", "roughening = threshold")?;
        pairs.forbid("roughening_keep", "roughening = keep-top")?;
        if let Some(v) = pairs.take("constraint") {
            solver.constraint = choice(
                "constraint",
                v,
                &[
                    ("none", Constraint::None),
                    ("nonneg-real", Constraint::NonnegReal),
                    ("nonneg-imag", Constraint::NonnegImag),
                ],
            )?;
        }
        if let Some(v) = pairs.take("diagonal_rule") {
            solver.diagonal_rule = choice(
                "diagonal_rule",
                v,
                &[
                    ("least-squares", DiagonalRule::LeastSquares),
                    ("inverse", DiagonalRule::Inverse),
                ],
            )?;
        }
        if let Some(v) = pairs.take("engine") {
            solver.engine = choice(
                "engine",
                v,
                &[("streamlined", Engine::Streamlined), ("basic", Engine::Basic)],
            )?;
        }
        solver.track_diagonality = pairs.take_bool("track_diagonality", solver.track_diagonality)?;
        // the voxel count is only known once a dataset is loaded
        solver.validate(usize::MAX)?;

        let start = match pairs.take("start_mode").unwrap_or("t-exp") {
            "t-exp" => StartSpec::TExp,
            "linear" => StartSpec::Linear,
            "file" => {
                let path = PathBuf::from(
                    pairs
                        .take("initial_potential")
                        .ok_or_else(|| invalid("initial_potential", "required by start_mode = file"))?,
                );
                if !path.is_file() {
                    return Err(invalid(
                        "initial_potential",
                        format!("{} does not exist", path.display()),
                    ));
                }
                StartSpec::File(path)
            }
            other => return Err(invalid("start_mode", format!("unknown start mode `{other}`"))),
        };
        pairs.forbid("initial_potential", "start_mode = file")?;
        let transform = match pairs.take("transform") {
            None => TransformKind::Born,
            Some(v) => {
                TransformKind::parse(v).ok_or_else(|| invalid("transform", format!("unknown transform `{v}`")))?
            }
        };
        let guess_lambda = pairs.take_parsed::<f64>("guess_lambda")?.unwrap_or(0.0);
        if guess_lambda.is_nan() || guess_lambda < 0.0 {
            return Err(invalid("guess_lambda", "must be non-negative"));
        }

        let epsilon = match (
            pairs.take_parsed::<f64>("epsilon_rel")?,
            pairs.take_parsed::<f64>("epsilon_abs")?,
        ) {
            (Some(_), Some(_)) => return Err(invalid("epsilon_abs", "conflicts with epsilon_rel")),
            (Some(r), None) => Some(EpsilonPolicy::Relative(r)),
            (None, Some(a)) => Some(EpsilonPolicy::Absolute(a)),
            (None, None) => None,
        };
        if let Some(EpsilonPolicy::Relative(x) | EpsilonPolicy::Absolute(x)) = epsilon {
            if x.is_nan() || x < 0.0 {
                return Err(invalid("epsilon", "must be non-negative"));
            }
        }

        let dataset = pairs.take("dataset").map(PathBuf::from);
        let output = pairs.take("output").map(PathBuf::from);

        let d = VerifyToggles::default();
        let verify = VerifyToggles {
            stacked_route: pairs.take_bool("verify_stacked_route", d.stacked_route)?,
            gamma_zero: pairs.take_bool("verify_gamma_zero", d.gamma_zero)?,
            shortcut: pairs.take_bool("verify_shortcut", d.shortcut)?,
            spectrum: pairs.take_bool("verify_spectrum", d.spectrum)?,
            lambda_tracking: pairs.take_bool("verify_lambda_tracking", d.lambda_tracking)?,
            symmetry: pairs.take_bool("verify_symmetry", d.symmetry)?,
            steps: pairs.take_parsed("verify_steps")?.unwrap_or(d.steps),
        };
        if verify.steps == 0 {
            return Err(invalid("verify_steps", "must be at least 1"));
        }

        let threads = match pairs.take("threads") {
            Some(v) => num("threads", v)?,
            None => match threads_env {
                Some(v) => num(THREADS_ENV, v.trim())?,
                None => 1,
            },
        };
        if threads == 0 {
            return Err(invalid("threads", "must be at least 1"));
        }

        if let Some((&key, _)) = pairs.map.iter().next() {
            return Err(invalid(key, "unknown key"));
        }
        Ok(Self {
            geometry,
            phantom,
            noise_level,
            noise_seed,
            solver,
            start,
            transform,
            guess_lambda,
            epsilon,
            dataset,
            output,
            verify,
            threads,
        })
    }

    /// Loads `file` (if any), then applies `overrides` on top.
    pub fn load(
        file: Option<&std::path::Path>,
        overrides: BTreeMap<String, String>,
        threads_env: Option<&str>,
    ) -> Result<Self> {
        let mut map = match file {
            Some(path) => kv::read(path)?,
            None => BTreeMap::new(),
        };
        map.extend(overrides);
        Self::from_map(&map, threads_env)
    }

    /// Fully resolved key-value snapshot; feeding it back through
    /// [`RunConfig::from_map`] reproduces `self`.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let g = &self.geometry;
        let mut out: Vec<(&'static str, String)> = vec![
            ("grid_size", g.grid_size.to_string()),
            ("pitch", format!("{:?}", g.pitch)),
            ("wavenumber", format!("{:?}", g.wavenumber.re)),
            ("wavenumber_im", format!("{:?}", g.wavenumber.im)),
            ("source_standoff", format!("{:?}", g.source_standoff)),
            ("detector_standoff", format!("{:?}", g.detector_standoff)),
            (
                "layout",
                match g.layout {
                    Layout::Transmission => "transmission",
                    Layout::Reflection => "reflection",
                }
                .into(),
            ),
            ("kernel", "helmholtz3d".into()),
            (
                "self_term",
                match g.self_term {
                    SelfTerm::Zero => "zero",
                    SelfTerm::EquivalentSphere => "equivalent-sphere",
                }
                .into(),
            ),
            ("max_kh", format!("{:?}", g.max_kh)),
        ];
        let p = &self.phantom;
        match &p.shape {
            PhantomShape::Empty => out.push(("phantom", "empty".into())),
            PhantomShape::Point { voxel } => {
                out.push(("phantom", "point".into()));
                if let Some(j) = voxel {
                    out.push(("phantom_voxel", j.to_string()));
                }
            }
            PhantomShape::Block { fraction } => {
                out.push(("phantom", "block".into()));
                out.push(("phantom_fraction", format!("{fraction:?}")));
            }
            PhantomShape::TwoInclusion => out.push(("phantom", "two-inclusion".into())),
            PhantomShape::Sparse { count } => {
                out.push(("phantom", "sparse".into()));
                out.push(("phantom_count", count.to_string()));
            }
        }
        out.extend([
            ("contrast", format!("{:?}", p.contrast.re)),
            ("contrast_im", format!("{:?}", p.contrast.im)),
            ("contrast_cap", format!("{:?}", p.contrast_cap)),
            ("phantom_seed", p.seed.to_string()),
            ("noise_level", format!("{:?}", self.noise_level)),
            ("noise_seed", self.noise_seed.to_string()),
        ]);
        let s = &self.solver;
        out.extend([
            ("max_iterations", s.max_iterations.to_string()),
            ("stop_ratio", format!("{:?}", s.stop_ratio)),
            (
                "stop_residual",
                s.stop_residual.map_or_else(|| "auto".into(), |r| format!("{r:?}")),
            ),
            ("lambda_reg", format!("{:?}", s.lambda_reg)),
        ]);
        match s.roughening {
            Roughening::None => out.push(("roughening", "none".into())),
            Roughening::AbsoluteThreshold(t) => {
                out.push(("roughening", "threshold".into()));
                out.push(("roughening_threshold", format!("{t:?}")));
            }
            Roughening::KeepTop(m) => {
                out.push(("roughening", "keep-top".into()));
                out.push(("roughening_keep", m.to_string()));
            }
        }
        out.extend([
            (
                "constraint",
                match s.constraint {
                    Constraint::None => "none",
                    Constraint::NonnegReal => "nonneg-real",
                    Constraint::NonnegImag => "nonneg-imag",
                }
                .into(),
            ),
            (
                "diagonal_rule",
                match s.diagonal_rule {
                    DiagonalRule::LeastSquares => "least-squares",
                    DiagonalRule::Inverse => "inverse",
                }
                .into(),
            ),
            (
                "engine",
                match s.engine {
                    Engine::Streamlined => "streamlined",
                    Engine::Basic => "basic",
                }
                .into(),
            ),
            ("track_diagonality", s.track_diagonality.to_string()),
        ]);
        match &self.start {
            StartSpec::TExp => out.push(("start_mode", "t-exp".into())),
            StartSpec::Linear => out.push(("start_mode", "linear".into())),
            StartSpec::File(path) => {
                out.push(("start_mode", "file".into()));
                out.push(("initial_potential", path.display().to_string()));
            }
        }
        out.push(("transform", self.transform.as_str().into()));
        out.push(("guess_lambda", format!("{:?}", self.guess_lambda)));
        match self.epsilon {
            Some(EpsilonPolicy::Relative(r)) => out.push(("epsilon_rel", format!("{r:?}"))),
            Some(EpsilonPolicy::Absolute(a)) => out.push(("epsilon_abs", format!("{a:?}"))),
            None => {}
        }
        if let Some(d) = &self.dataset {
            out.push(("dataset", d.display().to_string()));
        }
        if let Some(o) = &self.output {
            out.push(("output", o.display().to_string()));
        }
        let v = &self.verify;
        out.extend([
            ("verify_stacked_route", v.stacked_route.to_string()),
            ("verify_gamma_zero", v.gamma_zero.to_string()),
            ("verify_shortcut", v.shortcut.to_string()),
            ("verify_spectrum", v.spectrum.to_string()),
            ("verify_lambda_tracking", v.lambda_tracking.to_string()),
            ("verify_symmetry", v.symmetry.to_string()),
            ("verify_steps", v.steps.to_string()),
            ("threads", self.threads.to_string()),
        ]);
        out
    }

    /// Epsilon policy for a freshly computed decomposition.
    pub fn epsilon_or_default(&self) -> EpsilonPolicy {
        self.epsilon.unwrap_or_default()
    }
}
