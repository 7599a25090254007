//! Experiment configuration files (TOML).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use biharm_core::analysis::{Norm, Quantity};
use biharm_core::corner::GradingRule;
use biharm_core::mesh::{builtin_domain, read_polygon_mesh, Mesh, MeshHierarchy, PolygonDomain};
use biharm_core::solvers::StokesMethod;
use biharm_core::source::Poly2;
use serde::Deserialize;

/// Shown by `biharm run --help`.
pub const SCHEMA: &str = r#"Configuration schema (TOML, all relative paths resolve against the working directory):

  name          = "lshape_sp_k2"   # optional, defaults to the file stem
  domain        = "lshape"         # builtin: square | lshape | convex_11pi12
  mesh          = "poly.txt"       # or a level-0 polygon mesh file (exclusive with domain)
  algorithm     = "sp"             # sp | psp | stokes_only | poisson_only
  k             = 2                # 1..=3; Stokes uses Mini for k = 1, Taylor-Hood otherwise
  kappas        = [0.1, 0.5]       # grading factors in (0, 0.5] applied at flagged corners
  levels        = 7                # finest level j >= 3
  first_level   = 0                # levels first_level..=j are solved (at most j - 2)
  seed          = 0                # recorded in the outputs; no step is randomized
  jobs          = 1                # kappa columns solved concurrently
  timing        = false            # fill the `seconds` CSV column (breaks byte-identical reruns)
  stokes_method = "auto"           # auto | direct | schur

  [source]
  f  = "const:1"                   # const:<c> | poly:<c@i,j; c@i,j; ...> meaning sum c x^i y^j
  F  = "int_x"                     # int_x | int_y | blend:<eta> | curl_w (curl_w only with psp)
  c1 = 0.0                         # lower limit of the x antiderivative
  c2 = 0.0                         # lower limit of the y antiderivative

  [report]
  quantities = ["phi", "u", "p"]   # subset of phi | w | u | p available for the algorithm
  norms      = ["H1", "L2"]        # subset of H1 | H1semi | L2 | Linf

  [outputs]
  dir    = "results/lshape_sp_k2" # defaults to results/<name>
  fields = false                   # dump the finest-level fields and mesh per kappa
"#;

/// A configuration problem, naming the offending field where there is one.
#[derive(Debug)]
pub enum ConfigError {
    Io { path: PathBuf, source: std::io::Error },
    Syntax(String),
    Field { field: &'static str, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            ConfigError::Syntax(m) => write!(f, "invalid config: {m}"),
            ConfigError::Field { field, message } => write!(f, "config field `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn field_err(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    domain: Option<String>,
    mesh: Option<PathBuf>,
    algorithm: String,
    k: usize,
    kappas: Vec<f64>,
    levels: usize,
    #[serde(default)]
    first_level: usize,
    #[serde(default)]
    seed: u64,
    jobs: Option<usize>,
    #[serde(default)]
    timing: bool,
    stokes_method: Option<String>,
    #[serde(default)]
    source: RawSource,
    #[serde(default)]
    report: RawReport,
    #[serde(default)]
    outputs: RawOutputs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    f: Option<String>,
    #[serde(rename = "F")]
    force: Option<String>,
    c1: Option<f64>,
    c2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    quantities: Option<Vec<String>>,
    norms: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutputs {
    dir: Option<PathBuf>,
    #[serde(default)]
    fields: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Builtin(String),
    MeshFile(PathBuf),
}

impl DomainSpec {
    pub fn load(&self) -> biharm_core::Result<(PolygonDomain, Mesh)> {
        match self {
            DomainSpec::Builtin(name) => builtin_domain(name),
            DomainSpec::MeshFile(path) => read_polygon_mesh(&std::fs::read_to_string(path)?),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DomainSpec::Builtin(name) => name.clone(),
            DomainSpec::MeshFile(path) => path.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Sp,
    Psp,
    StokesOnly,
    PoissonOnly,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Sp => "sp",
            Pipeline::Psp => "psp",
            Pipeline::StokesOnly => "stokes_only",
            Pipeline::PoissonOnly => "poisson_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sp" => Pipeline::Sp,
            "psp" => Pipeline::Psp,
            "stokes_only" => Pipeline::StokesOnly,
            "poisson_only" => Pipeline::PoissonOnly,
            _ => return None,
        })
    }

    /// Quantities this pipeline produces, in report order.
    pub fn quantities(self) -> &'static [Quantity] {
        match self {
            Pipeline::Sp => &[Quantity::Phi, Quantity::U, Quantity::P],
            Pipeline::Psp => &[Quantity::Phi, Quantity::W, Quantity::U, Quantity::P],
            Pipeline::StokesOnly => &[Quantity::U, Quantity::P],
            Pipeline::PoissonOnly => &[Quantity::W],
        }
    }

    fn default_quantities(self) -> Vec<Quantity> {
        match self {
            Pipeline::Psp => vec![Quantity::Phi, Quantity::U, Quantity::P],
            other => other.quantities().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForceSpec {
    IntX,
    IntY,
    Blend(f64),
    CurlW,
}

impl ForceSpec {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "int_x" => Some(ForceSpec::IntX),
            "int_y" => Some(ForceSpec::IntY),
            "curl_w" => Some(ForceSpec::CurlW),
            other => {
                let eta: f64 = other.strip_prefix("blend:")?.trim().parse().ok()?;
                (0.0..=1.0).contains(&eta).then_some(ForceSpec::Blend(eta))
            }
        }
    }
}

impl fmt::Display for ForceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForceSpec::IntX => write!(f, "int_x"),
            ForceSpec::IntY => write!(f, "int_y"),
            ForceSpec::Blend(eta) => write!(f, "blend:{eta}"),
            ForceSpec::CurlW => write!(f, "curl_w"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    /// The source text as written, e.g. `const:1`.
    pub f_text: String,
    pub f: Poly2,
    pub force: ForceSpec,
    pub c1: f64,
    pub c2: f64,
}

/// Parses `const:<c>` or `poly:<terms>`.
pub fn parse_load(s: &str) -> Option<Poly2> {
    let s = s.trim();
    if let Some(c) = s.strip_prefix("const:") {
        return c.trim().parse().ok().map(Poly2::constant);
    }
    Poly2::parse(s.strip_prefix("poly:")?).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: DomainSpec,
    pub algorithm: Pipeline,
    pub k: usize,
    pub kappas: Vec<f64>,
    pub levels: usize,
    pub first_level: usize,
    pub source: SourceSpec,
    pub quantities: Vec<Quantity>,
    pub norms: Vec<Norm>,
    pub out_dir: PathBuf,
    pub dump_fields: bool,
    pub seed: u64,
    pub timing: bool,
    pub jobs: usize,
    pub stokes_method: StokesMethod,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into());
        Self::from_toml(&text, &stem)
    }

    /// Parses and validates; `default_name` is used when the file sets no `name`.
    pub fn from_toml(text: &str, default_name: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
        let name = raw.name.unwrap_or_else(|| default_name.to_string());
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(field_err("name", "must be a non-empty file name"));
        }

        let domain = match (raw.domain, raw.mesh) {
            (Some(d), None) => DomainSpec::Builtin(d),
            (None, Some(m)) => DomainSpec::MeshFile(m),
            (Some(_), Some(_)) => return Err(field_err("domain", "give either `domain` or `mesh`, not both")),
            (None, None) => return Err(field_err("domain", "missing; give a builtin `domain` or a `mesh` file")),
        };
        let (polygon, _) = domain.load().map_err(|e| field_err("domain", e.to_string()))?;

        let algorithm = Pipeline::parse(&raw.algorithm)
            .ok_or_else(|| field_err("algorithm", format!("unknown `{}`", raw.algorithm)))?;
        if !(1..=3).contains(&raw.k) {
            return Err(field_err("k", format!("{} not in 1..=3", raw.k)));
        }
        if raw.kappas.is_empty() {
            return Err(field_err("kappas", "empty"));
        }
        for (i, &kappa) in raw.kappas.iter().enumerate() {
            if !(kappa > 0.0 && kappa <= 0.5) {
                return Err(field_err("kappas", format!("{kappa} not in (0, 0.5]")));
            }
            if raw.kappas[..i].contains(&kappa) {
                return Err(field_err("kappas", format!("{kappa} listed twice")));
            }
            if polygon.graded_corners.is_empty() && kappa != 0.5 {
                return Err(field_err("kappas", "the domain has no graded corners, only 0.5 applies"));
            }
        }
        if raw.levels < 3 {
            return Err(field_err("levels", format!("{} < 3 leaves no rate to compute", raw.levels)));
        }
        if raw.first_level + 2 > raw.levels {
            return Err(field_err(
                "first_level",
                format!("{} leaves fewer than three solved levels", raw.first_level),
            ));
        }
        let jobs = raw.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(field_err("jobs", "must be at least 1"));
        }
        let stokes_method = match raw.stokes_method {
            None => StokesMethod::Auto,
            Some(s) => StokesMethod::parse(&s).map_err(|e| field_err("stokes_method", e.to_string()))?,
        };

        let f_text = raw.source.f.unwrap_or_else(|| "const:1".into());
        let f = parse_load(&f_text).ok_or_else(|| {
            field_err("source.f", format!("`{f_text}` is neither const:<c> nor poly:<c@i,j; ...>"))
        })?;
        let force = match raw.source.force {
            None if algorithm == Pipeline::Psp => ForceSpec::CurlW,
            None => ForceSpec::IntX,
            Some(s) => ForceSpec::parse(&s).ok_or_else(|| field_err("source.F", format!("unknown `{s}`")))?,
        };
        match (algorithm, force) {
            (Pipeline::Psp, ForceSpec::CurlW) | (Pipeline::PoissonOnly, _) => {}
            (Pipeline::Psp, _) => return Err(field_err("source.F", "psp always uses curl_w")),
            (_, ForceSpec::CurlW) => {
                return Err(field_err("source.F", "curl_w needs algorithm = \"psp\""))
            }
            _ => {}
        }
        let source = SourceSpec {
            f_text,
            f,
            force,
            c1: raw.source.c1.unwrap_or(0.0),
            c2: raw.source.c2.unwrap_or(0.0),
        };

        let quantities = match raw.report.quantities {
            None => algorithm.default_quantities(),
            Some(list) => {
                let mut out = Vec::new();
                for q in &list {
                    let q = Quantity::parse(q).map_err(|e| field_err("report.quantities", e.to_string()))?;
                    if !algorithm.quantities().contains(&q) {
                        return Err(field_err(
                            "report.quantities",
                            format!("{} is not produced by {}", q.name(), algorithm.name()),
                        ));
                    }
                    if !out.contains(&q) {
                        out.push(q);
                    }
                }
                out
            }
        };
        if quantities.is_empty() {
            return Err(field_err("report.quantities", "empty"));
        }
        let norms = match raw.report.norms {
            None => vec![Norm::H1, Norm::L2],
            Some(list) => {
                let mut out = Vec::new();
                for n in &list {
                    let n = Norm::parse(n).map_err(|e| field_err("report.norms", e.to_string()))?;
                    if !out.contains(&n) {
                        out.push(n);
                    }
                }
                out
            }
        };
        if norms.is_empty() {
            return Err(field_err("report.norms", "empty"));
        }

        let out_dir = raw.outputs.dir.unwrap_or_else(|| Path::new("results").join(&name));
        Ok(Self {
            name,
            domain,
            algorithm,
            k: raw.k,
            kappas: raw.kappas,
            levels: raw.levels,
            first_level: raw.first_level,
            source,
            quantities,
            norms,
            out_dir,
            dump_fields: raw.outputs.fields,
            seed: raw.seed,
            timing: raw.timing,
            jobs,
            stokes_method,
        })
    }

    /// The level-0 hierarchy with grading factor `kappa` at every flagged corner.
    pub fn hierarchy(&self, kappa: f64) -> biharm_core::Result<MeshHierarchy> {
        let (domain, mesh) = self.domain.load()?;
        let rule = GradingRule::from_kappa(kappa)?;
        let rules: BTreeMap<usize, GradingRule> = domain.graded_corners.iter().map(|&c| (c, rule)).collect();
        MeshHierarchy::new(domain, mesh, rules)
    }
}
