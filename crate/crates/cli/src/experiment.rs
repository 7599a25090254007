//! Running configured experiments and comparisons, and writing their outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use biharm_core::analysis::{compare_runs, level_report, ConvergenceReport, Norm, Quantity, RunDifference};
use biharm_core::assembly::{assemble_load, assemble_stokes_rhs_analytic};
use biharm_core::mesh::{Mesh, MeshHierarchy, PolygonDomain};
use biharm_core::solvers::{
    run_psp, run_sp, solve_stokes_with, stokes_spaces, BiharmonicRun, PipelineOptions, PoissonSolver,
};
use biharm_core::source::{build_f_integral, AnalyticSource, Construction};
use biharm_core::space::{FeSpace, Field, SpaceKind};

use crate::config::{ExperimentConfig, ForceSpec, Pipeline};

/// Wall time in seconds of the steps a pipeline ran on one level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LevelTiming {
    pub level: usize,
    pub poisson1: Option<f64>,
    pub stokes: Option<f64>,
    pub poisson2: Option<f64>,
}

impl LevelTiming {
    pub fn total(&self) -> f64 {
        [self.poisson1, self.stokes, self.poisson2].iter().flatten().sum()
    }
}

/// Everything one κ column produced.
#[derive(Debug, Clone)]
pub struct Column {
    pub kappa: f64,
    /// One report per (quantity, norm) in config order; empty if fewer than two levels solved.
    pub reports: Vec<ConvergenceReport>,
    pub timings: Vec<LevelTiming>,
    /// Why the column stopped early.
    pub error: Option<String>,
    /// Finest solved mesh and fields, kept only when field dumps are requested.
    pub finest: Option<(Arc<Mesh>, Vec<(Quantity, Field)>)>,
}

impl Column {
    pub fn report(&self, quantity: Quantity, norm: Norm) -> Option<&ConvergenceReport> {
        self.reports
            .iter()
            .find(|r| r.quantity == quantity.name() && r.norm == norm)
    }

    fn timing(&self, level: usize) -> Option<&LevelTiming> {
        self.timings.iter().find(|t| t.level == level)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub columns: Vec<Column>,
}

impl ExperimentResult {
    pub fn column(&self, kappa: f64) -> Option<&Column> {
        self.columns.iter().find(|c| c.kappa == kappa)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(|c| c.error.is_some())
    }
}

struct LevelFields {
    level: usize,
    fields: BTreeMap<Quantity, Field>,
    timing: LevelTiming,
}

/// The analytic Stokes forcing selected by the config.
pub fn analytic_source(cfg: &ExperimentConfig, domain: &PolygonDomain) -> biharm_core::Result<AnalyticSource> {
    let construction = match cfg.source.force {
        ForceSpec::IntX => Construction::IntegralX,
        ForceSpec::IntY => Construction::IntegralY,
        ForceSpec::Blend(eta) => Construction::Blend(eta),
        ForceSpec::CurlW => {
            return Err(biharm_core::Error::InvalidParameter(
                "curl_w has no analytic forcing".into(),
            ))
        }
    };
    let f = &cfg.source.f;
    build_f_integral(f.to_fn(), &f.antiderivatives(), construction, cfg.source.c1, cfg.source.c2, domain)
}

fn options(cfg: &ExperimentConfig, first_level: usize) -> PipelineOptions {
    PipelineOptions {
        first_level,
        stokes_method: cfg.stokes_method,
        ..Default::default()
    }
}

/// Solves the finest level of `h`.
fn solve_level(
    cfg: &ExperimentConfig,
    h: &MeshHierarchy,
    source: Option<&AnalyticSource>,
) -> biharm_core::Result<LevelFields> {
    let level = h.levels.len() - 1;
    let mesh = h.finest().clone();
    let f = cfg.source.f.to_fn();
    let mut fields = BTreeMap::new();
    let mut timing = LevelTiming {
        level,
        ..Default::default()
    };
    match cfg.algorithm {
        Pipeline::Sp | Pipeline::Psp => {
            let run = if cfg.algorithm == Pipeline::Sp {
                run_sp(h, source.expect("sp needs an analytic source"), cfg.k, options(cfg, level))?
            } else {
                run_psp(h, &*f, cfg.k, options(cfg, level))?
            };
            let rec = run.levels.into_iter().next().expect("one level solved");
            timing.poisson1 = rec.timing.poisson1;
            timing.stokes = Some(rec.timing.stokes);
            timing.poisson2 = Some(rec.timing.poisson2);
            if let Some(w) = rec.w {
                fields.insert(Quantity::W, w);
            }
            fields.insert(Quantity::Phi, rec.phi);
            fields.insert(Quantity::U, rec.u);
            fields.insert(Quantity::P, rec.p);
        }
        Pipeline::StokesOnly => {
            let t0 = Instant::now();
            let (vs, ps) = stokes_spaces(mesh, cfg.k)?;
            let force = &source.expect("stokes_only needs an analytic source").force;
            let rhs = assemble_stokes_rhs_analytic(&vs, &**force, None);
            let st = solve_stokes_with(&vs, &ps, &rhs, cfg.stokes_method)?;
            timing.stokes = Some(t0.elapsed().as_secs_f64());
            fields.insert(Quantity::U, st.u);
            fields.insert(Quantity::P, st.p);
        }
        Pipeline::PoissonOnly => {
            let t0 = Instant::now();
            let solver = PoissonSolver::new(Arc::new(FeSpace::new(mesh, cfg.k, SpaceKind::Lagrange)?))?;
            let w = solver.solve(&assemble_load(&solver.space, &*f, None))?;
            timing.poisson1 = Some(t0.elapsed().as_secs_f64());
            fields.insert(Quantity::W, w);
        }
    }
    Ok(LevelFields { level, fields, timing })
}

/// Runs one κ column up to the configured level, stopping at the first failure.
pub fn run_column(cfg: &ExperimentConfig, kappa: f64, progress: bool) -> Column {
    let mut column = Column {
        kappa,
        reports: Vec::new(),
        timings: Vec::new(),
        error: None,
        finest: None,
    };
    let mut h = match cfg.hierarchy(kappa) {
        Ok(h) => h,
        Err(e) => {
            column.error = Some(e.to_string());
            return column;
        }
    };
    let source = match cfg.algorithm {
        Pipeline::Sp | Pipeline::StokesOnly => match analytic_source(cfg, &h.domain) {
            Ok(s) => Some(s),
            Err(e) => {
                column.error = Some(e.to_string());
                return column;
            }
        },
        _ => None,
    };
    let mut solved: Vec<LevelFields> = Vec::new();
    for level in cfg.first_level..=cfg.levels {
        let step = h.refine_to(level).and_then(|_| solve_level(cfg, &h, source.as_ref()));
        match step {
            Ok(l) => {
                if progress {
                    eprintln!(
                        "{}: kappa {kappa} level {level} solved in {:.2} s",
                        cfg.name,
                        l.timing.total()
                    );
                }
                column.timings.push(l.timing);
                solved.push(l);
            }
            Err(e) => {
                column.error = Some(format!("level {level}: {e}"));
                break;
            }
        }
    }
    if solved.len() >= 2 {
        for &q in &cfg.quantities {
            let fields: Vec<(usize, &Field)> = solved.iter().map(|l| (l.level, &l.fields[&q])).collect();
            for &n in &cfg.norms {
                match level_report(&h, q.name(), n, &fields) {
                    Ok(r) => column.reports.push(r),
                    Err(e) => {
                        column.error.get_or_insert_with(|| format!("{} {n}: {e}", q.name()));
                    }
                }
            }
        }
    }
    if cfg.dump_fields {
        if let Some(last) = solved.pop() {
            let mesh = h.levels[last.level].clone();
            column.finest = Some((mesh, last.fields.into_iter().collect()));
        }
    }
    column
}

/// Runs every κ column, `cfg.jobs` at a time; results keep the config's κ order.
pub fn run_experiment(cfg: &ExperimentConfig, progress: bool) -> ExperimentResult {
    let n = cfg.kappas.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Column>>> = Mutex::new(vec![None; n]);
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let column = run_column(cfg, cfg.kappas[i], progress);
                slots.lock().unwrap()[i] = Some(column);
            });
        }
    });
    let columns = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|c| c.expect("every column ran"))
        .collect();
    ExperimentResult { columns }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `quantity,norm,kappa,level,diff,rate,seconds` rows of one quantity. Rates are
/// labelled by the finest level they involve; missing levels get empty cells.
pub fn quantity_csv(cfg: &ExperimentConfig, result: &ExperimentResult, quantity: Quantity) -> String {
    let mut out = String::from("quantity,norm,kappa,level,diff,rate,seconds\n");
    for &norm in &cfg.norms {
        for col in &result.columns {
            let report = col.report(quantity, norm);
            for level in cfg.first_level + 1..=cfg.levels {
                let diff = report.and_then(|r| r.diff_at(level));
                let rate = report.and_then(|r| r.rate_at(level));
                let seconds = cfg
                    .timing
                    .then(|| col.timing(level).map(LevelTiming::total))
                    .flatten();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    quantity.name(),
                    norm.name(),
                    col.kappa,
                    level,
                    opt(diff),
                    opt(rate),
                    opt(seconds)
                );
            }
        }
    }
    out
}

/// `kappa,level,poisson1,stokes,poisson2,total` per solved level.
pub fn timing_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("kappa,level,poisson1,stokes,poisson2,total\n");
    for col in &result.columns {
        for t in &col.timings {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                col.kappa,
                t.level,
                opt(t.poisson1),
                opt(t.stokes),
                opt(t.poisson2),
                t.total()
            );
        }
    }
    out
}

fn table_header(out: &mut String, kappas: &[f64]) {
    out.push_str("| j |");
    for k in kappas {
        let _ = write!(out, " κ = {k} |");
    }
    out.push_str("\n|---:|");
    for _ in kappas {
        out.push_str("---:|");
    }
    out.push('\n');
}

/// Rate and difference tables with κ columns and level rows.
pub fn markdown(cfg: &ExperimentConfig, result: &ExperimentResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", cfg.name);
    let _ = writeln!(
        out,
        "- domain `{}`, algorithm `{}`, k = {}, levels {}..={}",
        cfg.domain.label(),
        cfg.algorithm.name(),
        cfg.k,
        cfg.first_level,
        cfg.levels
    );
    let _ = writeln!(out, "- f = `{}`, F = `{}`, seed = {}\n", cfg.source.f_text, cfg.source.force, cfg.seed);
    out.push_str(
        "Row j holds d_j = ‖v_j − v_{j−1}‖ and the rate log2(d_j / d_{j+1}), the row labelling of \
         published rate tables. The CSV files label each rate by the finest level it involves, so \
         CSV level j + 1 carries the rate of row j. Absent cells are `--`.\n\n",
    );
    let kappas: Vec<f64> = result.columns.iter().map(|c| c.kappa).collect();
    out.push_str("## Rates\n\n");
    for &q in &cfg.quantities {
        for &n in &cfg.norms {
            let _ = writeln!(out, "### {}, {}\n", q.name(), n.name());
            table_header(&mut out, &kappas);
            for j in cfg.first_level + 1..cfg.levels {
                let _ = write!(out, "| {j} |");
                for col in &result.columns {
                    match col.report(q, n).and_then(|r| r.indicator_at(j)) {
                        Some(r) => {
                            let _ = write!(out, " {r:.2} |");
                        }
                        None => out.push_str(" -- |"),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
    }
    out.push_str("## Differences\n\n");
    for &q in &cfg.quantities {
        for &n in &cfg.norms {
            let _ = writeln!(out, "### {}, {}\n", q.name(), n.name());
            table_header(&mut out, &kappas);
            for j in cfg.first_level + 1..=cfg.levels {
                let _ = write!(out, "| {j} |");
                for col in &result.columns {
                    match col.report(q, n).and_then(|r| r.diff_at(j)) {
                        Some(d) => {
                            let _ = write!(out, " {d:.5e} |");
                        }
                        None => out.push_str(" -- |"),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
    }
    let failures: Vec<&Column> = result.failures().collect();
    if !failures.is_empty() {
        out.push_str("## Failures\n\n");
        for col in failures {
            let _ = writeln!(out, "- κ = {}: {}", col.kappa, col.error.as_deref().unwrap_or(""));
        }
    }
    out
}

fn write_file(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> std::io::Result<()> {
    std::fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

/// Writes CSVs, the markdown tables and the optional timing and field dumps.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult) -> std::io::Result<Vec<PathBuf>> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &q in &cfg.quantities {
        write_file(dir.join(format!("{}.csv", q.name())), &quantity_csv(cfg, result, q), &mut written)?;
    }
    write_file(dir.join("rates.md"), &markdown(cfg, result), &mut written)?;
    if cfg.timing {
        write_file(dir.join("timing.csv"), &timing_csv(result), &mut written)?;
    }
    for col in &result.columns {
        if let Some((mesh, fields)) = &col.finest {
            let sub = dir.join("fields").join(format!("kappa_{}", col.kappa));
            std::fs::create_dir_all(&sub)?;
            write_file(sub.join("mesh.txt"), &mesh.to_text(), &mut written)?;
            for (q, f) in fields {
                write_file(sub.join(format!("{}.txt", q.name())), &f.to_text(), &mut written)?;
            }
        }
    }
    Ok(written)
}

/// Checks that two configs differ at most in algorithm and forcing.
pub fn check_comparable(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<(), String> {
    for cfg in [a, b] {
        if !matches!(cfg.algorithm, Pipeline::Sp | Pipeline::Psp) {
            return Err(format!("{}: only sp and psp runs can be compared", cfg.name));
        }
    }
    let mismatch = |what: &str| Err(format!("configs differ in {what}"));
    if a.domain != b.domain {
        return mismatch("domain");
    }
    if a.k != b.k {
        return mismatch("k");
    }
    if a.kappas != b.kappas {
        return mismatch("kappas");
    }
    if (a.first_level, a.levels) != (b.first_level, b.levels) {
        return mismatch("levels");
    }
    if a.source.f != b.source.f {
        return mismatch("source.f");
    }
    Ok(())
}

/// Per-level differences between two runs of one κ column.
#[derive(Debug, Clone)]
pub struct ComparisonColumn {
    pub kappa: f64,
    pub rows: Vec<RunDifference>,
    pub error: Option<String>,
}

fn full_run(cfg: &ExperimentConfig, h: &MeshHierarchy) -> biharm_core::Result<BiharmonicRun> {
    let opts = options(cfg, cfg.first_level);
    match cfg.algorithm {
        Pipeline::Sp => run_sp(h, &analytic_source(cfg, &h.domain)?, cfg.k, opts),
        _ => run_psp(h, &*cfg.source.f.to_fn(), cfg.k, opts),
    }
}

fn compare_column(a: &ExperimentConfig, b: &ExperimentConfig, kappa: f64) -> biharm_core::Result<Vec<RunDifference>> {
    let mut h = a.hierarchy(kappa)?;
    h.refine_to(a.levels)?;
    let ra = full_run(a, &h)?;
    let rb = full_run(b, &h)?;
    (a.first_level..=a.levels)
        .map(|level| compare_runs(&h, &ra, &rb, level))
        .collect()
}

/// Runs both configs on shared hierarchies and measures their per-level differences.
pub fn run_comparison(
    a: &ExperimentConfig,
    b: &ExperimentConfig,
    progress: bool,
) -> Result<Vec<ComparisonColumn>, String> {
    check_comparable(a, b)?;
    Ok(a.kappas
        .iter()
        .map(|&kappa| {
            if progress {
                eprintln!("comparing {} and {} at kappa {kappa}", a.name, b.name);
            }
            match compare_column(a, b, kappa) {
                Ok(rows) => ComparisonColumn {
                    kappa,
                    rows,
                    error: None,
                },
                Err(e) => ComparisonColumn {
                    kappa,
                    rows: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

pub fn comparison_csv(columns: &[ComparisonColumn]) -> String {
    let mut out = String::from("kappa,level,phi_h1,phi_l2,u_h1,u_l2,p_l2\n");
    for col in columns {
        for r in &col.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                col.kappa, r.level, r.phi_h1, r.phi_l2, r.u_h1, r.u_l2, r.p_l2
            );
        }
    }
    out
}

pub fn comparison_markdown(a: &ExperimentConfig, b: &ExperimentConfig, columns: &[ComparisonColumn]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} vs {}\n", a.name, b.name);
    let _ = writeln!(
        out,
        "- A: algorithm `{}`, F = `{}`\n- B: algorithm `{}`, F = `{}`\n",
        a.algorithm.name(),
        a.source.force,
        b.algorithm.name(),
        b.source.force
    );
    for col in columns {
        let _ = writeln!(out, "## κ = {}\n", col.kappa);
        if let Some(e) = &col.error {
            let _ = writeln!(out, "failed: {e}\n");
            continue;
        }
        out.push_str("| j | ‖φ_A − φ_B‖_H1 | ‖φ_A − φ_B‖_L2 | ‖u_A − u_B‖_H1 | ‖u_A − u_B‖_L2 | ‖p_A − p_B‖_L2 |\n");
        out.push_str("|---:|---:|---:|---:|---:|---:|\n");
        for r in &col.rows {
            let _ = writeln!(
                out,
                "| {} | {:.5e} | {:.5e} | {:.5e} | {:.5e} | {:.5e} |",
                r.level, r.phi_h1, r.phi_l2, r.u_h1, r.u_l2, r.p_l2
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_comparison(
    dir: &Path,
    a: &ExperimentConfig,
    b: &ExperimentConfig,
    columns: &[ComparisonColumn],
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write_file(dir.join("compare.csv"), &comparison_csv(columns), &mut written)?;
    write_file(dir.join("compare.md"), &comparison_markdown(a, b, columns), &mut written)?;
    Ok(written)
}
