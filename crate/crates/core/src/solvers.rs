//! Poisson and Stokes solves and the two decoupled biharmonic pipelines.
//!
//! With `F` satisfying `curl F = f`, the clamped plate solution is recovered from
//! the Stokes velocity `u` as the solution of `−Δφ = curl u`, `φ = 0` on `∂Ω`.
//! The P-S-P pipeline first builds `F_n = curl w_n` from a Poisson solve; the S-P
//! pipeline takes an analytic `F` directly.

use std::sync::Arc;
use std::time::Instant;

use crate::assembly::{
    apply_dirichlet, assemble_curl_rhs, assemble_divergence, assemble_load, assemble_mass,
    assemble_mean_vector, assemble_stiffness, assemble_stokes_rhs_analytic,
    assemble_stokes_rhs_discrete_curl,
};
use crate::error::{Error, Result};
use crate::linalg::{solve_saddle_point, SymmetricFactor, SOLVE_TOL};
use crate::mesh::{Mesh, MeshHierarchy, Point};
use crate::source::{validate_curl, AnalyticSource};
use crate::space::{FeSpace, Field, SpaceKind};
use crate::sparse::{dot, norm2, SparseMatrix};

pub use crate::linalg::solve_spd;

/// Relative tolerance of `|∫p|` against `‖p‖`.
pub const MEAN_TOL: f64 = 1e-10;
/// Relative tolerance of `max_q |(div u, q)|` against `‖u‖_{H1}`.
pub const DIVERGENCE_TOL: f64 = 1e-9;

/// Homogeneous Dirichlet Poisson problem on one space, factored once.
pub struct PoissonSolver {
    pub space: Arc<FeSpace>,
    /// Stiffness with boundary rows and columns replaced by the identity.
    reduced: SparseMatrix,
    factor: SymmetricFactor,
}

impl PoissonSolver {
    pub fn new(space: Arc<FeSpace>) -> Result<Self> {
        let zero = vec![0.0; space.ndof];
        let (reduced, _) = apply_dirichlet(&assemble_stiffness(&space), &zero, &space.boundary_dofs);
        let factor = SymmetricFactor::cholesky(&reduced)?;
        Ok(Self {
            space,
            reduced,
            factor,
        })
    }

    /// The Dirichlet-reduced stiffness matrix that was factored.
    pub fn matrix(&self) -> &SparseMatrix {
        &self.reduced
    }

    /// Solves `(∇φ, ∇ψ) = rhs(ψ)` for `φ` vanishing on the boundary.
    pub fn solve(&self, rhs: &[f64]) -> Result<Field> {
        let x = self.solve_raw(rhs)?;
        Field::new(self.space.clone(), 1, x)
    }

    /// Coefficient vector of the solution; boundary entries of `rhs` are ignored.
    pub fn solve_raw(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.space.ndof {
            return Err(Error::DimensionMismatch {
                expected: self.space.ndof,
                got: rhs.len(),
            });
        }
        let mut b = rhs.to_vec();
        for &d in &self.space.boundary_dofs {
            b[d] = 0.0;
        }
        let bnorm = norm2(&b);
        let mut x = vec![0.0; b.len()];
        if bnorm > 0.0 {
            x = self.factor.solve(&b);
            let res = |x: &[f64]| -> f64 {
                let ax = self.reduced.matvec(x);
                norm2(&ax.iter().zip(&b).map(|(a, c)| a - c).collect::<Vec<_>>()) / bnorm
            };
            let mut rel = res(&x);
            for _ in 0..2 {
                if rel < 1e-14 {
                    break;
                }
                let ax = self.reduced.matvec(&x);
                let r: Vec<f64> = b.iter().zip(&ax).map(|(c, a)| c - a).collect();
                let dx = self.factor.solve(&r);
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(u, v)| u + v).collect();
                let t = res(&trial);
                if t >= rel {
                    break;
                }
                x = trial;
                rel = t;
            }
            if rel > SOLVE_TOL {
                return Err(Error::Residual {
                    residual: rel,
                    tol: SOLVE_TOL,
                });
            }
        }
        for &d in &self.space.boundary_dofs {
            x[d] = 0.0;
        }
        Ok(x)
    }
}

/// Velocity and pressure spaces: Mini for `k = 1`, Taylor-Hood `P_k / P_{k−1}` above.
pub fn stokes_spaces(mesh: Arc<Mesh>, k: usize) -> Result<(Arc<FeSpace>, Arc<FeSpace>)> {
    match k {
        1 => Ok((
            Arc::new(FeSpace::mini(mesh.clone())?),
            Arc::new(FeSpace::new(mesh, 1, SpaceKind::Lagrange)?),
        )),
        2 | 3 => Ok((
            Arc::new(FeSpace::new(mesh.clone(), k, SpaceKind::Lagrange)?),
            Arc::new(FeSpace::new(mesh, k - 1, SpaceKind::Lagrange)?),
        )),
        _ => Err(Error::UnsupportedSpace {
            degree: k,
            kind: "stokes pair".into(),
        }),
    }
}

/// How the Stokes saddle-point system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StokesMethod {
    /// Direct below [`DIRECT_STOKES_LIMIT`] unknowns, Schur complement above.
    #[default]
    Auto,
    /// One sparse `LDL^T` of the system bordered by the pressure-mean multiplier.
    Direct,
    /// Conjugate gradients on the pressure Schur complement `B A⁻¹ Bᵀ`,
    /// preconditioned by the pressure mass matrix, with `A⁻¹` applied through one
    /// factored scalar Laplacian shared by both velocity components.
    SchurComplement,
}

impl StokesMethod {
    pub fn name(self) -> &'static str {
        match self {
            StokesMethod::Auto => "auto",
            StokesMethod::Direct => "direct",
            StokesMethod::SchurComplement => "schur",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(StokesMethod::Auto),
            "direct" => Ok(StokesMethod::Direct),
            "schur" => Ok(StokesMethod::SchurComplement),
            _ => Err(Error::InvalidParameter(format!("unknown Stokes method `{s}`"))),
        }
    }
}

/// Largest saddle-point system factored directly under [`StokesMethod::Auto`]; the
/// `LDL^T` factor of the next level up would not fit in a few gigabytes.
pub const DIRECT_STOKES_LIMIT: usize = 1_000_000;

/// Relative residual at which the Schur complement iteration stops.
const SCHUR_TOL: f64 = 1e-13;
const SCHUR_MAX_ITER: usize = 1000;

#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub u: Field,
    pub p: Field,
    /// Relative residual of the saddle-point system.
    pub residual_norm: f64,
    /// `|∫ p|`.
    pub pressure_mean: f64,
    /// `max_q |(div u, q)|`.
    pub divergence_residual: f64,
    /// Method actually used.
    pub method: StokesMethod,
}

/// Solves `(∇u, ∇v) − (p, div v) = rhs(v)`, `−(div u, q) = 0`, `∫p = 0` with `u = 0`
/// on the boundary. `rhs` holds both velocity components, first then second.
pub fn solve_stokes(vspace: &Arc<FeSpace>, pspace: &Arc<FeSpace>, rhs: &[f64]) -> Result<StokesSolution> {
    solve_stokes_with(vspace, pspace, rhs, StokesMethod::Auto)
}

pub fn solve_stokes_with(
    vspace: &Arc<FeSpace>,
    pspace: &Arc<FeSpace>,
    rhs: &[f64],
    method: StokesMethod,
) -> Result<StokesSolution> {
    let nv = vspace.ndof;
    let np = pspace.ndof;
    if rhs.len() != 2 * nv {
        return Err(Error::DimensionMismatch {
            expected: 2 * nv,
            got: rhs.len(),
        });
    }
    let method = match method {
        StokesMethod::Auto if 2 * nv + np + 1 > DIRECT_STOKES_LIMIT => StokesMethod::SchurComplement,
        StokesMethod::Auto => StokesMethod::Direct,
        m => m,
    };
    let b = assemble_divergence(vspace, pspace)?;
    let m = assemble_mean_vector(pspace);
    let mut f = rhs.to_vec();
    for i in 0..2 * nv {
        if vspace.is_boundary[i % nv] {
            f[i] = 0.0;
        }
    }
    let (uc, pc, residual_norm) = match method {
        StokesMethod::SchurComplement => stokes_schur(vspace, pspace, &b, &m, &f)?,
        _ => stokes_direct(vspace, &b, &m, &f)?,
    };

    let pressure_mean = dot(&m, &pc).abs();
    let mass = assemble_mass(pspace);
    let p_l2 = dot(&pc, &mass.matvec(&pc)).max(0.0).sqrt();
    let div = b.matvec(&uc);
    let divergence_residual = div.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // (∇u, ∇u) = rhs(u) − (p, div u) from the momentum rows
    let u_h1 = (dot(&uc, &f) - dot(&div, &pc)).max(0.0).sqrt();
    // ‖∇u‖ and ‖p‖ share units; a gradient forcing leaves u = 0 and only p to measure by
    let scale = u_h1.max(p_l2).max(f64::MIN_POSITIVE);
    if pressure_mean > MEAN_TOL * scale && pressure_mean > 1e-300 {
        return Err(Error::Residual {
            residual: pressure_mean / scale,
            tol: MEAN_TOL,
        });
    }
    if divergence_residual > DIVERGENCE_TOL * scale && divergence_residual > 1e-300 {
        return Err(Error::Residual {
            residual: divergence_residual / scale,
            tol: DIVERGENCE_TOL,
        });
    }
    Ok(StokesSolution {
        u: Field::new(vspace.clone(), 2, uc)?,
        p: Field::new(pspace.clone(), 1, pc)?,
        residual_norm,
        pressure_mean,
        divergence_residual,
        method,
    })
}

/// The bordered saddle-point system `[[A, Bᵀ, 0], [B, 0, m], [0, mᵀ, 0]]` with boundary
/// velocity rows and columns replaced by the identity.
fn stokes_direct(vspace: &Arc<FeSpace>, b: &SparseMatrix, m: &[f64], f: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let nv = vspace.ndof;
    let np = b.nrows;
    let fixed = |i: usize| vspace.is_boundary[i % nv];
    let n = 2 * nv + np + 1;
    let lam = 2 * nv + np;
    let stiff = assemble_stiffness(vspace);

    // CSR rows in column order: velocity block, then pressures, then the multiplier
    let kkt = {
        let bt = b.transpose();
        let cap = 2 * stiff.nnz() + 2 * b.nnz() + 3 * np + 1;
        let (mut row_ptr, mut col_idx, mut values) =
            (Vec::with_capacity(n + 1), Vec::with_capacity(cap), Vec::with_capacity(cap));
        row_ptr.push(0);
        for i in 0..2 * nv {
            if fixed(i) {
                col_idx.push(i);
                values.push(1.0);
            } else {
                let shift = (i / nv) * nv;
                let (cols, vals) = stiff.row(i % nv);
                for (&j, &v) in cols.iter().zip(vals) {
                    if !vspace.is_boundary[j] {
                        col_idx.push(shift + j);
                        values.push(v);
                    }
                }
                let (qs, vals) = bt.row(i);
                col_idx.extend(qs.iter().map(|q| 2 * nv + q));
                values.extend_from_slice(vals);
            }
            row_ptr.push(col_idx.len());
        }
        for q in 0..np {
            let (cols, vals) = b.row(q);
            for (&j, &v) in cols.iter().zip(vals) {
                if !fixed(j) {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            col_idx.extend([2 * nv + q, lam]);
            values.extend([0.0, m[q]]);
            row_ptr.push(col_idx.len());
        }
        col_idx.extend(2 * nv..=lam);
        values.extend(m.iter().copied().chain([0.0]));
        row_ptr.push(col_idx.len());
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_ptr,
            col_idx,
            values,
            symmetric: true,
        }
    };
    drop(stiff);

    let mut full_rhs = f.to_vec();
    full_rhs.resize(n, 0.0);
    let mut signs = vec![1i8; n];
    signs[2 * nv..lam].iter_mut().for_each(|s| *s = -1);
    signs[lam] = 0;
    let sol = solve_saddle_point(kkt, &full_rhs, &signs)?;
    let mut uc = sol.x[..2 * nv].to_vec();
    for (i, u) in uc.iter_mut().enumerate() {
        if fixed(i) {
            *u = 0.0;
        }
    }
    let pc = sol.x[2 * nv..lam].to_vec();
    Ok((uc, pc, sol.relative_residual))
}

/// Projected preconditioned conjugate gradients for `B A⁻¹ Bᵀ p = B A⁻¹ f` on
/// mean-zero pressures, then `u = A⁻¹ (f − Bᵀ p)`.
fn stokes_schur(
    vspace: &Arc<FeSpace>,
    pspace: &Arc<FeSpace>,
    b: &SparseMatrix,
    m: &[f64],
    f: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let nv = vspace.ndof;
    let np = pspace.ndof;
    let lap = PoissonSolver::new(vspace.clone())?;
    let bt = b.transpose();
    let ainv = |g: &[f64]| -> Result<Vec<f64>> {
        let mut out = lap.solve_raw(&g[..nv])?;
        out.extend(lap.solve_raw(&g[nv..])?);
        Ok(out)
    };
    let mass = assemble_mass(pspace);
    let mass_factor = SymmetricFactor::cholesky(&mass)?;
    let m_total: f64 = m.iter().sum();
    // M-orthogonal projection onto mean-zero pressures (M 1 = m)
    let project = |z: &mut Vec<f64>| {
        let c = dot(m, z) / m_total;
        z.iter_mut().for_each(|v| *v -= c);
    };
    let schur = |p: &[f64]| -> Result<Vec<f64>> { Ok(b.matvec(&ainv(&bt.matvec(p))?)) };

    let g = b.matvec(&ainv(f)?);
    let gnorm = norm2(&g);
    let mut p = vec![0.0; np];
    if gnorm > 0.0 {
        let mut r = g.clone();
        let mut z = mass_factor.solve(&r);
        project(&mut z);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let mut converged = false;
        for _ in 0..SCHUR_MAX_ITER {
            let sd = schur(&d)?;
            let alpha = rz / dot(&d, &sd);
            p.iter_mut().zip(&d).for_each(|(pi, di)| *pi += alpha * di);
            r.iter_mut().zip(&sd).for_each(|(ri, si)| *ri -= alpha * si);
            if norm2(&r) <= SCHUR_TOL * gnorm {
                converged = true;
                break;
            }
            z = mass_factor.solve(&r);
            project(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            d.iter_mut().zip(&z).for_each(|(di, zi)| *di = zi + beta * *di);
        }
        if !converged {
            return Err(Error::Residual {
                residual: norm2(&r) / gnorm,
                tol: SCHUR_TOL,
            });
        }
    }
    project(&mut p);
    let btp = bt.matvec(&p);
    let rhs_u: Vec<f64> = f.iter().zip(&btp).map(|(a, c)| a - c).collect();
    let u = ainv(&rhs_u)?;

    // residual of the saddle-point system without the multiplier row
    let au: Vec<f64> = {
        let mut v = lap.matrix().matvec(&u[..nv]);
        v.extend(lap.matrix().matvec(&u[nv..]));
        v
    };
    let mut res2 = 0.0;
    for i in 0..2 * nv {
        if !vspace.is_boundary[i % nv] {
            res2 += (au[i] + btp[i] - f[i]).powi(2);
        }
    }
    res2 += b.matvec(&u).iter().map(|v| v * v).sum::<f64>();
    let fnorm = norm2(f);
    let residual = if fnorm > 0.0 { res2.sqrt() / fnorm } else { 0.0 };
    if !(residual <= SOLVE_TOL) {
        return Err(Error::Residual {
            residual,
            tol: SOLVE_TOL,
        });
    }
    Ok((u, p, residual))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Stokes with analytic `F`, then Poisson.
    Sp,
    /// Poisson for `w`, Stokes with `curl w`, then Poisson.
    Psp,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sp => "sp",
            Algorithm::Psp => "psp",
        }
    }
}

/// Wall time in seconds of each pipeline step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTiming {
    pub poisson1: Option<f64>,
    pub stokes: f64,
    pub poisson2: f64,
}

impl StepTiming {
    pub fn total(&self) -> f64 {
        self.poisson1.unwrap_or(0.0) + self.stokes + self.poisson2
    }
}

#[derive(Debug, Clone)]
pub struct LevelRecord {
    pub level: usize,
    pub w: Option<Field>,
    pub u: Field,
    pub p: Field,
    pub phi: Field,
    pub timing: StepTiming,
}

#[derive(Debug, Clone)]
pub struct BiharmonicRun {
    pub algorithm: Algorithm,
    pub k: usize,
    pub levels: Vec<LevelRecord>,
}

impl BiharmonicRun {
    pub fn level(&self, j: usize) -> Option<&LevelRecord> {
        self.levels.iter().find(|r| r.level == j)
    }
}

/// Options shared by both pipelines.
#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    /// Quadrature order for analytic loads; defaults to the space degree plus two.
    pub load_order: Option<usize>,
    /// First level solved; every level up to the hierarchy's finest is solved.
    pub first_level: usize,
    pub stokes_method: StokesMethod,
}

fn final_poisson(solver: &PoissonSolver, u: &Field) -> Result<Field> {
    solver.solve(&assemble_curl_rhs(&solver.space, u)?)
}

fn check_levels(h: &MeshHierarchy, k: usize, opts: &PipelineOptions) -> Result<()> {
    if !(1..=3).contains(&k) {
        return Err(Error::UnsupportedSpace {
            degree: k,
            kind: "biharmonic pipeline".into(),
        });
    }
    if opts.first_level >= h.levels.len() {
        return Err(Error::InvalidParameter(format!(
            "first level {} beyond the finest level {}",
            opts.first_level,
            h.levels.len() - 1
        )));
    }
    Ok(())
}

/// Stokes with the analytic forcing, then `(∇φ, ∇ψ) = (curl u, ψ)`, on every level.
pub fn run_sp(h: &MeshHierarchy, source: &AnalyticSource, k: usize, opts: PipelineOptions) -> Result<BiharmonicRun> {
    check_levels(h, k, &opts)?;
    validate_curl(&*source.f, &*source.force, &h.domain)?;
    let mut levels = Vec::new();
    for (level, mesh) in h.levels.iter().enumerate().skip(opts.first_level) {
        let rec = (|| -> Result<LevelRecord> {
            let t0 = Instant::now();
            let (vs, ps) = stokes_spaces(mesh.clone(), k)?;
            let rhs = assemble_stokes_rhs_analytic(&vs, &*source.force, opts.load_order);
            let st = solve_stokes_with(&vs, &ps, &rhs, opts.stokes_method)?;
            let t1 = Instant::now();
            let solver = PoissonSolver::new(Arc::new(FeSpace::new(mesh.clone(), k, SpaceKind::Lagrange)?))?;
            let phi = final_poisson(&solver, &st.u)?;
            let t2 = Instant::now();
            Ok(LevelRecord {
                level,
                w: None,
                u: st.u,
                p: st.p,
                phi,
                timing: StepTiming {
                    poisson1: None,
                    stokes: (t1 - t0).as_secs_f64(),
                    poisson2: (t2 - t1).as_secs_f64(),
                },
            })
        })()
        .map_err(|e| e.at_level(level))?;
        levels.push(rec);
    }
    Ok(BiharmonicRun {
        algorithm: Algorithm::Sp,
        k,
        levels,
    })
}

/// Poisson for `w_n`, Stokes with `curl w_n`, then the final Poisson solve.
pub fn run_psp(h: &MeshHierarchy, f: &dyn Fn(Point) -> f64, k: usize, opts: PipelineOptions) -> Result<BiharmonicRun> {
    check_levels(h, k, &opts)?;
    let mut levels = Vec::new();
    for (level, mesh) in h.levels.iter().enumerate().skip(opts.first_level) {
        let rec = (|| -> Result<LevelRecord> {
            let t0 = Instant::now();
            let solver = PoissonSolver::new(Arc::new(FeSpace::new(mesh.clone(), k, SpaceKind::Lagrange)?))?;
            let w = solver.solve(&assemble_load(&solver.space, f, opts.load_order))?;
            let t1 = Instant::now();
            let (vs, ps) = stokes_spaces(mesh.clone(), k)?;
            let rhs = assemble_stokes_rhs_discrete_curl(&vs, &w)?;
            let st = solve_stokes_with(&vs, &ps, &rhs, opts.stokes_method)?;
            let t2 = Instant::now();
            let phi = final_poisson(&solver, &st.u)?;
            let t3 = Instant::now();
            Ok(LevelRecord {
                level,
                w: Some(w),
                u: st.u,
                p: st.p,
                phi,
                timing: StepTiming {
                    poisson1: Some((t1 - t0).as_secs_f64()),
                    stokes: (t2 - t1).as_secs_f64(),
                    poisson2: (t3 - t2).as_secs_f64(),
                },
            })
        })()
        .map_err(|e| e.at_level(level))?;
        levels.push(rec);
    }
    Ok(BiharmonicRun {
        algorithm: Algorithm::Psp,
        k,
        levels,
    })
}
