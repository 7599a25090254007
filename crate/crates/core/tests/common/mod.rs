//! Property checks shared by the per-module suites and the acceptance target.
//! Each check returns a description of the first violation.
#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use biharm_core::analysis::*;
use biharm_core::assembly::*;
use biharm_core::corner::*;
use biharm_core::mesh::*;
use biharm_core::solvers::*;
use biharm_core::source::*;
use biharm_core::space::*;
use biharm_core::sparse::dot;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn hierarchy(domain: &str, kappa: f64, levels: usize) -> MeshHierarchy {
    let mut h = MeshHierarchy::builtin(domain, kappa).unwrap();
    h.refine_to(levels).unwrap();
    h
}

pub fn rng() -> StdRng {
    StdRng::seed_from_u64(0x5eed)
}

pub fn random_bary(rng: &mut StdRng) -> [f64; 3] {
    let (a, b): (f64, f64) = (rng.gen(), rng.gen());
    let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
    [1.0 - a - b, a, b]
}

/// Random polynomial of total degree `k` with its gradient.
pub fn random_poly(rng: &mut StdRng, k: u32) -> Poly2 {
    let mut terms = Vec::new();
    for i in 0..=k {
        for j in 0..=k - i {
            terms.push((rng.gen_range(-1.0..1.0), i, j));
        }
    }
    Poly2::new(terms)
}

pub fn random_field(rng: &mut StdRng, space: &Arc<FeSpace>, components: usize, dirichlet: bool) -> Field {
    let mut c: Vec<f64> = (0..components * space.ndof).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if dirichlet {
        for comp in 0..components {
            for &d in &space.boundary_dofs {
                c[comp * space.ndof + d] = 0.0;
            }
        }
    }
    Field::new(space.clone(), components, c).unwrap()
}

pub fn lagrange(mesh: &Arc<Mesh>, k: usize) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(mesh.clone(), k, SpaceKind::Lagrange).unwrap())
}

pub fn mini(mesh: &Arc<Mesh>) -> Arc<FeSpace> {
    Arc::new(FeSpace::mini(mesh.clone()).unwrap())
}

// ---------------------------------------------------------------- corner_analysis

/// Strict threshold inequalities between `α₀` and `β₀` on a grid of angles.
pub fn check_threshold_inequalities() -> Check {
    let mut n = 0;
    for i in 21..120 {
        if i == 60 {
            continue;
        }
        let omega = i as f64 * PI / 60.0;
        let a = solve_alpha0(omega).map_err(|e| e.to_string())?;
        let b = beta0(omega).map_err(|e| e.to_string())?;
        if omega < PI {
            ensure!(b < a - 1e-10 && a < 2.0 * b - 1e-10, "omega {omega}: beta0 {b}, alpha0 {a}");
        } else {
            ensure!(0.5 < a - 1e-10 && a < b - 1e-10, "omega {omega}: alpha0 {a}, beta0 {b}");
        }
        n += 1;
    }
    ensure!(n >= 60, "only {n} grid angles");
    Ok(())
}

// ---------------------------------------------------------------- geometry_mesh

/// Every interior edge is shared by exactly two triangles, and boundary edges are
/// exactly the edges seen once.
pub fn check_conformity(h: &MeshHierarchy) -> Check {
    for m in &h.levels {
        ensure!(m.is_conforming(), "level {} is not conforming", m.level);
        for (e, &count) in m.edge_incidence().iter() {
            ensure!(count == 1 || count == 2, "level {}: edge {e:?} has {count} triangles", m.level);
            ensure!(
                (count == 1) == m.boundary_edges.contains(e),
                "level {}: boundary flag of edge {e:?} disagrees with incidence {count}",
                m.level
            );
        }
    }
    Ok(())
}

/// Positive orientation, area conservation across levels and between parent and
/// children.
pub fn check_area(h: &MeshHierarchy) -> Check {
    let area = h.domain.area();
    for (l, m) in h.levels.iter().enumerate() {
        for t in 0..m.num_triangles() {
            let [a, b, c] = m.vertices_of(t);
            ensure!(signed_area(a, b, c) > 0.0, "level {l}: triangle {t} not counterclockwise");
        }
        let total = m.total_area();
        ensure!((total - area).abs() <= 1e-12 * area, "level {l}: area {total} vs domain {area}");
        if l > 0 {
            let parent = &h.levels[l - 1];
            for t in 0..parent.num_triangles() {
                let children: f64 = (4 * t..4 * t + 4).map(|c| m.area(c)).sum();
                ensure!(
                    (children - parent.area(t)).abs() <= 1e-13 * area,
                    "level {l}: children of {t} cover {children}, parent {}",
                    parent.area(t)
                );
                ensure!((4 * t..4 * t + 4).all(|c| m.parent[c] == Some(t)), "level {l}: parent map of {t}");
            }
        }
    }
    Ok(())
}

/// Building the same hierarchy twice gives identical meshes.
pub fn check_determinism(domain: &str, kappa: f64, levels: usize) -> Check {
    let a = hierarchy(domain, kappa, levels);
    let b = hierarchy(domain, kappa, levels);
    for l in 0..=levels {
        ensure!(a.levels[l] == b.levels[l], "{domain} κ={kappa}: level {l} differs between builds");
        ensure!(
            a.levels[l].to_text() == b.levels[l].to_text(),
            "{domain} κ={kappa}: level {l} text differs"
        );
    }
    Ok(())
}

/// Graded refinement keeps the smallest angle bounded away from zero: no level goes
/// below the level-1 value.
pub fn check_min_angle(h: &MeshHierarchy) -> Check {
    let min = |m: &Mesh| (0..m.num_triangles()).map(|t| m.min_angle(t)).fold(f64::INFINITY, f64::min);
    let floor = min(&h.levels[1]).min(min(&h.levels[0]));
    ensure!(floor > 0.01, "level 1 minimum angle {floor}");
    for m in &h.levels[1..] {
        let a = min(m);
        ensure!(a >= floor - 1e-12, "level {}: minimum angle {a} below {floor}", m.level);
    }
    Ok(())
}

// ---------------------------------------------------------------- fem_space

/// Interpolating a random polynomial of the space's degree reproduces it and its
/// gradient everywhere.
pub fn check_polynomial_reproduction(mesh: &Arc<Mesh>, k: usize, kind: SpaceKind) -> Check {
    let mut rng = rng();
    let space = Arc::new(FeSpace::new(mesh.clone(), k, kind).map_err(|e| e.to_string())?);
    for _ in 0..3 {
        let p = random_poly(&mut rng, k as u32);
        let (dx, dy) = (p.dx(), p.dy());
        let field = interpolate(&space, |x| p.eval(x));
        for t in 0..mesh.num_triangles() {
            for _ in 0..4 {
                let l = random_bary(&mut rng);
                let x = mesh.point_from_barycentric(t, l);
                let v = field.evaluate(t, l)[0];
                let g = field.gradient(t, l)[0];
                ensure!((v - p.eval(x)).abs() < 1e-12, "k={k}: value {v} vs {} at {x:?}", p.eval(x));
                ensure!(
                    (g[0] - dx.eval(x)).abs() < 1e-10 && (g[1] - dy.eval(x)).abs() < 1e-10,
                    "k={k}: gradient {g:?} at {x:?}"
                );
            }
        }
    }
    Ok(())
}

/// Lagrange basis functions sum to one; the bubble vanishes on element edges.
pub fn check_partition_of_unity(mesh: &Arc<Mesh>, k: usize) -> Check {
    let mut rng = rng();
    let basis = LocalBasis::new(k, false);
    let mut vals = vec![0.0; basis.len()];
    for _ in 0..50 {
        let l = random_bary(&mut rng);
        basis.values(l, &mut vals);
        let s: f64 = vals.iter().sum();
        ensure!((s - 1.0).abs() < 1e-13, "k={k}: basis sums to {s}");
    }
    let ones = Field::new(lagrange(mesh, k), 1, vec![1.0; lagrange(mesh, k).ndof]).unwrap();
    let l = random_bary(&mut rng);
    ensure!((ones.evaluate(0, l)[0] - 1.0).abs() < 1e-13, "constant field");
    let bubble = LocalBasis::new(1, true);
    let mut bv = vec![0.0; bubble.len()];
    bubble.values([0.3, 0.7, 0.0], &mut bv);
    ensure!(bv[3].abs() < 1e-15, "bubble on an edge is {}", bv[3]);
    Ok(())
}

/// Prolongation of a random coarse field is the same function on the fine mesh, is
/// linear, and interpolating back recovers the coarse coefficients.
pub fn check_prolongation(h: &MeshHierarchy, k: usize, coarse: usize, fine: usize) -> Check {
    let mut rng = rng();
    let cs = lagrange(&h.levels[coarse], k);
    let fs = lagrange(&h.levels[fine], k);
    let a = random_field(&mut rng, &cs, 1, false);
    let b = random_field(&mut rng, &cs, 1, false);
    let pa = prolongate(h, &a, &fs).map_err(|e| e.to_string())?;
    let pb = prolongate(h, &b, &fs).map_err(|e| e.to_string())?;
    let scale = field_norm(&a, Norm::H1);
    let d = diff_norm(h, &a, &pa, Norm::H1).map_err(|e| e.to_string())?;
    ensure!(d <= 1e-12 * scale, "k={k}: prolongation changes the function by {d}");
    let semi = (field_norm(&pa, Norm::H1Semi) - field_norm(&a, Norm::H1Semi)).abs();
    ensure!(semi <= 1e-12 * scale, "k={k}: seminorm changes by {semi}");

    let combo = Field::new(cs.clone(), 1, a.coefficients.iter().zip(&b.coefficients).map(|(x, y)| 2.0 * x - 3.0 * y).collect())
        .unwrap();
    let pc = prolongate(h, &combo, &fs).map_err(|e| e.to_string())?;
    for i in 0..fs.ndof {
        let lin = 2.0 * pa.coefficients[i] - 3.0 * pb.coefficients[i];
        ensure!((pc.coefficients[i] - lin).abs() < 1e-12, "k={k}: not linear at dof {i}");
    }

    // Interpolating back onto the coarse nodes recovers the coefficients. Graded
    // edges split off-centre, so coarse nodes need not be fine nodes.
    for (i, &p) in cs.dof_coords.iter().enumerate() {
        let (t, l) = h.locate_point(fine, p).map_err(|e| e.to_string())?;
        let v = pa.evaluate(t, l)[0];
        ensure!((v - a.coefficients[i]).abs() < 1e-13, "k={k}: restriction at {p:?} gives {v}");
    }
    Ok(())
}

// ---------------------------------------------------------------- assembly

/// Stiffness is symmetric, annihilates constants, is positive on random vectors and
/// positive definite after Dirichlet elimination. Mass is symmetric with total `|Ω|`.
pub fn check_stiffness_and_mass(space: &Arc<FeSpace>) -> Check {
    let mut rng = rng();
    let a = assemble_stiffness(space);
    ensure!(a.is_symmetric(1e-13), "stiffness symmetry defect {}", a.symmetry_defect());
    let ones = interpolate(space, |_| 1.0).coefficients;
    let a1 = a.matvec(&ones);
    let worst = a1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(worst < 1e-11 * a.max_abs(), "A·1 has entry {worst}");
    for _ in 0..5 {
        let x: Vec<f64> = (0..space.ndof).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = dot(&x, &a.matvec(&x));
        ensure!(q > 0.0, "xᵀAx = {q}");
    }
    let (red, _) = apply_dirichlet(&a, &ones, &space.boundary_dofs);
    biharm_core::linalg::SymmetricFactor::cholesky(&red).map_err(|e| format!("reduced stiffness not SPD: {e}"))?;

    let m = assemble_mass(space);
    ensure!(m.is_symmetric(1e-13), "mass symmetry defect {}", m.symmetry_defect());
    let total = dot(&ones, &m.matvec(&ones));
    let area = space.mesh.total_area();
    ensure!((total - area).abs() < 1e-12 * area, "1ᵀM1 = {total}, area {area}");
    Ok(())
}

/// A load of polynomial degree `d` is integrated exactly by the default rule when
/// `d + k` fits, so raising the order by two changes nothing.
pub fn check_quadrature_exactness(space: &Arc<FeSpace>) -> Check {
    let mut rng = rng();
    let q = default_load_order(space);
    let d = (q - space.polynomial_degree()) as u32;
    let p = random_poly(&mut rng, d);
    let f = |x: Point| p.eval(x);
    let b0 = assemble_load(space, &f, Some(q));
    let b1 = assemble_load(space, &f, Some(q + 2));
    let scale = b0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (x, y)) in b0.iter().zip(&b1).enumerate() {
        ensure!((x - y).abs() < 1e-13 * scale.max(1.0), "dof {i}: order {q} gives {x}, order {} gives {y}", q + 2);
    }
    Ok(())
}

/// `∫ curl u ψ = ∫ u · curl ψ` for velocities vanishing on the boundary: the two
/// curl right-hand sides are transposes of each other.
pub fn check_curl_by_parts(vspace: &Arc<FeSpace>, sspace: &Arc<FeSpace>) -> Check {
    let mut rng = rng();
    let u = random_field(&mut rng, vspace, 2, true);
    let w = random_field(&mut rng, sspace, 1, false);
    let lhs = dot(&assemble_curl_rhs(sspace, &u).map_err(|e| e.to_string())?, &w.coefficients);
    let rhs = dot(&u.coefficients, &assemble_stokes_rhs_discrete_curl(vspace, &w).map_err(|e| e.to_string())?);
    ensure!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()), "(curl u, w) = {lhs} but (u, curl w) = {rhs}");
    Ok(())
}

/// The divergence matrix annihilates curls of polynomial stream functions.
pub fn check_divergence_of_curl(vspace: &Arc<FeSpace>, pspace: &Arc<FeSpace>) -> Check {
    let mut rng = rng();
    let psi = random_poly(&mut rng, vspace.polynomial_degree() as u32 + 1);
    let (sx, sy) = (psi.dx(), psi.dy());
    let v = interpolate_vector(vspace, |x| [sy.eval(x), -sx.eval(x)]);
    let b = assemble_divergence(vspace, pspace).map_err(|e| e.to_string())?;
    let bv = b.matvec(&v.coefficients);
    let worst = bv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ensure!(worst < 1e-11, "B·curl ψ has entry {worst}");
    Ok(())
}

// ---------------------------------------------------------------- solvers

/// Zero-mean pressure, discrete divergence-free velocity vanishing on the boundary.
pub fn check_stokes_invariants(st: &StokesSolution) -> Check {
    ensure!(st.pressure_mean <= MEAN_TOL, "pressure mean {}", st.pressure_mean);
    ensure!(st.divergence_residual <= DIVERGENCE_TOL, "divergence {}", st.divergence_residual);
    ensure!(st.u.vanishes_on_boundary(), "velocity nonzero on the boundary");
    let mean = dot(&assemble_mean_vector(&st.p.space), &st.p.coefficients);
    ensure!(mean.abs() <= MEAN_TOL, "recomputed pressure mean {mean}");
    let b = assemble_divergence(&st.u.space, &st.p.space).map_err(|e| e.to_string())?;
    let div = b.matvec(&st.u.coefficients).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ensure!(div <= DIVERGENCE_TOL, "recomputed divergence {div}");
    Ok(())
}

/// A gradient forcing `F = ∇g` with `g` in the pressure space is absorbed entirely by
/// the pressure: `u = 0` and `p = g − mean(g)`.
pub fn check_gradient_forcing(mesh: &Arc<Mesh>, k: usize) -> Check {
    let (vs, ps) = stokes_spaces(mesh.clone(), k).map_err(|e| e.to_string())?;
    let rhs = assemble_stokes_rhs_analytic(&vs, &|_| [1.0, 0.0], None);
    let st = solve_stokes(&vs, &ps, &rhs).map_err(|e| e.to_string())?;
    check_stokes_invariants(&st)?;
    let umax = st.u.coefficients.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ensure!(umax < 1e-10, "k={k}: velocity {umax} under a gradient forcing");
    let area = mesh.total_area();
    let mean_x = dot(&assemble_mean_vector(&ps), &interpolate(&ps, |x| x[0]).coefficients) / area;
    for (i, &x) in ps.dof_coords.iter().enumerate() {
        let want = x[0] - mean_x;
        ensure!((st.p.coefficients[i] - want).abs() < 1e-9, "k={k}: p at {x:?} is {}, want {want}", st.p.coefficients[i]);
    }
    Ok(())
}

/// The discrete solution is a Galerkin projection: the stiffness residual vanishes
/// on every interior test function.
pub fn check_galerkin_orthogonality(solver: &PoissonSolver, rhs: &[f64], sol: &Field) -> Check {
    let a = assemble_stiffness(&solver.space);
    let r = a.matvec(&sol.coefficients);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for (i, (ri, bi)) in r.iter().zip(rhs).enumerate() {
        if solver.space.is_boundary[i] {
            continue;
        }
        ensure!((ri - bi).abs() <= 1e-9 * scale, "dof {i}: residual {}", ri - bi);
    }
    Ok(())
}

/// `φ(x, y) = φ(y, x)` at every node of a run on the square.
pub fn check_symmetry(run: &BiharmonicRun) -> Check {
    let key = |p: Point| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    for rec in &run.levels {
        let s = &rec.phi.space;
        let index: HashMap<_, _> = s.dof_coords.iter().enumerate().map(|(i, &p)| (key(p), i)).collect();
        let scale = rec.phi.coefficients.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, &p) in s.dof_coords.iter().enumerate() {
            let j = *index.get(&key([p[1], p[0]])).ok_or(format!("level {}: no mirror of {p:?}", rec.level))?;
            let d = (rec.phi.coefficients[i] - rec.phi.coefficients[j]).abs();
            ensure!(d <= 1e-10 * scale.max(1.0), "level {}: φ at {p:?} differs from its mirror by {d}", rec.level);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- analysis

/// Inf-sup constants on levels 1..=3 of `h` for the Mini, Taylor-Hood and `P1/P1`
/// pairs.
pub struct InfSup {
    pub taylor_hood: Vec<f64>,
    pub mini: Vec<f64>,
    pub p1p1: Vec<f64>,
}

pub fn infsup_levels(h: &MeshHierarchy) -> Result<InfSup, String> {
    let mut out = InfSup {
        taylor_hood: vec![],
        mini: vec![],
        p1p1: vec![],
    };
    for l in 1..=3 {
        let m = &h.levels[l];
        let err = |e: biharm_core::Error| e.to_string();
        let (v, p) = stokes_spaces(m.clone(), 2).map_err(err)?;
        out.taylor_hood.push(infsup_diagnostic(&v, &p).map_err(err)?);
        let (v, p) = stokes_spaces(m.clone(), 1).map_err(err)?;
        out.mini.push(infsup_diagnostic(&v, &p).map_err(err)?);
        out.p1p1.push(infsup_diagnostic(&lagrange(m, 1), &p).map_err(err)?);
    }
    Ok(out)
}

/// Stable pairs stay bounded below and do not lose more than 10% over three levels;
/// `P1/P1` carries spurious pressure modes, so its constant is zero up to rounding.
pub fn check_infsup(h: &MeshHierarchy) -> Check {
    let c = infsup_levels(h)?;
    for (name, vals, floor) in [("Taylor-Hood", &c.taylor_hood, 0.2), ("Mini", &c.mini, 0.1)] {
        for &v in vals.iter() {
            ensure!(v > floor, "{name}: constant {v} below {floor} ({vals:?})");
        }
        ensure!(vals[2] >= 0.9 * vals[0], "{name}: constant decays {vals:?}");
    }
    for &v in &c.p1p1 {
        ensure!(v < 1e-6, "P1/P1: constant {v} does not vanish ({:?})", c.p1p1);
    }
    Ok(())
}

/// `diff_norm` is a metric across levels: symmetric, zero on identical functions and
/// subadditive.
pub fn check_diff_norm_metric(h: &MeshHierarchy, k: usize) -> Check {
    let mut rng = rng();
    let s1 = lagrange(&h.levels[1], k);
    let s2 = lagrange(&h.levels[2], k);
    let s3 = lagrange(&h.levels[3], k);
    let a = random_field(&mut rng, &s1, 1, false);
    let b = random_field(&mut rng, &s2, 1, false);
    let c = random_field(&mut rng, &s3, 1, false);
    for norm in [Norm::L2, Norm::H1, Norm::H1Semi, Norm::Linf] {
        let d = |x: &Field, y: &Field| diff_norm(h, x, y, norm).unwrap();
        ensure!(d(&a, &a) < 1e-14, "{norm:?}: d(a, a) = {}", d(&a, &a));
        ensure!((d(&a, &b) - d(&b, &a)).abs() < 1e-13, "{norm:?}: not symmetric");
        ensure!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12, "{norm:?}: triangle inequality fails");
    }
    Ok(())
}

// ---------------------------------------------------------------- source_terms

/// The `w` solve is a Galerkin projection of the load, so its stiffness residual is
/// orthogonal to the space.
pub fn check_curl_w_orthogonality(space: &Arc<FeSpace>, f: &dyn Fn(Point) -> f64) -> Check {
    let w = build_f_curl_w(space, f, None).map_err(|e| e.to_string())?;
    let b = assemble_load(space, f, None);
    let solver = PoissonSolver::new(space.clone()).map_err(|e| e.to_string())?;
    check_galerkin_orthogonality(&solver, &b, &w)
}

/// `H1` errors of the `w` solve for `w* = (1 − x²)(1 − y²)` on levels `1..=levels`.
pub fn curl_w_manufactured_errors(k: usize, levels: usize) -> Vec<f64> {
    let h = hierarchy("square", 0.5, levels);
    let w = Poly2::new([(1.0, 0, 0), (-1.0, 2, 0), (-1.0, 0, 2), (1.0, 2, 2)]);
    let f = w.laplacian().scale(-1.0);
    let (wx, wy) = (w.dx(), w.dy());
    (1..=levels)
        .map(|l| {
            let space = lagrange(&h.levels[l], k);
            let wn = build_f_curl_w(&space, &|x| f.eval(x), None).unwrap();
            manufactured_error(&wn, &|x| w.eval(x), &|x| [wx.eval(x), wy.eval(x)], Norm::H1)
        })
        .collect()
}

pub fn rates(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
