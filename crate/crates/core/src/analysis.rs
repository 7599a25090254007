//! Norms of differences between nested fields, observed convergence rates,
//! manufactured-solution errors and the discrete inf-sup constant.

use std::fmt;
use std::sync::Arc;

use faer::{Mat, Side};

use crate::assembly::{assemble_divergence, assemble_mass, assemble_vector_stiffness};
use crate::error::{Error, Result};
use crate::mesh::{MeshHierarchy, Point};
use crate::quadrature::QuadratureRule;
use crate::solvers::{BiharmonicRun, LevelRecord};
use crate::space::{hierarchy_levels, ElementGeometry, FeSpace, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Norm {
    L2,
    /// Full `H1` norm, `(‖v‖² + |v|²₁)^{1/2}`.
    H1,
    /// `|v|₁ = ‖∇v‖`.
    H1Semi,
    /// Maximum over the Lagrange nodes of the finer mesh.
    Linf,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::L2 => "L2",
            Norm::H1 => "H1",
            Norm::H1Semi => "H1semi",
            Norm::Linf => "Linf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(Norm::L2),
            "h1" => Ok(Norm::H1),
            "h1semi" => Ok(Norm::H1Semi),
            "linf" => Ok(Norm::Linf),
            _ => Err(Error::InvalidParameter(format!("unknown norm `{s}`"))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Evaluates a field at arbitrary barycentric points without allocating.
struct Evaluator<'a> {
    field: &'a Field,
    phi: Vec<f64>,
    dl: Vec<[f64; 3]>,
}

impl<'a> Evaluator<'a> {
    fn new(field: &'a Field) -> Self {
        let n = field.space.nloc();
        Self {
            field,
            phi: vec![0.0; n],
            dl: vec![[0.0; 3]; n],
        }
    }

    /// Values and gradients of every component.
    fn eval(&mut self, t: usize, bary: [f64; 3], geo: &ElementGeometry, val: &mut [f64; 2], grad: &mut [[f64; 2]; 2]) {
        let s = &self.field.space;
        s.basis.values(bary, &mut self.phi);
        s.basis.lambda_derivatives(bary, &mut self.dl);
        let dofs = s.element_dofs(t);
        for c in 0..self.field.components {
            let coef = self.field.component(c);
            let (mut v, mut g) = (0.0, [0.0; 2]);
            for ((&d, p), l) in dofs.iter().zip(&self.phi).zip(&self.dl) {
                let gi = geo.gradient(*l);
                v += coef[d] * p;
                g[0] += coef[d] * gi[0];
                g[1] += coef[d] * gi[1];
            }
            val[c] = v;
            grad[c] = g;
        }
    }
}

/// Norm of `a − b` where the two fields may live on different levels of `h`. The
/// coarser one is evaluated exactly on the finer mesh through the ancestor map.
pub fn diff_norm(h: &MeshHierarchy, a: &Field, b: &Field, norm: Norm) -> Result<f64> {
    if a.components != b.components {
        return Err(Error::DimensionMismatch {
            expected: a.components,
            got: b.components,
        });
    }
    let (fine, coarse) = if a.space.mesh.level >= b.space.mesh.level { (a, b) } else { (b, a) };
    let (lc, lf) = hierarchy_levels(h, &coarse.space.mesh, &fine.space.mesh)?;
    let fmesh = &fine.space.mesh;
    let cmesh = &coarse.space.mesh;
    let ncomp = a.components;
    let mut ef = Evaluator::new(fine);
    let mut ec = Evaluator::new(coarse);
    let (mut vf, mut vc) = ([0.0; 2], [0.0; 2]);
    let (mut gf, mut gc) = ([[0.0; 2]; 2], [[0.0; 2]; 2]);

    if norm == Norm::Linf {
        let nodes = fine.space.basis.nodes();
        let n_lagrange = fine.space.basis.alphas.len();
        let mut seen = vec![false; fine.space.ndof];
        let mut worst: f64 = 0.0;
        for t in 0..fmesh.num_triangles() {
            let anc = h.ancestor(lf, t, lc);
            let gfe = ElementGeometry::new(fmesh, t);
            let gce = ElementGeometry::new(cmesh, anc);
            for (i, &d) in fine.space.element_dofs(t).iter().enumerate().take(n_lagrange) {
                if std::mem::replace(&mut seen[d], true) {
                    continue;
                }
                let x = fmesh.point_from_barycentric(t, nodes[i]);
                ef.eval(t, nodes[i], &gfe, &mut vf, &mut gf);
                ec.eval(anc, cmesh.barycentric(anc, x), &gce, &mut vc, &mut gc);
                for c in 0..ncomp {
                    worst = worst.max((vf[c] - vc[c]).abs());
                }
            }
        }
        return Ok(worst);
    }

    let p = fine.space.polynomial_degree().max(coarse.space.polynomial_degree());
    let rule = QuadratureRule::triangle(2 * p + 2);
    let (mut l2, mut semi) = (0.0, 0.0);
    for t in 0..fmesh.num_triangles() {
        let anc = h.ancestor(lf, t, lc);
        let gfe = ElementGeometry::new(fmesh, t);
        let gce = ElementGeometry::new(cmesh, anc);
        for (&l, &w) in rule.points.iter().zip(&rule.weights) {
            let jw = 2.0 * gfe.area * w;
            let x = fmesh.point_from_barycentric(t, l);
            ef.eval(t, l, &gfe, &mut vf, &mut gf);
            let cb = if lc == lf { l } else { cmesh.barycentric(anc, x) };
            ec.eval(anc, cb, &gce, &mut vc, &mut gc);
            for c in 0..ncomp {
                let dv = vf[c] - vc[c];
                let d0 = gf[c][0] - gc[c][0];
                let d1 = gf[c][1] - gc[c][1];
                l2 += jw * dv * dv;
                semi += jw * (d0 * d0 + d1 * d1);
            }
        }
    }
    Ok(match norm {
        Norm::L2 => l2.sqrt(),
        Norm::H1 => (l2 + semi).sqrt(),
        Norm::H1Semi => semi.sqrt(),
        Norm::Linf => unreachable!(),
    })
}

/// Norm of a single field (distance to zero).
pub fn field_norm(field: &Field, norm: Norm) -> f64 {
    let zero = |_: Point| [0.0; 2];
    let zgrad = |_: Point| [[0.0; 2]; 2];
    manufactured_error_impl(field, &zero, &zgrad, norm, 2 * field.space.polynomial_degree())
}

/// Per-level successive differences and the observed rates
/// `R_j = log2(diff_{j−1} / diff_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub quantity: String,
    pub norm: Norm,
    /// `j` of each `diff = ‖v_j − v_{j−1}‖`.
    pub levels: Vec<usize>,
    pub diffs: Vec<f64>,
    pub rates: Vec<Option<f64>>,
}

impl ConvergenceReport {
    pub fn rate_at(&self, level: usize) -> Option<f64> {
        let i = self.levels.iter().position(|&l| l == level)?;
        self.rates[i]
    }

    pub fn diff_at(&self, level: usize) -> Option<f64> {
        let i = self.levels.iter().position(|&l| l == level)?;
        Some(self.diffs[i])
    }

    /// The indicator tabulated against the middle level of `v_{j−1}, v_j, v_{j+1}`,
    /// which is `rate_at(j + 1)`. Published rate tables use this labelling.
    pub fn indicator_at(&self, j: usize) -> Option<f64> {
        self.rate_at(j + 1)
    }
}

/// Rates from successive differences; a rate is absent unless both neighbouring
/// differences are positive.
pub fn rate_table(quantity: &str, norm: Norm, levels: &[usize], diffs: &[f64]) -> Result<ConvergenceReport> {
    if diffs.len() < 2 || levels.len() != diffs.len() {
        return Err(Error::InvalidParameter(format!(
            "need at least two differences with matching levels, got {} and {}",
            diffs.len(),
            levels.len()
        )));
    }
    let rates = (0..diffs.len())
        .map(|i| {
            (i > 0 && diffs[i - 1] > 0.0 && diffs[i] > 0.0).then(|| (diffs[i - 1] / diffs[i]).log2())
        })
        .collect();
    Ok(ConvergenceReport {
        quantity: quantity.to_string(),
        norm,
        levels: levels.to_vec(),
        diffs: diffs.to_vec(),
        rates,
    })
}

/// Which field of a level record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    Phi,
    W,
    U,
    P,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Phi => "phi",
            Quantity::W => "w",
            Quantity::U => "u",
            Quantity::P => "p",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "phi" => Ok(Quantity::Phi),
            "w" => Ok(Quantity::W),
            "u" => Ok(Quantity::U),
            "p" => Ok(Quantity::P),
            _ => Err(Error::InvalidParameter(format!("unknown quantity `{s}`"))),
        }
    }

    pub fn of(self, r: &LevelRecord) -> Option<&Field> {
        match self {
            Quantity::Phi => Some(&r.phi),
            Quantity::W => r.w.as_ref(),
            Quantity::U => Some(&r.u),
            Quantity::P => Some(&r.p),
        }
    }
}

/// Successive-difference report of one quantity over all consecutive levels of a run.
pub fn run_report(h: &MeshHierarchy, run: &BiharmonicRun, quantity: Quantity, norm: Norm) -> Result<ConvergenceReport> {
    let mut fields = Vec::new();
    for r in &run.levels {
        let f = quantity.of(r).ok_or_else(|| {
            Error::InvalidParameter(format!("quantity {} not recorded by this run", quantity.name()))
        })?;
        fields.push((r.level, f));
    }
    level_report(h, quantity.name(), norm, &fields)
}

/// Successive-difference report of a sequence of `(level, field)` pairs on one hierarchy.
pub fn level_report(h: &MeshHierarchy, quantity: &str, norm: Norm, fields: &[(usize, &Field)]) -> Result<ConvergenceReport> {
    let mut levels = Vec::new();
    let mut diffs = Vec::new();
    for pair in fields.windows(2) {
        let ((_, fa), (lb, fb)) = (pair[0], pair[1]);
        levels.push(lb);
        diffs.push(diff_norm(h, fb, fa, norm)?);
    }
    rate_table(quantity, norm, &levels, &diffs)
}

fn manufactured_error_impl(
    field: &Field,
    exact: &dyn Fn(Point) -> [f64; 2],
    exact_grad: &dyn Fn(Point) -> [[f64; 2]; 2],
    norm: Norm,
    order: usize,
) -> f64 {
    let mesh = &field.space.mesh;
    let mut ev = Evaluator::new(field);
    let (mut v, mut g) = ([0.0; 2], [[0.0; 2]; 2]);
    let nc = field.components;
    if norm == Norm::Linf {
        let nodes = field.space.basis.nodes();
        let n_lagrange = field.space.basis.alphas.len();
        let mut worst: f64 = 0.0;
        for t in 0..mesh.num_triangles() {
            let geo = ElementGeometry::new(mesh, t);
            for node in nodes.iter().take(n_lagrange) {
                let x = mesh.point_from_barycentric(t, *node);
                ev.eval(t, *node, &geo, &mut v, &mut g);
                let e = exact(x);
                for c in 0..nc {
                    worst = worst.max((v[c] - e[c]).abs());
                }
            }
        }
        return worst;
    }
    let rule = QuadratureRule::triangle(order);
    let (mut l2, mut semi) = (0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        for (&l, &w) in rule.points.iter().zip(&rule.weights) {
            let jw = 2.0 * geo.area * w;
            let x = mesh.point_from_barycentric(t, l);
            ev.eval(t, l, &geo, &mut v, &mut g);
            let e = exact(x);
            let eg = exact_grad(x);
            for c in 0..nc {
                let dv = v[c] - e[c];
                l2 += jw * dv * dv;
                semi += jw * ((g[c][0] - eg[c][0]).powi(2) + (g[c][1] - eg[c][1]).powi(2));
            }
        }
    }
    match norm {
        Norm::L2 => l2.sqrt(),
        Norm::H1 => (l2 + semi).sqrt(),
        Norm::H1Semi => semi.sqrt(),
        Norm::Linf => unreachable!(),
    }
}

/// `‖field − exact‖` for a scalar field, by quadrature of order `2k + 4`.
pub fn manufactured_error(
    field: &Field,
    exact: &dyn Fn(Point) -> f64,
    exact_grad: &dyn Fn(Point) -> [f64; 2],
    norm: Norm,
) -> f64 {
    let order = 2 * field.space.polynomial_degree() + 4;
    manufactured_error_impl(
        field,
        &|x| [exact(x), 0.0],
        &|x| [exact_grad(x), [0.0; 2]],
        norm,
        order,
    )
}

/// `‖u − exact‖` for a vector field; `exact_grad[c]` is the gradient of component `c`.
pub fn manufactured_error_vector(
    field: &Field,
    exact: &dyn Fn(Point) -> [f64; 2],
    exact_grad: &dyn Fn(Point) -> [[f64; 2]; 2],
    norm: Norm,
) -> f64 {
    let order = 2 * field.space.polynomial_degree() + 4;
    manufactured_error_impl(field, exact, exact_grad, norm, order)
}

/// Differences between two runs on the same hierarchy at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunDifference {
    pub level: usize,
    pub phi_h1: f64,
    pub phi_l2: f64,
    pub u_h1: f64,
    pub u_l2: f64,
    pub p_l2: f64,
}

pub fn compare_runs(h: &MeshHierarchy, a: &BiharmonicRun, b: &BiharmonicRun, level: usize) -> Result<RunDifference> {
    if a.k != b.k {
        return Err(Error::InvalidParameter(format!("runs use degrees {} and {}", a.k, b.k)));
    }
    let missing = || Error::InvalidParameter(format!("level {level} missing from a run"));
    let ra = a.level(level).ok_or_else(missing)?;
    let rb = b.level(level).ok_or_else(missing)?;
    for (x, y) in [(&ra.phi, &rb.phi), (&ra.u, &rb.u), (&ra.p, &rb.p)] {
        if !x.space.same_space(&y.space) {
            return Err(Error::MeshMismatch);
        }
    }
    Ok(RunDifference {
        level,
        phi_h1: diff_norm(h, &ra.phi, &rb.phi, Norm::H1)?,
        phi_l2: diff_norm(h, &ra.phi, &rb.phi, Norm::L2)?,
        u_h1: diff_norm(h, &ra.u, &rb.u, Norm::H1)?,
        u_l2: diff_norm(h, &ra.u, &rb.u, Norm::L2)?,
        p_l2: diff_norm(h, &ra.p, &rb.p, Norm::L2)?,
    })
}

/// Largest problem accepted by the dense inf-sup diagnostic.
pub const INFSUP_MAX_UNKNOWNS: usize = 5000;

/// Discrete inf-sup constant of a velocity/pressure pair with respect to the `H1`
/// seminorm on `H¹₀` and the `L2` pressure norm: the square root of the smallest
/// eigenvalue of `B A⁻¹ Bᵀ p = λ M p` once the constant pressure mode is discarded.
pub fn infsup_diagnostic(vspace: &Arc<FeSpace>, pspace: &Arc<FeSpace>) -> Result<f64> {
    let nv = vspace.ndof;
    let free: Vec<usize> = (0..2 * nv).filter(|&i| !vspace.is_boundary[i % nv]).collect();
    let np = pspace.ndof;
    let unknowns = free.len() + np;
    if unknowns > INFSUP_MAX_UNKNOWNS {
        return Err(Error::TooLarge {
            unknowns,
            limit: INFSUP_MAX_UNKNOWNS,
        });
    }
    let a = assemble_vector_stiffness(vspace).submatrix(&free, &free);
    let b = assemble_divergence(vspace, pspace)?;
    let b = b.submatrix(&(0..np).collect::<Vec<_>>(), &free);
    let m = assemble_mass(pspace);

    let nf = free.len();
    let ad = a.to_dense();
    let a_mat = Mat::<f64>::from_fn(nf, nf, |i, j| ad[i][j]);
    let bd = b.to_dense();
    // columns of Bᵀ
    let mut bt = Mat::<f64>::from_fn(nf, np, |i, j| bd[j][i]);
    let llt = a_mat
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    use faer::linalg::solvers::Solve;
    let bt0 = bt.clone();
    llt.solve_in_place(bt.as_mut());
    let s = bt0.transpose() * &bt;

    let md = m.to_dense();
    let m_mat = Mat::<f64>::from_fn(np, np, |i, j| md[i][j]);
    let lm = m_mat
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let l = lm.L();
    let mut x = s.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, x.as_mut(), faer::Par::Seq);
    let mut c = x.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), faer::Par::Seq);
    // symmetrize against rounding
    let c = Mat::<f64>::from_fn(np, np, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let ev = c
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    Ok(ev.get(1).copied().unwrap_or(0.0).max(0.0).sqrt())
}
