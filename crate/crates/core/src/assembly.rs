//! Element-by-element assembly of the Poisson and Stokes forms.
//!
//! Every integrand is polynomial on each triangle except analytic loads, so the
//! quadrature orders below are chosen to integrate the actual degree exactly.

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::quadrature::QuadratureRule;
use crate::space::{ElementGeometry, FeSpace, Field};
use crate::sparse::{SparseMatrix, Triplets};

fn local_gradients(tab_dl: &[[f64; 3]], geo: &ElementGeometry, out: &mut [[f64; 2]]) {
    for (o, d) in out.iter_mut().zip(tab_dl) {
        *o = geo.gradient(*d);
    }
}

/// `A_ij = ∫ ∇φ_j · ∇φ_i`.
pub fn assemble_stiffness(space: &FeSpace) -> SparseMatrix {
    let p = space.polynomial_degree();
    let tab = space.tabulate(QuadratureRule::triangle(2 * (p - 1)));
    let nloc = space.nloc();
    let nt = space.mesh.num_triangles();
    let mut trip = Triplets::with_capacity(space.ndof, space.ndof, nt * nloc * nloc);
    let mut grads = vec![[0.0; 2]; nloc];
    let mut local = vec![0.0; nloc * nloc];
    for t in 0..nt {
        let geo = ElementGeometry::new(&space.mesh, t);
        local.iter_mut().for_each(|v| *v = 0.0);
        for (q, &w) in tab.rule.weights.iter().enumerate() {
            let jw = 2.0 * geo.area * w;
            local_gradients(tab.dlambda(q), &geo, &mut grads);
            for i in 0..nloc {
                for j in 0..nloc {
                    local[i * nloc + j] += jw * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
        }
        let dofs = space.element_dofs(t);
        for i in 0..nloc {
            for j in 0..nloc {
                trip.push(dofs[i], dofs[j], local[i * nloc + j]);
            }
        }
    }
    trip.into_matrix(true)
}

/// `M_ij = ∫ φ_j φ_i`.
pub fn assemble_mass(space: &FeSpace) -> SparseMatrix {
    let p = space.polynomial_degree();
    let tab = space.tabulate(QuadratureRule::triangle(2 * p));
    let nloc = space.nloc();
    let nt = space.mesh.num_triangles();
    let mut trip = Triplets::with_capacity(space.ndof, space.ndof, nt * nloc * nloc);
    let mut local = vec![0.0; nloc * nloc];
    for t in 0..nt {
        let area = space.mesh.area(t);
        local.iter_mut().for_each(|v| *v = 0.0);
        for (q, &w) in tab.rule.weights.iter().enumerate() {
            let jw = 2.0 * area * w;
            let v = tab.value(q);
            for i in 0..nloc {
                for j in 0..nloc {
                    local[i * nloc + j] += jw * v[i] * v[j];
                }
            }
        }
        let dofs = space.element_dofs(t);
        for i in 0..nloc {
            for j in 0..nloc {
                trip.push(dofs[i], dofs[j], local[i * nloc + j]);
            }
        }
    }
    trip.into_matrix(true)
}

/// Block-diagonal `diag(A, A)` acting on `(u₁, u₂)`.
pub fn assemble_vector_stiffness(vspace: &FeSpace) -> SparseMatrix {
    let a = assemble_stiffness(vspace);
    let n = vspace.ndof;
    let mut trip = Triplets::with_capacity(2 * n, 2 * n, 2 * a.nnz());
    for c in 0..2 {
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                trip.push(c * n + i, c * n + j, v);
            }
        }
    }
    trip.into_matrix(true)
}

/// `B(q, v) = −∫ (div v) q`, shape `npressure × 2 nvelocity`.
pub fn assemble_divergence(vspace: &FeSpace, pspace: &FeSpace) -> Result<SparseMatrix> {
    if !vspace.same_mesh(pspace) {
        return Err(Error::MeshMismatch);
    }
    let pv = vspace.polynomial_degree();
    let pp = pspace.polynomial_degree();
    let rule = QuadratureRule::triangle(pv - 1 + pp);
    let vt = vspace.tabulate(rule.clone());
    let pt = pspace.tabulate(rule);
    let (nv, np) = (vspace.nloc(), pspace.nloc());
    let nt = vspace.mesh.num_triangles();
    let n = vspace.ndof;
    let mut trip = Triplets::with_capacity(pspace.ndof, 2 * n, nt * np * nv * 2);
    let mut grads = vec![[0.0; 2]; nv];
    let mut local = vec![0.0; np * nv * 2];
    for t in 0..nt {
        let geo = ElementGeometry::new(&vspace.mesh, t);
        local.iter_mut().for_each(|v| *v = 0.0);
        for (q, &w) in vt.rule.weights.iter().enumerate() {
            let jw = 2.0 * geo.area * w;
            local_gradients(vt.dlambda(q), &geo, &mut grads);
            let psi = pt.value(q);
            for i in 0..np {
                for j in 0..nv {
                    for c in 0..2 {
                        local[(i * nv + j) * 2 + c] -= jw * psi[i] * grads[j][c];
                    }
                }
            }
        }
        let vd = vspace.element_dofs(t);
        let pd = pspace.element_dofs(t);
        for i in 0..np {
            for j in 0..nv {
                for c in 0..2 {
                    trip.push(pd[i], c * n + vd[j], local[(i * nv + j) * 2 + c]);
                }
            }
        }
    }
    Ok(trip.into_matrix(false))
}

/// Default quadrature order for analytic loads.
pub fn default_load_order(space: &FeSpace) -> usize {
    space.polynomial_degree() + 2
}

/// `b_i = ∫ f φ_i`.
pub fn assemble_load(space: &FeSpace, f: &dyn Fn(Point) -> f64, order: Option<usize>) -> Vec<f64> {
    let tab = space.tabulate(QuadratureRule::triangle(order.unwrap_or_else(|| default_load_order(space))));
    let mut b = vec![0.0; space.ndof];
    for t in 0..space.mesh.num_triangles() {
        let area = space.mesh.area(t);
        let dofs = space.element_dofs(t);
        for (q, (&w, &l)) in tab.rule.weights.iter().zip(&tab.rule.points).enumerate() {
            let fx = f(space.mesh.point_from_barycentric(t, l)) * 2.0 * area * w;
            for (&d, v) in dofs.iter().zip(tab.value(q)) {
                b[d] += fx * v;
            }
        }
    }
    b
}

/// `⟨F, v⟩` stacked as `(first component block, second component block)`.
pub fn assemble_stokes_rhs_analytic(
    vspace: &FeSpace,
    force: &dyn Fn(Point) -> [f64; 2],
    order: Option<usize>,
) -> Vec<f64> {
    let tab = vspace.tabulate(QuadratureRule::triangle(order.unwrap_or_else(|| default_load_order(vspace))));
    let n = vspace.ndof;
    let mut b = vec![0.0; 2 * n];
    for t in 0..vspace.mesh.num_triangles() {
        let area = vspace.mesh.area(t);
        let dofs = vspace.element_dofs(t);
        for (q, (&w, &l)) in tab.rule.weights.iter().zip(&tab.rule.points).enumerate() {
            let fx = force(vspace.mesh.point_from_barycentric(t, l));
            let jw = 2.0 * area * w;
            for (&d, v) in dofs.iter().zip(tab.value(q)) {
                b[d] += jw * fx[0] * v;
                b[n + d] += jw * fx[1] * v;
            }
        }
    }
    b
}

/// `⟨curl w, v⟩ = ∫ (∂w/∂y) v₁ − (∂w/∂x) v₂` for a scalar field `w` on the same mesh.
pub fn assemble_stokes_rhs_discrete_curl(vspace: &FeSpace, w: &Field) -> Result<Vec<f64>> {
    if w.components != 1 {
        return Err(Error::InvalidParameter("discrete curl needs a scalar field".into()));
    }
    if !vspace.same_mesh(&w.space) {
        return Err(Error::MeshMismatch);
    }
    let rule = QuadratureRule::triangle(w.space.polynomial_degree() - 1 + vspace.polynomial_degree());
    let wt = w.space.tabulate(rule.clone());
    let vt = vspace.tabulate(rule);
    let n = vspace.ndof;
    let mut b = vec![0.0; 2 * n];
    let mut grads = vec![[0.0; 2]; w.space.nloc()];
    for t in 0..vspace.mesh.num_triangles() {
        let geo = ElementGeometry::new(&vspace.mesh, t);
        let wd = w.space.element_dofs(t);
        let vd = vspace.element_dofs(t);
        for (q, &wq) in vt.rule.weights.iter().enumerate() {
            local_gradients(wt.dlambda(q), &geo, &mut grads);
            let mut g = [0.0; 2];
            for (&d, gi) in wd.iter().zip(&grads) {
                g[0] += w.coefficients[d] * gi[0];
                g[1] += w.coefficients[d] * gi[1];
            }
            let jw = 2.0 * geo.area * wq;
            for (&d, v) in vd.iter().zip(vt.value(q)) {
                b[d] += jw * g[1] * v;
                b[n + d] -= jw * g[0] * v;
            }
        }
    }
    Ok(b)
}

/// `b_i = ∫ (∂u₂/∂x − ∂u₁/∂y) ψ_i` for a vector field `u` on the same mesh.
pub fn assemble_curl_rhs(space: &FeSpace, u: &Field) -> Result<Vec<f64>> {
    if u.components != 2 {
        return Err(Error::InvalidParameter("curl right-hand side needs a vector field".into()));
    }
    if !space.same_mesh(&u.space) {
        return Err(Error::MeshMismatch);
    }
    let rule = QuadratureRule::triangle(u.space.polynomial_degree() - 1 + space.polynomial_degree());
    let ut = u.space.tabulate(rule.clone());
    let st = space.tabulate(rule);
    let nu = u.space.ndof;
    let mut b = vec![0.0; space.ndof];
    let mut grads = vec![[0.0; 2]; u.space.nloc()];
    for t in 0..space.mesh.num_triangles() {
        let geo = ElementGeometry::new(&space.mesh, t);
        let ud = u.space.element_dofs(t);
        let sd = space.element_dofs(t);
        for (q, &wq) in st.rule.weights.iter().enumerate() {
            local_gradients(ut.dlambda(q), &geo, &mut grads);
            let mut curl = 0.0;
            for (&d, gi) in ud.iter().zip(&grads) {
                curl += u.coefficients[nu + d] * gi[0] - u.coefficients[d] * gi[1];
            }
            let jw = 2.0 * geo.area * wq * curl;
            for (&d, v) in sd.iter().zip(st.value(q)) {
                b[d] += jw * v;
            }
        }
    }
    Ok(b)
}

/// `m_i = ∫ φ_i`.
pub fn assemble_mean_vector(space: &FeSpace) -> Vec<f64> {
    assemble_load(space, &|_| 1.0, Some(space.polynomial_degree()))
}

/// Symmetric elimination of homogeneous Dirichlet conditions: rows and columns of
/// `dofs` are cleared, their diagonal set to one and their right-hand side to zero.
pub fn apply_dirichlet(a: &SparseMatrix, b: &[f64], dofs: &[usize]) -> (SparseMatrix, Vec<f64>) {
    let mut fixed = vec![false; a.nrows.max(a.ncols)];
    for &d in dofs {
        fixed[d] = true;
    }
    let mut trip = Triplets::with_capacity(a.nrows, a.ncols, a.nnz());
    for i in 0..a.nrows {
        if fixed[i] {
            trip.push(i, i, 1.0);
            continue;
        }
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if !fixed[j] {
                trip.push(i, j, v);
            }
        }
    }
    let mut rhs = b.to_vec();
    for &d in dofs {
        rhs[d] = 0.0;
    }
    (trip.into_matrix(a.symmetric), rhs)
}
