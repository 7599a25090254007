//! Continuous Lagrange spaces `P_k` (k = 1, 2, 3) with homogeneous Dirichlet data, the
//! Mini enrichment of `P_1` by the cubic bubble, and fields living on them.
//!
//! Global numbering: mesh points first, then `k - 1` nodes per edge in sorted
//! edge-key order (running from the lower to the higher point index), then interior
//! nodes by triangle. The Mini space appends one bubble per triangle after the points.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{edge_key, Mesh, MeshHierarchy, Point};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    Lagrange,
    /// `P_1` plus the element bubble `λ0 λ1 λ2`.
    LagrangeBubble,
}

impl SpaceKind {
    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::Lagrange => "lagrange",
            SpaceKind::LagrangeBubble => "lagrange_bubble",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lagrange" => Ok(SpaceKind::Lagrange),
            "lagrange_bubble" => Ok(SpaceKind::LagrangeBubble),
            _ => Err(Error::InvalidParameter(format!("unknown space kind `{s}`"))),
        }
    }
}

/// Shape functions on a triangle, written in barycentric coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis {
    pub degree: usize,
    pub bubble: bool,
    /// Lattice multi-indices of the Lagrange nodes, `α / k` being the node.
    pub alphas: Vec<[usize; 3]>,
}

/// Local edges as (from, to) vertex positions.
const LOCAL_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

impl LocalBasis {
    pub fn new(degree: usize, bubble: bool) -> Self {
        let k = degree;
        let mut alphas = Vec::new();
        for i in 0..3 {
            let mut a = [0; 3];
            a[i] = k;
            alphas.push(a);
        }
        for (i, j) in LOCAL_EDGES {
            for s in 1..k {
                let mut a = [0; 3];
                a[i] = k - s;
                a[j] = s;
                alphas.push(a);
            }
        }
        if k == 3 {
            alphas.push([1, 1, 1]);
        }
        Self {
            degree,
            bubble,
            alphas,
        }
    }

    pub fn len(&self) -> usize {
        self.alphas.len() + usize::from(self.bubble)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Polynomial degree of the richest shape function.
    pub fn polynomial_degree(&self) -> usize {
        if self.bubble {
            3
        } else {
            self.degree
        }
    }

    /// `Π_{j < m} (kλ - j) / (j + 1)` and its derivative in `λ`.
    fn factor(k: usize, m: usize, l: f64) -> (f64, f64) {
        let kf = k as f64;
        let mut val = 1.0;
        let mut der = 0.0;
        for j in 0..m {
            let c = 1.0 / (j as f64 + 1.0);
            let t = (kf * l - j as f64) * c;
            der = der * t + val * kf * c;
            val *= t;
        }
        (val, der)
    }

    pub fn values(&self, l: [f64; 3], out: &mut [f64]) {
        let k = self.degree;
        for (o, a) in out.iter_mut().zip(&self.alphas) {
            *o = (0..3).map(|i| Self::factor(k, a[i], l[i]).0).product();
        }
        if self.bubble {
            out[self.alphas.len()] = l[0] * l[1] * l[2];
        }
    }

    /// Derivatives with respect to `(λ0, λ1, λ2)`.
    pub fn lambda_derivatives(&self, l: [f64; 3], out: &mut [[f64; 3]]) {
        let k = self.degree;
        for (o, a) in out.iter_mut().zip(&self.alphas) {
            let f: [(f64, f64); 3] = std::array::from_fn(|i| Self::factor(k, a[i], l[i]));
            *o = [f[0].1 * f[1].0 * f[2].0, f[0].0 * f[1].1 * f[2].0, f[0].0 * f[1].0 * f[2].1];
        }
        if self.bubble {
            out[self.alphas.len()] = [l[1] * l[2], l[0] * l[2], l[0] * l[1]];
        }
    }

    /// Barycentric positions of the nodes; the bubble carries the centroid.
    pub fn nodes(&self) -> Vec<[f64; 3]> {
        let k = self.degree as f64;
        let mut n: Vec<[f64; 3]> = self
            .alphas
            .iter()
            .map(|a| [a[0] as f64 / k, a[1] as f64 / k, a[2] as f64 / k])
            .collect();
        if self.bubble {
            n.push([1.0 / 3.0; 3]);
        }
        n
    }
}

/// Affine data of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, t: usize) -> Self {
        let [a, b, c] = mesh.vertices_of(t);
        let area = mesh.area(t);
        let s = 0.5 / area;
        Self {
            area,
            grad_lambda: [
                [(b[1] - c[1]) * s, (c[0] - b[0]) * s],
                [(c[1] - a[1]) * s, (a[0] - c[0]) * s],
                [(a[1] - b[1]) * s, (b[0] - a[0]) * s],
            ],
        }
    }

    #[inline]
    pub fn gradient(&self, dl: [f64; 3]) -> [f64; 2] {
        let g = &self.grad_lambda;
        [
            dl[0] * g[0][0] + dl[1] * g[1][0] + dl[2] * g[2][0],
            dl[0] * g[0][1] + dl[1] * g[1][1] + dl[2] * g[2][1],
        ]
    }
}

/// Shape function values and barycentric derivatives at the points of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub rule: QuadratureRule,
    pub nloc: usize,
    /// `values[q * nloc + i]`.
    pub values: Vec<f64>,
    pub dlambda: Vec<[f64; 3]>,
}

impl Tabulation {
    pub fn new(basis: &LocalBasis, rule: QuadratureRule) -> Self {
        let nloc = basis.len();
        let nq = rule.len();
        let mut values = vec![0.0; nq * nloc];
        let mut dlambda = vec![[0.0; 3]; nq * nloc];
        for (q, &p) in rule.points.iter().enumerate() {
            basis.values(p, &mut values[q * nloc..(q + 1) * nloc]);
            basis.lambda_derivatives(p, &mut dlambda[q * nloc..(q + 1) * nloc]);
        }
        Self {
            rule,
            nloc,
            values,
            dlambda,
        }
    }

    #[inline]
    pub fn value(&self, q: usize) -> &[f64] {
        &self.values[q * self.nloc..(q + 1) * self.nloc]
    }

    #[inline]
    pub fn dlambda(&self, q: usize) -> &[[f64; 3]] {
        &self.dlambda[q * self.nloc..(q + 1) * self.nloc]
    }
}

#[derive(Debug, Clone)]
pub struct FeSpace {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    pub kind: SpaceKind,
    pub ndof: usize,
    pub dof_coords: Vec<Point>,
    /// Sorted.
    pub boundary_dofs: Vec<usize>,
    pub is_boundary: Vec<bool>,
    pub basis: LocalBasis,
    element_dofs: Vec<usize>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize, kind: SpaceKind) -> Result<Self> {
        let supported = match kind {
            SpaceKind::Lagrange => (1..=3).contains(&degree),
            SpaceKind::LagrangeBubble => degree == 1,
        };
        if !supported {
            return Err(Error::UnsupportedSpace {
                degree,
                kind: kind.name().to_string(),
            });
        }
        let basis = LocalBasis::new(degree, kind == SpaceKind::LagrangeBubble);
        let k = degree;
        let np = mesh.num_points();
        let nt = mesh.num_triangles();
        let edges: BTreeMap<(usize, usize), usize> = mesh
            .edge_incidence()
            .into_keys()
            .enumerate()
            .map(|(i, e)| (e, i))
            .collect();
        let per_edge = k - 1;
        let edge_base = np;
        let interior_base = np + per_edge * edges.len();
        let n_interior = if k == 3 { nt } else { 0 };
        let n_bubble = if basis.bubble { nt } else { 0 };
        let ndof = interior_base + n_interior + n_bubble;

        let mut dof_coords = mesh.points.clone();
        for &(lo, hi) in edges.keys() {
            let (a, b) = (mesh.points[lo], mesh.points[hi]);
            for s in 1..k {
                let r = s as f64 / k as f64;
                dof_coords.push([a[0] + r * (b[0] - a[0]), a[1] + r * (b[1] - a[1])]);
            }
        }
        for t in 0..(n_interior + n_bubble) {
            dof_coords.push(mesh.centroid(t));
        }

        let nloc = basis.len();
        let mut element_dofs = Vec::with_capacity(nt * nloc);
        for (t, tri) in mesh.triangles.iter().enumerate() {
            element_dofs.extend_from_slice(tri);
            for (i, j) in LOCAL_EDGES {
                let (lo, hi) = edge_key(tri[i], tri[j]);
                let e = edges[&(lo, hi)];
                for s in 1..k {
                    let from_lo = if tri[i] == lo { s } else { k - s };
                    element_dofs.push(edge_base + e * per_edge + from_lo - 1);
                }
            }
            if k == 3 {
                element_dofs.push(interior_base + t);
            }
            if basis.bubble {
                element_dofs.push(interior_base + n_interior + t);
            }
        }

        let mut is_boundary = vec![false; ndof];
        for &(a, b) in &mesh.boundary_edges {
            is_boundary[a] = true;
            is_boundary[b] = true;
            let e = edges[&(a, b)];
            for s in 0..per_edge {
                is_boundary[edge_base + e * per_edge + s] = true;
            }
        }
        let boundary_dofs = (0..ndof).filter(|&i| is_boundary[i]).collect();

        Ok(Self {
            mesh,
            degree,
            kind,
            ndof,
            dof_coords,
            boundary_dofs,
            is_boundary,
            basis,
            element_dofs,
        })
    }

    /// Mini velocity space: `P_1` plus bubbles.
    pub fn mini(mesh: Arc<Mesh>) -> Result<Self> {
        Self::new(mesh, 1, SpaceKind::LagrangeBubble)
    }

    pub fn nloc(&self) -> usize {
        self.basis.len()
    }

    pub fn element_dofs(&self, t: usize) -> &[usize] {
        let n = self.nloc();
        &self.element_dofs[t * n..(t + 1) * n]
    }

    pub fn polynomial_degree(&self) -> usize {
        self.basis.polynomial_degree()
    }

    pub fn num_free(&self) -> usize {
        self.ndof - self.boundary_dofs.len()
    }

    pub fn same_mesh(&self, other: &FeSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh == other.mesh
    }

    pub fn tabulate(&self, rule: QuadratureRule) -> Tabulation {
        Tabulation::new(&self.basis, rule)
    }

    /// True when both spaces have the same mesh, degree and kind.
    pub fn same_space(&self, other: &FeSpace) -> bool {
        self.degree == other.degree && self.kind == other.kind && self.same_mesh(other)
    }
}

/// Coefficients of a scalar or 2-vector function in an [`FeSpace`]. Vector fields
/// store the first component's coefficients, then the second's.
#[derive(Debug, Clone)]
pub struct Field {
    pub space: Arc<FeSpace>,
    pub components: usize,
    pub coefficients: Vec<f64>,
}

impl Field {
    pub fn new(space: Arc<FeSpace>, components: usize, coefficients: Vec<f64>) -> Result<Self> {
        if !(components == 1 || components == 2) {
            return Err(Error::InvalidParameter(format!(
                "fields have 1 or 2 components, not {components}"
            )));
        }
        let expected = components * space.ndof;
        if coefficients.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coefficients.len(),
            });
        }
        Ok(Self {
            space,
            components,
            coefficients,
        })
    }

    pub fn zeros(space: Arc<FeSpace>, components: usize) -> Self {
        let n = components * space.ndof;
        Self::new(space, components, vec![0.0; n]).expect("valid component count")
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.space.ndof;
        &self.coefficients[c * n..(c + 1) * n]
    }

    /// Values of all components at a barycentric point of triangle `t`.
    pub fn evaluate(&self, t: usize, bary: [f64; 3]) -> Vec<f64> {
        let nloc = self.space.nloc();
        let mut phi = vec![0.0; nloc];
        self.space.basis.values(bary, &mut phi);
        let dofs = self.space.element_dofs(t);
        (0..self.components)
            .map(|c| {
                let coef = self.component(c);
                dofs.iter().zip(&phi).map(|(&d, p)| coef[d] * p).sum()
            })
            .collect()
    }

    /// Gradient of every component at a barycentric point of triangle `t`.
    pub fn gradient(&self, t: usize, bary: [f64; 3]) -> Vec<[f64; 2]> {
        let nloc = self.space.nloc();
        let mut dl = vec![[0.0; 3]; nloc];
        self.space.basis.lambda_derivatives(bary, &mut dl);
        let geo = ElementGeometry::new(&self.space.mesh, t);
        let dofs = self.space.element_dofs(t);
        (0..self.components)
            .map(|c| {
                let coef = self.component(c);
                let mut g = [0.0; 2];
                for (&d, l) in dofs.iter().zip(&dl) {
                    let gi = geo.gradient(*l);
                    g[0] += coef[d] * gi[0];
                    g[1] += coef[d] * gi[1];
                }
                g
            })
            .collect()
    }

    /// `∂u₂/∂x − ∂u₁/∂y` of a vector field.
    pub fn curl(&self, t: usize, bary: [f64; 3]) -> f64 {
        assert_eq!(self.components, 2);
        let g = self.gradient(t, bary);
        g[1][0] - g[0][1]
    }

    /// True when every boundary coefficient is exactly zero.
    pub fn vanishes_on_boundary(&self) -> bool {
        (0..self.components).all(|c| {
            let coef = self.component(c);
            self.space.boundary_dofs.iter().all(|&d| coef[d] == 0.0)
        })
    }

    /// Text dump: `field <ndof> <components> <degree> <kind>` then one coefficient per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(24 * self.coefficients.len() + 64);
        writeln!(
            s,
            "field {} {} {} {}",
            self.space.ndof,
            self.components,
            self.space.degree,
            self.space.kind.name()
        )
        .unwrap();
        for v in &self.coefficients {
            writeln!(s, "{v:?}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str, space: Arc<FeSpace>) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty input".into()))?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 5 || tok[0] != "field" {
            return Err(perr(1, "expected `field <ndof> <components> <degree> <kind>`".into()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| perr(1, e.to_string()));
        let (ndof, components, degree) = (num(tok[1])?, num(tok[2])?, num(tok[3])?);
        let kind = SpaceKind::parse(tok[4])?;
        if ndof != space.ndof || degree != space.degree || kind != space.kind {
            return Err(perr(1, "field header does not match the space".into()));
        }
        let coefficients = lines
            .map(|(i, l)| l.trim().parse::<f64>().map_err(|e| perr(i + 1, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, components, coefficients)
    }
}

/// Nodal interpolant of a scalar function; bubble coefficients are zero.
pub fn interpolate(space: &Arc<FeSpace>, f: impl Fn(Point) -> f64) -> Field {
    let coefficients = lagrange_nodes(space).map(|(_, p)| p.map_or(0.0, &f)).collect();
    Field::new(space.clone(), 1, coefficients).unwrap()
}

pub fn interpolate_vector(space: &Arc<FeSpace>, f: impl Fn(Point) -> [f64; 2]) -> Field {
    let vals: Vec<Option<[f64; 2]>> = lagrange_nodes(space).map(|(_, p)| p.map(&f)).collect();
    let mut coefficients: Vec<f64> = vals.iter().map(|v| v.map_or(0.0, |v| v[0])).collect();
    coefficients.extend(vals.iter().map(|v| v.map_or(0.0, |v| v[1])));
    Field::new(space.clone(), 2, coefficients).unwrap()
}

/// DOF index with its node, `None` for bubbles.
fn lagrange_nodes(space: &FeSpace) -> impl Iterator<Item = (usize, Option<Point>)> + '_ {
    let first_bubble = if space.basis.bubble {
        space.ndof - space.mesh.num_triangles()
    } else {
        space.ndof
    };
    space
        .dof_coords
        .iter()
        .enumerate()
        .map(move |(i, &p)| (i, (i < first_bubble).then_some(p)))
}

/// Levels of two meshes inside a hierarchy, checking that they belong to it.
pub fn hierarchy_levels(h: &MeshHierarchy, coarse: &Arc<Mesh>, fine: &Arc<Mesh>) -> Result<(usize, usize)> {
    let find = |m: &Arc<Mesh>| -> Option<usize> {
        let l = m.level;
        let cand = h.levels.get(l)?;
        (Arc::ptr_eq(cand, m) || **cand == **m).then_some(l)
    };
    match (find(coarse), find(fine)) {
        (Some(c), Some(f)) if c <= f => Ok((c, f)),
        _ => Err(Error::NotNested {
            coarse: coarse.level,
            fine: fine.level,
        }),
    }
}

/// Re-represents a coarse field on a nested finer Lagrange space by evaluating it at
/// the fine nodes through the ancestor triangles. Exact whenever the fine space
/// contains the coarse one.
pub fn prolongate(h: &MeshHierarchy, coarse: &Field, fine_space: &Arc<FeSpace>) -> Result<Field> {
    if fine_space.kind != SpaceKind::Lagrange {
        return Err(Error::UnsupportedSpace {
            degree: fine_space.degree,
            kind: format!("{} (prolongation target)", fine_space.kind.name()),
        });
    }
    let (lc, lf) = hierarchy_levels(h, &coarse.space.mesh, &fine_space.mesh)?;
    let cmesh = &coarse.space.mesh;
    let n = fine_space.ndof;
    let mut out = vec![0.0; coarse.components * n];
    let mut done = vec![false; n];
    for t in 0..fine_space.mesh.num_triangles() {
        let anc = h.ancestor(lf, t, lc);
        for &d in fine_space.element_dofs(t) {
            if done[d] {
                continue;
            }
            done[d] = true;
            let bary = cmesh.barycentric(anc, fine_space.dof_coords[d]);
            for (c, v) in coarse.evaluate(anc, bary).into_iter().enumerate() {
                out[c * n + d] = v;
            }
        }
    }
    // nodal values on the boundary of a Dirichlet field are zero up to rounding
    for c in 0..coarse.components {
        if coarse.space.boundary_dofs.iter().all(|&d| coarse.component(c)[d] == 0.0) {
            for &d in &fine_space.boundary_dofs {
                out[c * n + d] = 0.0;
            }
        }
    }
    Field::new(fine_space.clone(), coarse.components, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::builtin_domain;

    fn square_mesh() -> Arc<Mesh> {
        Arc::new(builtin_domain("square").unwrap().1)
    }

    #[test]
    fn dof_counts_on_square() {
        let m = square_mesh();
        let p1 = FeSpace::new(m.clone(), 1, SpaceKind::Lagrange).unwrap();
        assert_eq!((p1.ndof, p1.boundary_dofs.len()), (5, 4));
        let p2 = FeSpace::new(m.clone(), 2, SpaceKind::Lagrange).unwrap();
        assert_eq!(p2.ndof, 13);
        assert_eq!(p2.boundary_dofs.len(), 8);
        let p3 = FeSpace::new(m.clone(), 3, SpaceKind::Lagrange).unwrap();
        assert_eq!(p3.ndof, 5 + 2 * 8 + 4);
        let mini = FeSpace::mini(m.clone()).unwrap();
        assert_eq!(mini.ndof, 9);
        assert_eq!(mini.boundary_dofs, vec![0, 1, 2, 3]);
        assert!(FeSpace::new(m.clone(), 2, SpaceKind::LagrangeBubble).is_err());
        assert!(FeSpace::new(m, 4, SpaceKind::Lagrange).is_err());
    }

    #[test]
    fn basis_is_nodal() {
        for k in 1..=3 {
            let b = LocalBasis::new(k, false);
            let nodes = b.nodes();
            let mut v = vec![0.0; b.len()];
            for (i, n) in nodes.iter().enumerate() {
                b.values(*n, &mut v);
                for (j, vj) in v.iter().enumerate() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((vj - e).abs() < 1e-14, "k={k} node {i} fn {j}: {vj}");
                }
            }
        }
        let b = LocalBasis::new(1, true);
        let mut v = vec![0.0; 4];
        b.values([1.0 / 3.0; 3], &mut v);
        assert!((v[3] - 1.0 / 27.0).abs() < 1e-16);
    }

    #[test]
    fn lambda_derivatives_match_differences() {
        let b = LocalBasis::new(3, false);
        let l = [0.2, 0.3, 0.5];
        let mut d = vec![[0.0; 3]; b.len()];
        b.lambda_derivatives(l, &mut d);
        let h = 1e-6;
        for i in 0..3 {
            let mut lp = l;
            let mut lm = l;
            lp[i] += h;
            lm[i] -= h;
            let mut vp = vec![0.0; b.len()];
            let mut vm = vec![0.0; b.len()];
            b.values(lp, &mut vp);
            b.values(lm, &mut vm);
            for j in 0..b.len() {
                assert!(((vp[j] - vm[j]) / (2.0 * h) - d[j][i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn edge_dofs_shared_by_neighbors() {
        let m = square_mesh();
        let s = FeSpace::new(m, 3, SpaceKind::Lagrange).unwrap();
        let nodes = s.basis.nodes();
        for t in 0..s.mesh.num_triangles() {
            for (d, b) in s.element_dofs(t).iter().zip(&nodes) {
                let p = s.mesh.point_from_barycentric(t, *b);
                let q = s.dof_coords[*d];
                assert!((p[0] - q[0]).abs() < 1e-15 && (p[1] - q[1]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_and_evaluates() {
        let m = square_mesh();
        let s = Arc::new(FeSpace::new(m, 2, SpaceKind::Lagrange).unwrap());
        let f = interpolate(&s, |p| p[0].sin());
        for (i, p) in s.dof_coords.iter().enumerate() {
            assert_eq!(f.coefficients[i], p[0].sin());
        }
        let g = interpolate(&s, |p| p[0] * p[1]);
        let v = g.evaluate(1, [0.2, 0.5, 0.3]);
        let x = s.mesh.point_from_barycentric(1, [0.2, 0.5, 0.3]);
        assert!((v[0] - x[0] * x[1]).abs() < 1e-14);
        let gr = g.gradient(1, [0.2, 0.5, 0.3]);
        assert!((gr[0][0] - x[1]).abs() < 1e-13 && (gr[0][1] - x[0]).abs() < 1e-13);
    }

    #[test]
    fn field_text_round_trip() {
        let m = square_mesh();
        let s = Arc::new(FeSpace::mini(m).unwrap());
        let f = interpolate_vector(&s, |p| [p[0] / 3.0, p[1].exp()]);
        let g = Field::from_text(&f.to_text(), s.clone()).unwrap();
        assert_eq!(f.coefficients, g.coefficients);
        assert!(f.to_text().starts_with("field 9 2 1 lagrange_bubble\n"));
        let p2 = Arc::new(FeSpace::new(s.mesh.clone(), 2, SpaceKind::Lagrange).unwrap());
        assert!(Field::from_text(&f.to_text(), p2).is_err());
    }
}
