//! Polygonal domains, nested triangulations and graded refinement.
//!
//! Every refinement splits each triangle `(a, b, c)` into four children stored at
//! indices `4t .. 4t + 4` of the next level: the three corner children
//! `(a, ab, ca)`, `(ab, b, bc)`, `(ca, bc, c)` and the inner child `(bc, ca, ab)`.
//! Points of the coarse level keep their indices on the fine level.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::corner::GradingRule;
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Tolerance for barycentric containment tests.
pub const LOCATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonDomain {
    /// Polygon vertices in counterclockwise order.
    pub vertices: Vec<Point>,
    pub interior_angles: Vec<f64>,
    pub graded_corners: BTreeSet<usize>,
}

impl PolygonDomain {
    pub fn new(vertices: Vec<Point>, graded_corners: BTreeSet<usize>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidParameter("polygon needs at least 3 vertices".into()));
        }
        if let Some(&c) = graded_corners.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidParameter(format!("graded corner {c} out of range")));
        }
        let area: f64 = (0..n)
            .map(|i| {
                let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum();
        if area <= 0.0 {
            return Err(Error::InvalidParameter(
                "polygon vertices must be counterclockwise".into(),
            ));
        }
        if !is_simple(&vertices) {
            return Err(Error::InvalidParameter("polygon is not simple".into()));
        }
        let interior_angles = polygon_angles(&vertices);
        if let Some(w) = interior_angles.iter().find(|w| (**w - PI).abs() < 1e-12) {
            return Err(Error::InvalidAngle { omega: *w });
        }
        Ok(Self {
            vertices,
            interior_angles,
            graded_corners,
        })
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let (p, q) = (self.vertices[i], self.vertices[(i + 1) % n]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum::<f64>()
    }

    /// Even-odd point-in-polygon test; points on the boundary may go either way.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Largest interior angle and its vertex index.
    pub fn largest_angle(&self) -> (usize, f64) {
        self.interior_angles
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    }
}

/// Interior angles of a counterclockwise polygon.
pub fn polygon_angles(vertices: &[Point]) -> Vec<f64> {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let prev = vertices[(i + n - 1) % n];
            let v = vertices[i];
            let next = vertices[(i + 1) % n];
            let e_in = [v[0] - prev[0], v[1] - prev[1]];
            let e_out = [next[0] - v[0], next[1] - v[1]];
            let turn = (e_in[0] * e_out[1] - e_in[1] * e_out[0])
                .atan2(e_in[0] * e_out[0] + e_in[1] * e_out[1]);
            PI - turn
        })
        .collect()
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d = |a: Point, b: Point, c: Point| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let d1 = d(q1, q2, p1);
    let d2 = d(q1, q2, p2);
    let d3 = d(p1, p2, q1);
    let d4 = d(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn is_simple(v: &[Point]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub points: Vec<Point>,
    /// Counterclockwise point indices.
    pub triangles: Vec<[usize; 3]>,
    pub level: usize,
    /// Index of the parent triangle on the previous level (`None` on level 0).
    pub parent: Vec<Option<usize>>,
    /// Polygon vertex id carried by a point, if any.
    pub corner_vertex: Vec<Option<usize>>,
    /// Boundary edges as sorted point-index pairs.
    pub boundary_edges: BTreeSet<(usize, usize)>,
}

pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

impl Mesh {
    /// Level-0 mesh; boundary edges are derived from edge incidence.
    pub fn new(
        points: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        corner_vertex: Vec<Option<usize>>,
    ) -> Result<Self> {
        if corner_vertex.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: corner_vertex.len(),
            });
        }
        let ntri = triangles.len();
        let mut mesh = Self {
            points,
            triangles,
            level: 0,
            parent: vec![None; ntri],
            corner_vertex,
            boundary_edges: BTreeSet::new(),
        };
        mesh.validate_triangles()?;
        mesh.boundary_edges = mesh.edges_with_count(1);
        Ok(mesh)
    }

    fn validate_triangles(&self) -> Result<()> {
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.points.len()) {
                return Err(Error::InvalidParameter(format!(
                    "triangle {t} references a missing point"
                )));
            }
            if self.area(t) <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "triangle {t} is not counterclockwise"
                )));
            }
        }
        Ok(())
    }

    /// Edge -> number of incident triangles.
    pub fn edge_incidence(&self) -> BTreeMap<(usize, usize), usize> {
        let mut m = BTreeMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                *m.entry(edge_key(tri[e], tri[(e + 1) % 3])).or_insert(0) += 1;
            }
        }
        m
    }

    fn edges_with_count(&self, count: usize) -> BTreeSet<(usize, usize)> {
        self.edge_incidence()
            .into_iter()
            .filter(|&(_, c)| c == count)
            .map(|(e, _)| e)
            .collect()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices_of(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.points[a], self.points[b], self.points[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices_of(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.vertices_of(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices_of(t);
        let d = |p: Point, q: Point| (p[0] - q[0]).hypot(p[1] - q[1]);
        d(a, b).max(d(b, c)).max(d(c, a))
    }

    pub fn min_angle(&self, t: usize) -> f64 {
        let v = self.vertices_of(t);
        (0..3)
            .map(|i| {
                let (p, q, r) = (v[i], v[(i + 1) % 3], v[(i + 2) % 3]);
                let u = [q[0] - p[0], q[1] - p[1]];
                let w = [r[0] - p[0], r[1] - p[1]];
                (u[0] * w[1] - u[1] * w[0]).abs().atan2(u[0] * w[0] + u[1] * w[1])
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.vertices_of(t);
        let area = signed_area(a, b, c);
        let l1 = signed_area(a, p, c) / area;
        let l2 = signed_area(a, b, p) / area;
        [1.0 - l1 - l2, l1, l2]
    }

    pub fn point_from_barycentric(&self, t: usize, bary: [f64; 3]) -> Point {
        let [a, b, c] = self.vertices_of(t);
        [
            bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
            bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
        ]
    }

    /// Points lying on the boundary.
    pub fn boundary_points(&self) -> BTreeSet<usize> {
        self.boundary_edges
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect()
    }

    /// Point index of a polygon corner.
    pub fn corner_point(&self, corner: usize) -> Option<usize> {
        self.corner_vertex.iter().position(|&c| c == Some(corner))
    }

    /// True when every interior edge has two incident triangles and every other edge
    /// is a recorded boundary edge.
    pub fn is_conforming(&self) -> bool {
        self.edge_incidence().into_iter().all(|(e, c)| match c {
            2 => !self.boundary_edges.contains(&e),
            1 => self.boundary_edges.contains(&e),
            _ => false,
        })
    }

    /// One graded refinement step. Edges touching a corner in `rules` get their new node
    /// at `A + kappa (B - A)` from that corner `A`; all other edges are bisected.
    pub fn graded_refine(&self, rules: &BTreeMap<usize, GradingRule>) -> Result<Mesh> {
        let mut kappa_at: HashMap<usize, f64> = HashMap::new();
        for (&corner, rule) in rules {
            let p = self
                .corner_point(corner)
                .ok_or(Error::CornerNotGraded(corner))?;
            if !(rule.kappa > 0.0 && rule.kappa <= 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "grading factor {} at corner {corner} not in (0, 0.5]",
                    rule.kappa
                )));
            }
            kappa_at.insert(p, rule.kappa);
        }

        let mut points = self.points.clone();
        let mut corner_vertex = self.corner_vertex.clone();
        let mut edge_node: HashMap<(usize, usize), usize> = HashMap::new();
        let mut node_for = |a: usize, b: usize, points: &mut Vec<Point>| -> Result<usize> {
            let key = edge_key(a, b);
            if let Some(&n) = edge_node.get(&key) {
                return Ok(n);
            }
            let (lo, hi) = key;
            let (pa, pb) = (self.points[lo], self.points[hi]);
            let ka = kappa_at.get(&lo).copied().filter(|&k| k != 0.5);
            let kb = kappa_at.get(&hi).copied().filter(|&k| k != 0.5);
            let p = match (ka, kb) {
                (Some(_), Some(_)) => return Err(Error::GradedEdge { a: lo, b: hi }),
                (Some(k), None) => [pa[0] + k * (pb[0] - pa[0]), pa[1] + k * (pb[1] - pa[1])],
                (None, Some(k)) => [pb[0] + k * (pa[0] - pb[0]), pb[1] + k * (pa[1] - pb[1])],
                (None, None) => [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])],
            };
            let n = points.len();
            points.push(p);
            edge_node.insert(key, n);
            Ok(n)
        };

        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut parent = Vec::with_capacity(4 * self.triangles.len());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = node_for(a, b, &mut points)?;
            let bc = node_for(b, c, &mut points)?;
            let ca = node_for(c, a, &mut points)?;
            let children = [[a, ab, ca], [ab, b, bc], [ca, bc, c], [bc, ca, ab]];
            let parent_area = self.area(t);
            for child in children {
                let area = signed_area(points[child[0]], points[child[1]], points[child[2]]);
                if area < 1e-14 * parent_area {
                    return Err(Error::DegenerateTriangle { triangle: t });
                }
                triangles.push(child);
                parent.push(Some(t));
            }
        }
        corner_vertex.resize(points.len(), None);

        let mut boundary_edges = BTreeSet::new();
        for &(a, b) in &self.boundary_edges {
            let m = edge_node[&(a, b)];
            boundary_edges.insert(edge_key(a, m));
            boundary_edges.insert(edge_key(m, b));
        }

        Ok(Mesh {
            points,
            triangles,
            level: self.level + 1,
            parent,
            corner_vertex,
            boundary_edges,
        })
    }

    /// Text dump: `mesh <np> <nt> <level>`, `p x y [corner]`, `t i j k [parent]`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "mesh {} {} {}",
            self.points.len(),
            self.triangles.len(),
            self.level
        )
        .unwrap();
        for (p, c) in self.points.iter().zip(&self.corner_vertex) {
            match c {
                Some(c) => writeln!(s, "p {:?} {:?} {c}", p[0], p[1]).unwrap(),
                None => writeln!(s, "p {:?} {:?}", p[0], p[1]).unwrap(),
            }
        }
        for (t, par) in self.triangles.iter().zip(&self.parent) {
            match par {
                Some(q) => writeln!(s, "t {} {} {} {q}", t[0], t[1], t[2]).unwrap(),
                None => writeln!(s, "t {} {} {}", t[0], t[1], t[2]).unwrap(),
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        Ok(parse_mesh_text(text)?.0)
    }
}

type ParsedMesh = (Mesh, Vec<(usize, bool)>);

fn parse_mesh_text(text: &str) -> Result<ParsedMesh> {
    let perr = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut header: Option<(usize, usize, usize)> = None;
    let mut points = Vec::new();
    let mut corner_vertex = Vec::new();
    let mut triangles = Vec::new();
    let mut parent = Vec::new();
    let mut corners = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let raw = raw.split('#').next().unwrap().trim();
        if raw.is_empty() {
            continue;
        }
        let tok: Vec<&str> = raw.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            tok.get(i)
                .ok_or_else(|| perr(line, "missing field"))?
                .parse::<usize>()
                .map_err(|e| perr(line, &e.to_string()))
        };
        let real = |i: usize| -> Result<f64> {
            tok.get(i)
                .ok_or_else(|| perr(line, "missing field"))?
                .parse::<f64>()
                .map_err(|e| perr(line, &e.to_string()))
        };
        match tok[0] {
            "mesh" => header = Some((num(1)?, num(2)?, num(3)?)),
            "p" => {
                points.push([real(1)?, real(2)?]);
                corner_vertex.push(if tok.len() > 3 { Some(num(3)?) } else { None });
            }
            "t" => {
                triangles.push([num(1)?, num(2)?, num(3)?]);
                parent.push(if tok.len() > 4 { Some(num(4)?) } else { None });
            }
            "corner" => corners.push((num(1)?, num(2)? != 0)),
            other => return Err(perr(line, &format!("unknown record `{other}`"))),
        }
    }
    let (np, nt, level) = header.ok_or_else(|| perr(1, "missing `mesh` header"))?;
    if np != points.len() || nt != triangles.len() {
        return Err(perr(1, "header counts do not match records"));
    }
    let mut mesh = Mesh::new(points, triangles, corner_vertex)?;
    mesh.level = level;
    mesh.parent = parent;
    Ok((mesh, corners))
}

/// Reads a level-0 mesh with `corner <vertex-index> <graded>` records; the polygon is
/// formed by the points carrying corner ids, ordered by id.
pub fn read_polygon_mesh(text: &str) -> Result<(PolygonDomain, Mesh)> {
    let (mesh, corners) = parse_mesh_text(text)?;
    if mesh.level != 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "custom polygon meshes must be level 0".into(),
        });
    }
    let mut by_id: BTreeMap<usize, Point> = BTreeMap::new();
    for (p, c) in mesh.points.iter().zip(&mesh.corner_vertex) {
        if let Some(c) = c {
            by_id.insert(*c, *p);
        }
    }
    if by_id.keys().copied().ne(0..by_id.len()) {
        return Err(Error::Parse {
            line: 1,
            msg: "corner ids must be 0..n".into(),
        });
    }
    let graded = corners
        .iter()
        .filter(|(_, g)| *g)
        .map(|(c, _)| *c)
        .collect();
    let domain = PolygonDomain::new(by_id.into_values().collect(), graded)?;
    Ok((domain, mesh))
}

/// Names of the builtin experiment domains.
pub const BUILTIN_DOMAINS: [&str; 3] = ["square", "lshape", "convex_11pi12"];

/// Builtin experiment domains with their level-0 triangulations.
pub fn builtin_domain(name: &str) -> Result<(PolygonDomain, Mesh)> {
    match name {
        "square" => {
            let v = vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
            let mut pts = v.clone();
            pts.push([0.0, 0.0]);
            let tris = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
            let cv = vec![Some(0), Some(1), Some(2), Some(3), None];
            Ok((PolygonDomain::new(v, BTreeSet::new())?, Mesh::new(pts, tris, cv)?))
        }
        "lshape" => {
            let v = vec![
                [-1.0, -1.0],
                [0.0, -1.0],
                [0.0, 0.0],
                [1.0, 0.0],
                [1.0, 1.0],
                [-1.0, 1.0],
            ];
            let mut pts = v.clone();
            pts.push([0.0, 1.0]);
            pts.push([-1.0, 0.0]);
            let tris = vec![[2, 3, 4], [2, 4, 6], [2, 6, 5], [2, 5, 7], [2, 7, 0], [2, 0, 1]];
            let mut cv: Vec<Option<usize>> = (0..6).map(Some).collect();
            cv.extend([None, None]);
            Ok((
                PolygonDomain::new(v, BTreeSet::from([2]))?,
                Mesh::new(pts, tris, cv)?,
            ))
        }
        "convex_11pi12" => {
            let c1 = (11.0 * PI / 24.0).tan();
            let c2 = (13.0 * PI / 72.0).tan();
            let s = c1 / c2 + 1.0;
            let v = vec![
                [0.0, 0.0],
                [2.0 / s, -2.0 * c1 / s],
                [2.0, 0.0],
                [2.0 / s, 2.0 * c1 / s],
            ];
            let tris = vec![[0, 1, 2], [0, 2, 3]];
            let cv = (0..4).map(Some).collect();
            Ok((
                PolygonDomain::new(v.clone(), BTreeSet::from([0]))?,
                Mesh::new(v, tris, cv)?,
            ))
        }
        other => Err(Error::UnknownDomain(other.to_string())),
    }
}

/// A domain with its nested graded refinements `levels[0..=n]`.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub domain: PolygonDomain,
    /// Grading rules per polygon corner.
    pub rules: BTreeMap<usize, GradingRule>,
    pub levels: Vec<Arc<Mesh>>,
}

impl MeshHierarchy {
    pub fn new(
        domain: PolygonDomain,
        initial: Mesh,
        rules: BTreeMap<usize, GradingRule>,
    ) -> Result<Self> {
        for &c in rules.keys() {
            if !domain.graded_corners.contains(&c) {
                return Err(Error::CornerNotGraded(c));
            }
        }
        for &(a, b) in initial.edge_incidence().keys() {
            let graded = |p: usize| {
                initial.corner_vertex[p].is_some_and(|c| domain.graded_corners.contains(&c))
            };
            if graded(a) && graded(b) {
                return Err(Error::GradedEdge { a, b });
            }
        }
        Ok(Self {
            domain,
            rules,
            levels: vec![Arc::new(initial)],
        })
    }

    /// Builtin domain with the same grading factor at every flagged corner.
    pub fn builtin(name: &str, kappa: f64) -> Result<Self> {
        let (domain, mesh) = builtin_domain(name)?;
        let rule = GradingRule::from_kappa(kappa)?;
        let rules = domain.graded_corners.iter().map(|&c| (c, rule)).collect();
        Self::new(domain, mesh, rules)
    }

    pub fn refine_to(&mut self, level: usize) -> Result<()> {
        while self.levels.len() <= level {
            let next = self.levels.last().unwrap().graded_refine(&self.rules)?;
            self.levels.push(Arc::new(next));
        }
        Ok(())
    }

    pub fn finest(&self) -> &Arc<Mesh> {
        self.levels.last().unwrap()
    }

    pub fn level(&self, n: usize) -> &Arc<Mesh> {
        &self.levels[n]
    }

    /// Ancestor index of triangle `t` of level `level` on level `ancestor_level`.
    pub fn ancestor(&self, level: usize, t: usize, ancestor_level: usize) -> usize {
        debug_assert!(ancestor_level <= level);
        t >> (2 * (level - ancestor_level))
    }

    /// Layer index of each triangle of `level` with respect to `corner`: the largest `t`
    /// such that its level-`t` ancestor touches the corner. Triangles whose level-0
    /// ancestor does not touch the corner get `None`.
    pub fn mesh_layers(&self, level: usize, corner: usize) -> Result<Vec<Option<usize>>> {
        if !self.domain.graded_corners.contains(&corner) {
            return Err(Error::CornerNotGraded(corner));
        }
        let cp = self.levels[0]
            .corner_point(corner)
            .ok_or(Error::CornerNotGraded(corner))?;
        let mesh = &self.levels[level];
        Ok((0..mesh.num_triangles())
            .map(|t| {
                let mut layer = None;
                for l in 0..=level {
                    let a = self.ancestor(level, t, l);
                    if self.levels[l].triangles[a].contains(&cp) {
                        layer = Some(l);
                    } else {
                        break;
                    }
                }
                layer
            })
            .collect())
    }

    /// Containing triangle of `p` on `level` (lowest index among candidates) and its
    /// barycentric coordinates, found by descending the refinement tree.
    pub fn locate_point(&self, level: usize, p: Point) -> Result<(usize, [f64; 3])> {
        let inside = |mesh: &Mesh, t: usize| mesh.barycentric(t, p).iter().all(|&l| l >= -LOCATE_TOL);
        let m0 = &self.levels[0];
        let mut cand: Vec<usize> = (0..m0.num_triangles()).filter(|&t| inside(m0, t)).collect();
        for l in 1..=level {
            let mesh = &self.levels[l];
            cand = cand
                .iter()
                .flat_map(|&t| 4 * t..4 * t + 4)
                .filter(|&c| inside(mesh, c))
                .collect();
        }
        let t = cand
            .into_iter()
            .min()
            .ok_or(Error::PointOutside { x: p[0], y: p[1] })?;
        Ok((t, self.levels[level].barycentric(t, p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![Some(0), Some(1), Some(2)],
        )
        .unwrap()
    }

    #[test]
    fn builtin_square() {
        let (d, m) = builtin_domain("square").unwrap();
        assert_eq!(d.vertices.len(), 4);
        for w in &d.interior_angles {
            assert!((w - PI / 2.0).abs() < 1e-12);
        }
        assert!(d.graded_corners.is_empty());
        assert_eq!((m.num_points(), m.num_triangles()), (5, 4));
        assert!((m.total_area() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn builtin_lshape_and_kite() {
        let (d, m) = builtin_domain("lshape").unwrap();
        assert_eq!(m.num_triangles(), 6);
        assert!((d.interior_angles[2] - 1.5 * PI).abs() < 1e-12);
        assert_eq!(d.graded_corners, BTreeSet::from([2]));
        assert_eq!(m.points[m.corner_point(2).unwrap()], [0.0, 0.0]);
        assert!((m.total_area() - 3.0).abs() < 1e-14);

        let (d, m) = builtin_domain("convex_11pi12").unwrap();
        assert_eq!(d.vertices[2], [2.0, 0.0]);
        let (i, w) = d.largest_angle();
        assert_eq!(i, 0);
        assert!((w - 11.0 * PI / 12.0).abs() < 1e-12);
        assert!((d.interior_angles.iter().sum::<f64>() - 2.0 * PI).abs() < 1e-12);
        assert_eq!(polygon_angles(&d.vertices), d.interior_angles);
        assert!(m.is_conforming());
        assert!(matches!(builtin_domain("disk"), Err(Error::UnknownDomain(_))));
    }

    #[test]
    fn graded_node_rule() {
        let m = unit_triangle();
        let rules = BTreeMap::from([(0, GradingRule::from_kappa(0.2).unwrap())]);
        let f = m.graded_refine(&rules).unwrap();
        assert_eq!(f.num_triangles(), 4);
        assert_eq!(&f.points[3..], &[[0.2, 0.0], [0.5, 0.5], [0.0, 0.2]]);
        assert!(f.parent.iter().all(|p| *p == Some(0)));
        assert!((f.total_area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn midpoint_refinement_is_congruent() {
        let m = unit_triangle();
        let f = m.graded_refine(&BTreeMap::new()).unwrap();
        for t in 0..4 {
            assert!((f.area(t) - 0.125).abs() < 1e-15);
            assert!((f.diameter(t) - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_edge_between_graded_corners() {
        let m = unit_triangle();
        let r = GradingRule::from_kappa(0.2).unwrap();
        let rules = BTreeMap::from([(0, r), (1, r)]);
        assert!(matches!(m.graded_refine(&rules), Err(Error::GradedEdge { .. })));
        let rules = BTreeMap::from([(7, r)]);
        assert!(matches!(m.graded_refine(&rules), Err(Error::CornerNotGraded(7))));
    }

    #[test]
    fn graded_corner_diameters_shrink_by_kappa() {
        let mut h = MeshHierarchy::builtin("lshape", 0.2).unwrap();
        h.refine_to(2).unwrap();
        let cp = h.level(0).corner_point(2).unwrap();
        for t0 in 0..6 {
            let d0 = h.level(0).diameter(t0);
            let fine = h.level(2);
            let attached: Vec<usize> = (16 * t0..16 * t0 + 16)
                .filter(|&t| fine.triangles[t].contains(&cp))
                .collect();
            assert_eq!(attached.len(), 1);
            let ratio = fine.diameter(attached[0]) / d0;
            assert!((ratio - 0.04).abs() < 1e-14, "ratio {ratio}");
        }
    }

    #[test]
    fn layers_count_corner_children() {
        let mut h = MeshHierarchy::builtin("lshape", 0.2).unwrap();
        h.refine_to(2).unwrap();
        assert!(h.mesh_layers(0, 2).unwrap().iter().all(|&l| l == Some(0)));
        let l1 = h.mesh_layers(1, 2).unwrap();
        for t0 in 0..6 {
            // child 0 sits on vertex 2 of every fan triangle
            let layers: Vec<_> = (4 * t0..4 * t0 + 4).map(|t| l1[t]).collect();
            assert_eq!(layers, vec![Some(1), Some(0), Some(0), Some(0)]);
        }
        assert!(h.mesh_layers(1, 0).is_err());
    }

    #[test]
    fn locate_vertices_and_centroids() {
        let mut h = MeshHierarchy::builtin("square", 0.5).unwrap();
        h.refine_to(2).unwrap();
        let m0 = h.level(0).clone();
        let (t, b) = h.locate_point(0, m0.centroid(0)).unwrap();
        assert_eq!(t, 0);
        for l in b {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
        // the center vertex is shared by every level-0 triangle
        let (t, b) = h.locate_point(0, [0.0, 0.0]).unwrap();
        assert_eq!(t, 0);
        assert!(b.iter().any(|&l| (l - 1.0).abs() < 1e-15));
        let (t2, _) = h.locate_point(2, [0.0, 0.0]).unwrap();
        let m2 = h.level(2);
        let lowest = (0..m2.num_triangles())
            .find(|&t| m2.barycentric(t, [0.0, 0.0]).iter().all(|&l| l >= -1e-12))
            .unwrap();
        assert_eq!(t2, lowest);
        assert!(matches!(
            h.locate_point(2, [1.5, 0.0]),
            Err(Error::PointOutside { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let mut h = MeshHierarchy::builtin("convex_11pi12", 0.3).unwrap();
        h.refine_to(2).unwrap();
        let m = h.finest();
        let back = Mesh::from_text(&m.to_text()).unwrap();
        assert_eq!(&back, m.as_ref());
    }

    #[test]
    fn polygon_mesh_input() {
        let text = "mesh 4 2 0\np 0 0 0\np 1 0 1\np 1 1 2\np 0 1 3\nt 0 1 2\nt 0 2 3\ncorner 0 1\ncorner 1 0\n";
        let (d, m) = read_polygon_mesh(text).unwrap();
        assert_eq!(d.graded_corners, BTreeSet::from([0]));
        assert_eq!(m.boundary_edges.len(), 4);
        assert!(read_polygon_mesh("mesh 1 0 0\n").is_err());
        assert!(matches!(
            Mesh::from_text("mesh 1 0 0\nq 1 2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_clockwise_polygon() {
        let v = vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        assert!(PolygonDomain::new(v, BTreeSet::new()).is_err());
    }
}
