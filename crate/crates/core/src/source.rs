//! Stokes forcing terms `F` with `curl F = ∂F₂/∂x − ∂F₁/∂y = f`.
//!
//! Analytic forcings are built from closed-form partial antiderivatives of `f`:
//! integrating in `x` gives `F = (0, ∫_{c₁}^x f)`, integrating in `y` gives
//! `F = (−∫_{c₂}^y f, 0)`, and any convex blend of the two also works. The discrete
//! alternative solves `−Δw = f` and uses `curl w`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::assembly::assemble_load;
use crate::error::{Error, Result};
use crate::mesh::{Point, PolygonDomain};
use crate::solvers::PoissonSolver;
use crate::space::{FeSpace, Field};

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// Finite-difference step of the `curl F = f` check.
pub const CURL_CHECK_STEP: f64 = 1e-6;
pub const CURL_CHECK_POINTS: usize = 100;
pub const CURL_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Construction {
    IntegralX,
    IntegralY,
    /// `F = (−η ∫ f dy, (1 − η) ∫ f dx)`.
    Blend(f64),
    Custom,
}

/// Closed-form partial antiderivatives of `f`.
#[derive(Clone, Default)]
pub struct Antiderivatives {
    /// `G` with `∂G/∂x = f`.
    pub in_x: Option<ScalarFn>,
    /// `G` with `∂G/∂y = f`.
    pub in_y: Option<ScalarFn>,
}

#[derive(Clone)]
pub struct AnalyticSource {
    pub f: ScalarFn,
    pub force: VectorFn,
    pub construction: Construction,
    pub c1: f64,
    pub c2: f64,
}

impl fmt::Debug for AnalyticSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticSource")
            .field("construction", &self.construction)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .finish_non_exhaustive()
    }
}

impl AnalyticSource {
    /// A user-supplied pair; `curl F = f` is checked on `domain`.
    pub fn custom(f: ScalarFn, force: VectorFn, domain: &PolygonDomain) -> Result<Self> {
        validate_curl(&*f, &*force, domain)?;
        Ok(Self {
            f,
            force,
            construction: Construction::Custom,
            c1: 0.0,
            c2: 0.0,
        })
    }

    /// Zero load and zero forcing.
    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_| 0.0),
            force: Arc::new(|_| [0.0, 0.0]),
            construction: Construction::Custom,
            c1: 0.0,
            c2: 0.0,
        }
    }
}

/// Builds `F` from antiderivatives with lower limits `c1` (in x) and `c2` (in y).
pub fn build_f_integral(
    f: ScalarFn,
    anti: &Antiderivatives,
    construction: Construction,
    c1: f64,
    c2: f64,
    domain: &PolygonDomain,
) -> Result<AnalyticSource> {
    let need = |g: &Option<ScalarFn>, what: &str| {
        g.clone()
            .ok_or_else(|| Error::InvalidParameter(format!("construction needs an antiderivative in {what}")))
    };
    let force: VectorFn = match construction {
        Construction::IntegralX => {
            let gx = need(&anti.in_x, "x")?;
            Arc::new(move |p| [0.0, gx(p) - gx([c1, p[1]])])
        }
        Construction::IntegralY => {
            let gy = need(&anti.in_y, "y")?;
            Arc::new(move |p| [-(gy(p) - gy([p[0], c2])), 0.0])
        }
        Construction::Blend(eta) => {
            let gx = need(&anti.in_x, "x")?;
            let gy = need(&anti.in_y, "y")?;
            Arc::new(move |p| {
                [
                    -eta * (gy(p) - gy([p[0], c2])),
                    (1.0 - eta) * (gx(p) - gx([c1, p[1]])),
                ]
            })
        }
        Construction::Custom => {
            return Err(Error::InvalidParameter("use AnalyticSource::custom for custom forcings".into()))
        }
    };
    validate_curl(&*f, &*force, domain)?;
    Ok(AnalyticSource {
        f,
        force,
        construction,
        c1,
        c2,
    })
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    r
}

/// The first `n` points of the (2, 3) Halton sequence falling inside the domain.
pub fn interior_sample_points(domain: &PolygonDomain, n: usize) -> Vec<Point> {
    let (lo, hi) = domain.bounding_box();
    let mut pts = Vec::with_capacity(n);
    let mut i = 1;
    while pts.len() < n {
        let p = [
            lo[0] + (hi[0] - lo[0]) * radical_inverse(i, 2),
            lo[1] + (hi[1] - lo[1]) * radical_inverse(i, 3),
        ];
        if domain.contains(p) {
            pts.push(p);
        }
        i += 1;
    }
    pts
}

/// Checks `curl F = f` by central differences at quasi-random interior points.
pub fn validate_curl(
    f: &dyn Fn(Point) -> f64,
    force: &dyn Fn(Point) -> [f64; 2],
    domain: &PolygonDomain,
) -> Result<()> {
    let pts = interior_sample_points(domain, CURL_CHECK_POINTS);
    let h = CURL_CHECK_STEP;
    let fmax = pts.iter().fold(0.0f64, |m, &p| m.max(f(p).abs()));
    let tol = CURL_CHECK_TOL * (1.0 + fmax);
    for &p in &pts {
        let d2dx = (force([p[0] + h, p[1]])[1] - force([p[0] - h, p[1]])[1]) / (2.0 * h);
        let d1dy = (force([p[0], p[1] + h])[0] - force([p[0], p[1] - h])[0]) / (2.0 * h);
        let r = (d2dx - d1dy - f(p)).abs();
        if !(r <= tol) {
            return Err(Error::SourceValidation {
                residual: r,
                x: p[0],
                y: p[1],
            });
        }
    }
    Ok(())
}

/// Solves `(∇w_n, ∇ψ) = (f, ψ)` with `w_n = 0` on the boundary.
pub fn build_f_curl_w(space: &Arc<FeSpace>, f: &dyn Fn(Point) -> f64, load_order: Option<usize>) -> Result<Field> {
    let solver = PoissonSolver::new(space.clone())?;
    solver.solve(&assemble_load(space, f, load_order))
}

/// Bivariate polynomial `Σ c_ij x^i y^j` with exact calculus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly2 {
    terms: BTreeMap<(u32, u32), f64>,
}

impl Poly2 {
    pub fn new(terms: impl IntoIterator<Item = (f64, u32, u32)>) -> Self {
        let mut p = Self::default();
        for (c, i, j) in terms {
            *p.terms.entry((i, j)).or_insert(0.0) += c;
        }
        p.prune();
        p
    }

    pub fn constant(c: f64) -> Self {
        Self::new([(c, 0, 0)])
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, u32, u32)> + '_ {
        self.terms.iter().map(|(&(i, j), &c)| (c, i, j))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|(i, j)| i + j).max().unwrap_or(0)
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.terms
            .iter()
            .map(|(&(i, j), &c)| c * p[0].powi(i as i32) * p[1].powi(j as i32))
            .sum()
    }

    pub fn dx(&self) -> Self {
        Self::new(self.terms().filter(|t| t.1 > 0).map(|(c, i, j)| (c * i as f64, i - 1, j)))
    }

    pub fn dy(&self) -> Self {
        Self::new(self.terms().filter(|t| t.2 > 0).map(|(c, i, j)| (c * j as f64, i, j - 1)))
    }

    /// Antiderivative in `x` with zero constant.
    pub fn integrate_x(&self) -> Self {
        Self::new(self.terms().map(|(c, i, j)| (c / (i + 1) as f64, i + 1, j)))
    }

    pub fn integrate_y(&self) -> Self {
        Self::new(self.terms().map(|(c, i, j)| (c / (j + 1) as f64, i, j + 1)))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.terms().chain(other.terms()))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.terms().map(|(c, i, j)| (s * c, i, j)))
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(
            self.terms()
                .flat_map(|(a, i, j)| other.terms().map(move |(b, k, l)| (a * b, i + k, j + l))),
        )
    }

    pub fn laplacian(&self) -> Self {
        self.dx().dx().add(&self.dy().dy())
    }

    pub fn bilaplacian(&self) -> Self {
        self.laplacian().laplacian()
    }

    pub fn to_fn(&self) -> ScalarFn {
        let p = self.clone();
        Arc::new(move |x| p.eval(x))
    }

    pub fn antiderivatives(&self) -> Antiderivatives {
        Antiderivatives {
            in_x: Some(self.integrate_x().to_fn()),
            in_y: Some(self.integrate_y().to_fn()),
        }
    }

    /// Parses `c@i,j; c@i,j; ...` meaning `Σ c x^i y^j`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |t: &str| Error::InvalidParameter(format!("bad polynomial term `{t}` (expected c@i,j)"));
        let mut terms = Vec::new();
        for t in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let (c, e) = t.split_once('@').ok_or_else(|| bad(t))?;
            let (i, j) = e.split_once(',').ok_or_else(|| bad(t))?;
            terms.push((
                c.trim().parse().map_err(|_| bad(t))?,
                i.trim().parse().map_err(|_| bad(t))?,
                j.trim().parse().map_err(|_| bad(t))?,
            ));
        }
        Ok(Self::new(terms))
    }
}

/// `(1 − x²)² (1 − y²)²`, clamped on `(−1, 1)²`.
pub fn square_clamped_polynomial() -> Poly2 {
    let a = Poly2::new([(1.0, 0, 0), (-1.0, 2, 0)]);
    let b = Poly2::new([(1.0, 0, 0), (-1.0, 0, 2)]);
    a.mul(&a).mul(&b.mul(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::builtin_domain;

    #[test]
    fn polynomial_calculus() {
        let p = Poly2::parse("3@2,1; -1@0,3; 2@0,0").unwrap();
        assert_eq!(p.eval([2.0, 1.0]), 12.0 - 1.0 + 2.0);
        assert_eq!(p.dx(), Poly2::new([(6.0, 1, 1)]));
        assert_eq!(p.integrate_x().dx(), p);
        assert_eq!(p.integrate_y().dy(), p);
        // harmonic: Δ(3x²y − y³) = 0
        assert_eq!(p.laplacian(), Poly2::default());
        let phi = square_clamped_polynomial();
        assert_eq!(phi.degree(), 8);
        // Δ²[(1-x²)²(1-y²)²] at the origin: 24 + 2·16 + 24 = 80
        assert!((phi.bilaplacian().eval([0.0, 0.0]) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn integral_forcings_for_unit_load() {
        let (d, _) = builtin_domain("lshape").unwrap();
        let one = Poly2::constant(1.0);
        let anti = one.antiderivatives();
        let sx = build_f_integral(one.to_fn(), &anti, Construction::IntegralX, 0.0, 0.0, &d).unwrap();
        assert_eq!((sx.force)([0.3, -0.7]), [0.0, 0.3]);
        let sy = build_f_integral(one.to_fn(), &anti, Construction::IntegralY, 0.0, 0.0, &d).unwrap();
        assert_eq!((sy.force)([0.3, -0.7]), [0.7, 0.0]);
        let sb = build_f_integral(one.to_fn(), &anti, Construction::Blend(0.5), 0.0, 0.0, &d).unwrap();
        assert_eq!((sb.force)([0.4, 0.2]), [-0.1, 0.2]);
    }

    #[test]
    fn inconsistent_antiderivative_is_rejected() {
        let (d, _) = builtin_domain("square").unwrap();
        let f: ScalarFn = Arc::new(|_| 1.0);
        let wrong = Antiderivatives {
            in_x: Some(Arc::new(|p| 2.0 * p[0])),
            in_y: None,
        };
        let e = build_f_integral(f.clone(), &wrong, Construction::IntegralX, 0.0, 0.0, &d);
        assert!(matches!(e, Err(Error::SourceValidation { .. })));
        let e = build_f_integral(f, &wrong, Construction::IntegralY, 0.0, 0.0, &d);
        assert!(matches!(e, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn sample_points_are_interior_and_deterministic() {
        let (d, _) = builtin_domain("lshape").unwrap();
        let a = interior_sample_points(&d, 100);
        assert_eq!(a, interior_sample_points(&d, 100));
        assert!(a.iter().all(|p| !(p[0] > 0.0 && p[1] < 0.0)));
    }
}
