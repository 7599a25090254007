//! Corner singularity exponents and grading parameters.
//!
//! The biharmonic threshold `alpha0` at a corner of interior angle `omega` is the
//! smallest real part among the nontrivial roots of `sin^2(z w) = z^2 sin^2(w)`.
//! The equation factors into the two entire branches `sin(z w) +- z sin(w)`; roots
//! are enumerated per branch by argument-principle subdivision of a rectangle in
//! the right half plane and polished with complex Newton.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default real-part cap of the root search rectangle.
pub const DEFAULT_RE_CAP: f64 = 8.0;
const RE_MIN: f64 = 0.5;
const IM_MIN: f64 = -0.25;
const IM_MAX: f64 = 10.0;
const NEWTON_TOL: f64 = 1e-13;
const EXCLUDED: [f64; 3] = [0.0, 1.0, -1.0];

/// Singularity thresholds at one corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSpectrum {
    pub omega: f64,
    /// Biharmonic threshold.
    pub alpha0: f64,
    /// Poisson threshold `pi / omega`.
    pub beta0: f64,
}

impl CornerSpectrum {
    pub fn new(omega: f64) -> Result<Self> {
        Ok(Self {
            omega,
            alpha0: solve_alpha0(omega)?,
            beta0: beta0(omega)?,
        })
    }
}

/// Graded refinement rule for one corner: `kappa = 2^(-theta / a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradingRule {
    pub a: f64,
    pub theta: f64,
    pub kappa: f64,
}

impl GradingRule {
    pub fn new(theta: f64, a: f64) -> Result<Self> {
        Ok(Self {
            a,
            theta,
            kappa: grading_kappa(theta, a)?,
        })
    }

    /// Rule with a prescribed grading factor. Stored as `a = 1`, `theta = -log2(kappa)`;
    /// `kappa` is kept verbatim so refinement reproduces the requested value bit-exactly.
    pub fn from_kappa(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "grading factor {kappa} not in (0, 0.5]"
            )));
        }
        Ok(Self {
            a: 1.0,
            theta: -kappa.log2(),
            kappa,
        })
    }

    pub fn uniform() -> Self {
        Self {
            a: 1.0,
            theta: 1.0,
            kappa: 0.5,
        }
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega < 2.0 * PI) || (omega - PI).abs() < 1e-12 {
        return Err(Error::InvalidAngle { omega });
    }
    Ok(())
}

/// Poisson corner threshold `pi / omega`.
pub fn beta0(omega: f64) -> Result<f64> {
    if !(omega > 0.0 && omega < 2.0 * PI) {
        return Err(Error::InvalidAngle { omega });
    }
    Ok(PI / omega)
}

/// Residual of the characteristic equation `sin^2(z w) - z^2 sin^2(w)`.
pub fn characteristic_residual(omega: f64, z: Complex64) -> Complex64 {
    let s = (z * omega).sin();
    s * s - z * z * omega.sin().powi(2)
}

pub fn solve_alpha0(omega: f64) -> Result<f64> {
    solve_alpha0_with_cap(omega, DEFAULT_RE_CAP)
}

pub fn solve_alpha0_with_cap(omega: f64, re_cap: f64) -> Result<f64> {
    let roots = characteristic_roots(omega, re_cap)?;
    roots
        .iter()
        .map(|z| z.re)
        .min_by(f64::total_cmp)
        .ok_or(Error::RootSearch {
            re_min: RE_MIN,
            re_max: re_cap,
            im_min: IM_MIN,
            im_max: IM_MAX,
        })
}

/// All nontrivial roots with `0.5 < Re z <= re_cap`, `Im z >= 0`, sorted by real part.
pub fn characteristic_roots(omega: f64, re_cap: f64) -> Result<Vec<Complex64>> {
    check_omega(omega)?;
    if !(re_cap > RE_MIN) {
        return Err(Error::InvalidParameter(format!(
            "root search cap {re_cap} must exceed {RE_MIN}"
        )));
    }
    let fail = || Error::RootSearch {
        re_min: RE_MIN,
        re_max: re_cap,
        im_min: IM_MIN,
        im_max: IM_MAX,
    };
    let mut roots: Vec<Complex64> = Vec::new();
    for sign in [1.0, -1.0] {
        let branch = Branch { omega, sign };
        let rect = Rect {
            x0: RE_MIN,
            x1: re_cap,
            y0: IM_MIN,
            y1: IM_MAX,
        };
        let count = branch.count(&rect).ok_or_else(fail)?;
        branch
            .isolate(&rect, count, 0, &mut roots)
            .ok_or_else(fail)?;
    }
    let mut out: Vec<Complex64> = Vec::new();
    for z in roots {
        // Conjugate pairs straddling the real axis collapse to the upper half plane.
        let z = Complex64::new(z.re, z.im.abs());
        let z = if z.im < 1e-10 {
            Complex64::new(z.re, 0.0)
        } else {
            z
        };
        if EXCLUDED.iter().any(|&e| (z - e).norm() < 1e-8) {
            continue;
        }
        if z.re <= RE_MIN {
            continue;
        }
        if out.iter().any(|w| (w - z).norm() < 1e-9) {
            continue;
        }
        out.push(z);
    }
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn diag(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    fn contains_padded(&self, z: Complex64, pad: f64) -> bool {
        z.re >= self.x0 - pad && z.re <= self.x1 + pad && z.im >= self.y0 - pad && z.im <= self.y1 + pad
    }

    fn split(&self, frac: f64) -> (Rect, Rect) {
        if self.x1 - self.x0 >= self.y1 - self.y0 {
            let xm = self.x0 + frac * (self.x1 - self.x0);
            (Rect { x1: xm, ..*self }, Rect { x0: xm, ..*self })
        } else {
            let ym = self.y0 + frac * (self.y1 - self.y0);
            (Rect { y1: ym, ..*self }, Rect { y0: ym, ..*self })
        }
    }
}

/// One factor `sin(w z) + sign * z * sin(w)` of the characteristic equation.
struct Branch {
    omega: f64,
    sign: f64,
}

impl Branch {
    fn eval(&self, z: Complex64) -> Complex64 {
        (z * self.omega).sin() + z * (self.sign * self.omega.sin())
    }

    fn deriv(&self, z: Complex64) -> Complex64 {
        (z * self.omega).cos() * self.omega + self.sign * self.omega.sin()
    }

    /// Accumulated change of `arg h` along the segment, or `None` if `h` vanishes on it.
    fn arg_change(&self, a: Complex64, b: Complex64) -> Option<f64> {
        const PIECES: usize = 32;
        let mut total = 0.0;
        let mut za = a;
        let mut ha = self.eval(za);
        for i in 1..=PIECES {
            let zb = a + (b - a) * (i as f64 / PIECES as f64);
            let hb = self.eval(zb);
            total += self.arg_piece(za, zb, ha, hb, 0)?;
            za = zb;
            ha = hb;
        }
        Some(total)
    }

    fn arg_piece(
        &self,
        a: Complex64,
        b: Complex64,
        ha: Complex64,
        hb: Complex64,
        depth: usize,
    ) -> Option<f64> {
        if ha.norm() < 1e-280 || hb.norm() < 1e-280 || depth > 40 {
            return None;
        }
        let m = 0.5 * (a + b);
        let hm = self.eval(m);
        if hm.norm() < 1e-280 {
            return None;
        }
        let d1 = (hm / ha).arg();
        let d2 = (hb / hm).arg();
        if d1.abs() < PI / 8.0 && d2.abs() < PI / 8.0 {
            return Some(d1 + d2);
        }
        Some(self.arg_piece(a, m, ha, hm, depth + 1)? + self.arg_piece(m, b, hm, hb, depth + 1)?)
    }

    fn count(&self, r: &Rect) -> Option<usize> {
        let c = [
            Complex64::new(r.x0, r.y0),
            Complex64::new(r.x1, r.y0),
            Complex64::new(r.x1, r.y1),
            Complex64::new(r.x0, r.y1),
        ];
        let mut total = 0.0;
        for i in 0..4 {
            total += self.arg_change(c[i], c[(i + 1) % 4])?;
        }
        let n = total / (2.0 * PI);
        let rounded = n.round();
        if (n - rounded).abs() > 0.1 || rounded < 0.0 {
            return None;
        }
        Some(rounded as usize)
    }

    fn newton(&self, mut z: Complex64) -> Option<Complex64> {
        for _ in 0..100 {
            let h = self.eval(z);
            let dh = self.deriv(z);
            if dh.norm() == 0.0 {
                return None;
            }
            let step = h / dh;
            z -= step;
            if step.norm() <= 1e-15 * z.norm().max(1.0) || self.eval(z).norm() < NEWTON_TOL * 1e-2 {
                // One more polish step once converged.
                let h = self.eval(z);
                let dh = self.deriv(z);
                if dh.norm() > 0.0 {
                    z -= h / dh;
                }
                return (self.eval(z).norm() < NEWTON_TOL).then_some(z);
            }
        }
        (self.eval(z).norm() < NEWTON_TOL).then_some(z)
    }

    fn isolate(&self, r: &Rect, count: usize, depth: usize, out: &mut Vec<Complex64>) -> Option<()> {
        if count == 0 {
            return Some(());
        }
        if count == 1 || r.diag() < 1e-7 {
            if let Some(z) = self.newton(r.center()) {
                if r.contains_padded(z, 1e-9) {
                    out.push(z);
                    return Some(());
                }
            }
            if r.diag() < 1e-7 {
                return None;
            }
        }
        if depth > 80 {
            return None;
        }
        // Off-center cuts so subdivision lines avoid symmetric root positions;
        // a cut through a root shows up as inconsistent child counts.
        for frac in [0.5123, 0.4371, 0.5789, 0.3917] {
            let (a, b) = r.split(frac);
            let (Some(na), Some(nb)) = (self.count(&a), self.count(&b)) else {
                continue;
            };
            if na + nb != count {
                continue;
            }
            self.isolate(&a, na, depth + 1, out)?;
            self.isolate(&b, nb, depth + 1, out)?;
            return Some(());
        }
        None
    }
}

/// `kappa = 2^(-theta / a)` for `0 < a <= theta`.
pub fn grading_kappa(theta: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("exponent budget a = {a} must be positive")));
    }
    if !(theta >= a) {
        return Err(Error::InvalidParameter(format!(
            "refinement strength theta = {theta} below a = {a}"
        )));
    }
    Ok((-theta / a).exp2())
}

fn check_degree_and_budget(k: usize, a: f64, alpha0: f64) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidParameter("polynomial degree must be >= 1".into()));
    }
    if !(a > 0.0 && a < alpha0) {
        return Err(Error::InvalidParameter(format!(
            "exponent budget a = {a} must lie in (0, alpha0 = {alpha0})"
        )));
    }
    Ok(())
}

/// Strength giving optimal H1 rates for the biharmonic approximation:
/// `max{k - 1, min{alpha0, a}}`.
pub fn theta_for_optimal_h1(k: usize, a: f64, alpha0: f64) -> Result<f64> {
    check_degree_and_budget(k, a, alpha0)?;
    Ok((k as f64 - 1.0).max(alpha0.min(a)))
}

/// Strength giving optimal L2 rates: `max{k - 1, (k + 1) / 2, min{alpha0, a}}`.
pub fn theta_for_optimal_l2(k: usize, a: f64, alpha0: f64) -> Result<f64> {
    check_degree_and_budget(k, a, alpha0)?;
    let k = k as f64;
    Ok((k - 1.0).max(0.5 * (k + 1.0)).max(alpha0.min(a)))
}

/// Effective strength seen by the Poisson steps: `min{(beta0/alpha0) max{theta, alpha0}, k}`.
pub fn theta_prime(theta: f64, alpha0: f64, beta0: f64, k: usize) -> Result<f64> {
    if !(theta > 0.0) || !(alpha0 > 0.5) || !(beta0 > 0.0) || k < 1 {
        return Err(Error::InvalidParameter(format!(
            "theta' needs theta > 0, alpha0 > 1/2, beta0 > 0, k >= 1 (got {theta}, {alpha0}, {beta0}, {k})"
        )));
    }
    Ok((beta0 / alpha0 * theta.max(alpha0)).min(k as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reentrant_and_right_angles() {
        assert_abs_diff_eq!(solve_alpha0(1.5 * PI).unwrap(), 0.544483736993940, epsilon = 1e-9);
        assert_abs_diff_eq!(solve_alpha0(0.5 * PI).unwrap(), 2.739593356324596, epsilon = 1e-9);
        assert_abs_diff_eq!(solve_alpha0(1.75 * PI).unwrap(), 0.505009699452470, epsilon = 1e-9);
    }

    #[test]
    fn rejects_straight_and_out_of_range_angles() {
        assert!(matches!(solve_alpha0(PI), Err(Error::InvalidAngle { .. })));
        assert!(solve_alpha0(0.0).is_err());
        assert!(solve_alpha0(2.0 * PI).is_err());
        assert!(solve_alpha0(-1.0).is_err());
        assert!(beta0(7.0).is_err());
    }

    #[test]
    fn search_failure_reports_rectangle() {
        // For a very sharp corner alpha0 exceeds a tiny cap.
        match solve_alpha0_with_cap(PI / 3.0, 1.5) {
            Err(Error::RootSearch { re_max, .. }) => assert_eq!(re_max, 1.5),
            other => panic!("expected RootSearch, got {other:?}"),
        }
    }

    #[test]
    fn roots_satisfy_equation() {
        for omega in [PI / 3.0, 0.75 * PI, 1.2 * PI, 1.9 * PI] {
            for z in characteristic_roots(omega, DEFAULT_RE_CAP).unwrap() {
                assert!(characteristic_residual(omega, z).norm() < 1e-12, "omega {omega} z {z}");
            }
        }
    }

    #[test]
    fn beta0_values() {
        assert_abs_diff_eq!(beta0(PI / 2.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(beta0(1.5 * PI).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(beta0(2.0 * PI / 3.0).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn kappa_values() {
        assert_eq!(grading_kappa(1.0, 1.0).unwrap(), 0.5);
        assert_eq!(grading_kappa(2.0, 1.0).unwrap(), 0.25);
        let k = grading_kappa(1.0, 0.54).unwrap();
        assert_abs_diff_eq!(k, 2f64.powf(-1.0 / 0.54), epsilon = 1e-15);
        assert!((k - 0.277).abs() < 1e-3);
        assert!(grading_kappa(1.0, 0.0).is_err());
        assert!(grading_kappa(0.5, 1.0).is_err());
    }

    #[test]
    fn theta_choices() {
        assert_eq!(theta_for_optimal_h1(1, 0.54, 0.5445).unwrap(), 0.54);
        assert_eq!(grading_kappa(0.54, 0.54).unwrap(), 0.5);
        assert_eq!(theta_for_optimal_h1(2, 0.54, 0.5445).unwrap(), 1.0);
        assert_eq!(theta_for_optimal_h1(3, 1.2, 1.2006).unwrap(), 2.0);

        assert_eq!(theta_for_optimal_l2(1, 0.54, 0.5445).unwrap(), 1.0);
        assert_eq!(theta_for_optimal_l2(2, 0.54, 0.5445).unwrap(), 1.5);
        assert_eq!(theta_for_optimal_l2(3, 2.0, 2.09).unwrap(), 2.0);
        // The quoted kappa bounds for P1 / P2 L2 optimality.
        assert!((grading_kappa(1.0, 0.5445).unwrap() - 0.28).abs() < 0.005);
        assert!((grading_kappa(1.5, 0.5445).unwrap() - 0.15).abs() < 0.005);
        assert!(theta_for_optimal_h1(0, 0.5, 1.0).is_err());
        assert!(theta_for_optimal_l2(2, 1.5, 1.0).is_err());
    }

    #[test]
    fn theta_prime_values() {
        assert_abs_diff_eq!(theta_prime(1.0, 1.0, 1.0, 2).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            theta_prime(0.54, 0.5445, 2.0 / 3.0, 1).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(theta_prime(2.0, 2.0941, 1.5, 2).unwrap(), 1.5, epsilon = 1e-12);
        assert!(theta_prime(1.0, 0.4, 1.0, 1).is_err());
    }

    #[test]
    fn kappa_monotone() {
        let a = 0.7;
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let k = grading_kappa(a + 0.1 * i as f64, a).unwrap();
            assert!(k < prev);
            prev = k;
        }
        let theta = 3.0;
        let mut prev = 0.0;
        for i in 1..20 {
            let k = grading_kappa(theta, 0.15 * i as f64).unwrap();
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn from_kappa_round_trip() {
        let r = GradingRule::from_kappa(0.2).unwrap();
        assert_eq!(r.kappa, 0.2);
        assert!(r.a <= r.theta);
        assert!(GradingRule::from_kappa(0.6).is_err());
        assert!(GradingRule::from_kappa(0.0).is_err());
    }
}
