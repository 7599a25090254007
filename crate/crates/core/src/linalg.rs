//! Sparse direct solvers backed by faer's supernodal Cholesky factorizations.
//!
//! Symmetric positive definite systems use `LL^T`. Symmetric saddle-point systems
//! are equilibrated, shifted into quasi-definite form (a small negative shift on the
//! constraint block) and factored with `LDL^T`; iterative refinement against the
//! unshifted matrix then removes the shift from the solution.

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::ldlt::factor::{LdltError, LdltRegularization};
use faer::linalg::cholesky::llt::factor::{LltError, LltRegularization};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LdltRef, LltRef, SymbolicCholesky, SymbolicCholeskyRaw, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::linalg::solvers::Solve;
use faer::{Conj, Mat, MatMut, Par, Side};

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, SparseMatrix};

/// Relative residual accepted from a direct solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Shift applied to the constraint block of an equilibrated saddle-point matrix.
const QUASI_DEFINITE_SHIFT: f64 = 1e-8;

const MAX_REFINEMENT: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FactorKind {
    Llt,
    Ldlt,
}

/// A numeric symmetric factorization ready for repeated solves.
pub struct SymmetricFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    kind: FactorKind,
    n: usize,
}

fn csc_view(a: &SparseMatrix) -> SparseColMatRef<'_, usize, f64> {
    // A symmetric CSR matrix is its own CSC transpose.
    let sym = SymbolicSparseColMatRef::new_checked(a.nrows, a.ncols, &a.row_ptr, None, &a.col_idx);
    SparseColMatRef::new(sym, &a.values)
}

fn alloc(req: StackReq) -> Result<MemBuffer> {
    MemBuffer::try_new(req).map_err(|_| Error::Factorization("out of memory for workspace".into()))
}

fn check_square_symmetric(a: &SparseMatrix) -> Result<()> {
    if a.nrows != a.ncols {
        return Err(Error::DimensionMismatch {
            expected: a.nrows,
            got: a.ncols,
        });
    }
    if !a.symmetric {
        return Err(Error::Factorization("matrix is not flagged symmetric".into()));
    }
    Ok(())
}

fn symbolic_for(a: &SparseMatrix) -> Result<SymbolicCholesky<usize>> {
    let view = csc_view(a);
    factorize_symbolic_cholesky(view.symbolic(), Side::Lower, SymmetricOrdering::Amd, Default::default())
        .map_err(|e| Error::Factorization(format!("{e:?}")))
}

impl SymmetricFactor {
    /// `LL^T` of a symmetric positive definite matrix.
    pub fn cholesky(a: &SparseMatrix) -> Result<Self> {
        check_square_symmetric(a)?;
        let symbolic = symbolic_for(a)?;
        let mut values = vec![0.0; symbolic.len_val()];
        let mut buf = alloc(symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()))?;
        let res = symbolic.factorize_numeric_llt(
            &mut values,
            csc_view(a),
            Side::Lower,
            LltRegularization::default(),
            Par::Seq,
            MemStack::new(&mut buf),
            Default::default(),
        );
        if let Err(LltError::NonPositivePivot { index }) = res {
            return Err(Error::Singular {
                index: original_index(&symbolic, index),
            });
        }
        let n = a.nrows;
        Ok(Self {
            symbolic,
            values,
            kind: FactorKind::Llt,
            n,
        })
    }

    /// `LDL^T` with the expected pivot signs enforced by dynamic regularization.
    fn ldlt(a: &SparseMatrix, signs: &[i8]) -> Result<Self> {
        check_square_symmetric(a)?;
        let symbolic = symbolic_for(a)?;
        let mut values = vec![0.0; symbolic.len_val()];
        let mut buf = alloc(symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()))?;
        let reg = LdltRegularization {
            dynamic_regularization_signs: Some(signs),
            dynamic_regularization_delta: QUASI_DEFINITE_SHIFT,
            dynamic_regularization_epsilon: 1e-14,
        };
        let res = symbolic.factorize_numeric_ldlt(
            &mut values,
            csc_view(a),
            Side::Lower,
            reg,
            Par::Seq,
            MemStack::new(&mut buf),
            Default::default(),
        );
        if let Err(LdltError::ZeroPivot { index }) = res {
            return Err(Error::Singular {
                index: original_index(&symbolic, index),
            });
        }
        let n = a.nrows;
        Ok(Self {
            symbolic,
            values,
            kind: FactorKind::Ldlt,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        let rhs = MatMut::from_column_major_slice_mut(&mut x, self.n, 1);
        let req = self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq);
        let mut buf = MemBuffer::new(req);
        let stack = MemStack::new(&mut buf);
        match self.kind {
            FactorKind::Llt => LltRef::<usize, f64>::new(&self.symbolic, &self.values)
                .solve_in_place_with_conj(Conj::No, rhs, Par::Seq, stack),
            FactorKind::Ldlt => LdltRef::<usize, f64>::new(&self.symbolic, &self.values)
                .solve_in_place_with_conj(Conj::No, rhs, Par::Seq, stack),
        }
        x
    }
}

fn original_index(symbolic: &SymbolicCholesky<usize>, pivot: usize) -> usize {
    // the simplicial kernels report one-based pivot positions, the supernodal ones zero-based
    let pivot = match symbolic.raw() {
        SymbolicCholeskyRaw::Simplicial(_) => pivot.saturating_sub(1),
        SymbolicCholeskyRaw::Supernodal(_) => pivot,
    };
    match symbolic.perm() {
        Some(p) => p.arrays().0[pivot],
        None => pivot,
    }
}

fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    a.matvec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect()
}

/// Solves a symmetric positive definite system by sparse Cholesky.
pub fn solve_spd(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.nrows {
        return Err(Error::DimensionMismatch {
            expected: a.nrows,
            got: b.len(),
        });
    }
    let f = SymmetricFactor::cholesky(a)?;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let mut x = f.solve(b);
    let mut rel = norm2(&residual(a, &x, b)) / bnorm;
    // one or two refinement sweeps absorb rounding on badly scaled graded meshes
    for _ in 0..2 {
        if rel < 1e-14 {
            break;
        }
        let r = residual(a, &x, b);
        let dx = f.solve(&r);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(u, v)| u + v).collect();
        let trial_rel = norm2(&residual(a, &trial, b)) / bnorm;
        if trial_rel >= rel {
            break;
        }
        x = trial;
        rel = trial_rel;
    }
    if !(rel <= SOLVE_TOL) {
        return Err(Error::Residual {
            residual: rel,
            tol: SOLVE_TOL,
        });
    }
    Ok(x)
}

/// Symmetric equilibration `D A D` with every row's largest entry close to one.
fn equilibrate(a: &SparseMatrix) -> Vec<f64> {
    let n = a.nrows;
    let mut d = vec![1.0; n];
    for _ in 0..12 {
        let mut rmax = vec![0.0f64; n];
        for (i, r) in rmax.iter_mut().enumerate() {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                *r = r.max((d[i] * v * d[j]).abs());
            }
        }
        let mut done = true;
        for (di, r) in d.iter_mut().zip(&rmax) {
            if *r > 0.0 {
                if (r - 1.0).abs() > 1e-2 {
                    done = false;
                }
                *di /= r.sqrt();
            }
        }
        if done {
            break;
        }
    }
    d
}

/// Factored saddle-point operator: quasi-definite `LDL^T` of the non-border rows and
/// a dense Schur complement for the border rows. Owns the scaled matrix split into
/// its shifted inner block `k` and the border couplings.
struct BorderedFactor {
    inner: SymmetricFactor,
    /// Shifted inner block, rows and columns of `rest`.
    k: SparseMatrix,
    rest: Vec<usize>,
    border: Vec<usize>,
    negative: Vec<bool>,
    /// Border columns restricted to `rest`.
    c: Vec<Vec<f64>>,
    /// Border-border block.
    d: Vec<Vec<f64>>,
    /// `K⁻¹ C`.
    z: Vec<Vec<f64>>,
    schur: Mat<f64>,
}

/// Keeps the rows and columns flagged in `keep`, compacting in place.
fn compact_principal(mut a: SparseMatrix, keep: &[bool]) -> SparseMatrix {
    let mut new_index = vec![usize::MAX; a.nrows];
    let mut m = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            new_index[i] = m;
            m += 1;
        }
    }
    let mut w = 0;
    let mut row_ptr = Vec::with_capacity(m + 1);
    row_ptr.push(0);
    for i in 0..a.nrows {
        let (s, e) = (a.row_ptr[i], a.row_ptr[i + 1]);
        if !keep[i] {
            continue;
        }
        for r in s..e {
            let j = a.col_idx[r];
            if keep[j] {
                a.col_idx[w] = new_index[j];
                a.values[w] = a.values[r];
                w += 1;
            }
        }
        row_ptr.push(w);
    }
    a.col_idx.truncate(w);
    a.values.truncate(w);
    a.col_idx.shrink_to_fit();
    a.values.shrink_to_fit();
    SparseMatrix {
        nrows: m,
        ncols: m,
        row_ptr,
        col_idx: a.col_idx,
        values: a.values,
        symmetric: a.symmetric,
    }
}

impl BorderedFactor {
    fn new(scaled: SparseMatrix, signs: &[i8]) -> Result<Self> {
        let n = scaled.nrows;
        let keep: Vec<bool> = signs.iter().map(|&s| s != 0).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        let border: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
        let mut local = vec![usize::MAX; n];
        for (r, &i) in rest.iter().enumerate() {
            local[i] = r;
        }
        let mut c = vec![vec![0.0; rest.len()]; border.len()];
        let mut d = vec![vec![0.0; border.len()]; border.len()];
        for (a, &bi) in border.iter().enumerate() {
            let (cols, vals) = scaled.row(bi);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep[j] {
                    c[a][local[j]] = v;
                } else if let Some(b) = border.iter().position(|&x| x == j) {
                    d[a][b] = v;
                }
            }
        }
        let mut k = if border.is_empty() { scaled } else { compact_principal(scaled, &keep) };
        let negative: Vec<bool> = rest.iter().map(|&i| signs[i] < 0).collect();
        for (r, &neg) in negative.iter().enumerate() {
            if neg {
                let pos = (k.row_ptr[r]..k.row_ptr[r + 1]).find(|&q| k.col_idx[q] == r);
                match pos {
                    Some(q) => k.values[q] -= QUASI_DEFINITE_SHIFT,
                    None => {
                        return Err(Error::Factorization(format!(
                            "constraint row {} needs a stored diagonal entry",
                            rest[r]
                        )))
                    }
                }
            }
        }
        let rest_signs: Vec<i8> = rest.iter().map(|&i| signs[i]).collect();
        let inner = SymmetricFactor::ldlt(&k, &rest_signs)?;
        let z: Vec<Vec<f64>> = c.iter().map(|ci| inner.solve(ci)).collect();
        let nb = border.len();
        let schur = Mat::<f64>::from_fn(nb, nb, |a, b| d[a][b] - dot(&c[a], &z[b]));
        Ok(Self {
            inner,
            k,
            rest,
            border,
            negative,
            c,
            d,
            z,
            schur,
        })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.rest.iter().map(|&i| rhs[i]).collect();
        let mut x = self.inner.solve(&r);
        let mut out = vec![0.0; rhs.len()];
        if !self.border.is_empty() {
            let nb = self.border.len();
            let mut y = Mat::<f64>::from_fn(nb, 1, |a, _| rhs[self.border[a]] - dot(&self.c[a], &x));
            self.schur.partial_piv_lu().solve_in_place(y.as_mut());
            for (a, &bi) in self.border.iter().enumerate() {
                out[bi] = y[(a, 0)];
                for (xi, zi) in x.iter_mut().zip(&self.z[a]) {
                    *xi -= zi * y[(a, 0)];
                }
            }
        }
        for (&i, xi) in self.rest.iter().zip(x) {
            out[i] = xi;
        }
        out
    }

    /// Product with the unshifted scaled matrix.
    fn apply(&self, y: &[f64]) -> Vec<f64> {
        let yr: Vec<f64> = self.rest.iter().map(|&i| y[i]).collect();
        let mut kr = self.k.matvec(&yr);
        for ((v, &neg), yi) in kr.iter_mut().zip(&self.negative).zip(&yr) {
            if neg {
                *v += QUASI_DEFINITE_SHIFT * yi;
            }
        }
        let mut out = vec![0.0; y.len()];
        for (a, &bi) in self.border.iter().enumerate() {
            for (v, ci) in kr.iter_mut().zip(&self.c[a]) {
                *v += ci * y[bi];
            }
            out[bi] = dot(&self.c[a], &yr) + self.border.iter().zip(&self.d[a]).map(|(&bj, dv)| dv * y[bj]).sum::<f64>();
        }
        for (&i, v) in self.rest.iter().zip(kr) {
            out[i] = v;
        }
        out
    }
}

/// Outcome of a saddle-point solve.
#[derive(Debug, Clone)]
pub struct IndefiniteSolve {
    pub x: Vec<f64>,
    /// `‖Ax − b‖ / ‖b‖` for the original matrix.
    pub relative_residual: f64,
    pub refinement_steps: usize,
}

/// Solves a symmetric saddle-point system. `signs[i]` is `+1` for primal unknowns
/// (positive definite block), `-1` for constraint unknowns and `0` for the few border
/// rows (such as a pressure-mean multiplier) that break quasi-definiteness; border
/// rows are eliminated through a small dense Schur complement.
pub fn solve_symmetric_indefinite(a: &SparseMatrix, b: &[f64], signs: &[i8]) -> Result<IndefiniteSolve> {
    solve_saddle_point(a.clone(), b, signs)
}

/// As [`solve_symmetric_indefinite`], consuming the matrix so that no second copy of
/// it is held while factoring.
pub fn solve_saddle_point(mut a: SparseMatrix, b: &[f64], signs: &[i8]) -> Result<IndefiniteSolve> {
    if b.len() != a.nrows || signs.len() != a.nrows {
        return Err(Error::DimensionMismatch {
            expected: a.nrows,
            got: b.len().min(signs.len()),
        });
    }
    check_square_symmetric(&a)?;
    let n = a.nrows;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(IndefiniteSolve {
            x: vec![0.0; n],
            relative_residual: 0.0,
            refinement_steps: 0,
        });
    }
    let d = equilibrate(&a);
    for i in 0..n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.col_idx[k];
            a.values[k] *= d[i] * d[j];
        }
    }
    let f = BorderedFactor::new(a, signs)?;

    let sb: Vec<f64> = b.iter().zip(&d).map(|(bi, di)| bi * di).collect();
    // residual of the scaled system, measured in the original units
    let scaled_residual = |y: &[f64]| -> Vec<f64> { f.apply(y).iter().zip(&sb).map(|(ay, bi)| bi - ay).collect() };
    let original_norm =
        |r: &[f64]| -> f64 { r.iter().zip(&d).map(|(ri, di)| (ri / di).powi(2)).sum::<f64>().sqrt() / bnorm };
    let mut y = f.solve(&sb);
    let mut r = scaled_residual(&y);
    let mut rel = original_norm(&r);
    let mut steps = 0;
    while rel > 1e-14 && steps < MAX_REFINEMENT {
        let dy = f.solve(&r);
        let trial: Vec<f64> = y.iter().zip(&dy).map(|(u, v)| u + v).collect();
        let trial_r = scaled_residual(&trial);
        let trial_rel = original_norm(&trial_r);
        steps += 1;
        if !(trial_rel < rel) {
            // stagnation at the rounding floor
            break;
        }
        y = trial;
        r = trial_r;
        rel = trial_rel;
    }
    if !(rel <= SOLVE_TOL) {
        return Err(Error::Residual {
            residual: rel,
            tol: SOLVE_TOL,
        });
    }
    Ok(IndefiniteSolve {
        x: y.iter().zip(&d).map(|(yi, di)| yi * di).collect(),
        relative_residual: rel,
        refinement_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Triplets;

    #[test]
    fn identity_and_tridiagonal() {
        let b = vec![1.0, -2.0, 3.0];
        assert_eq!(solve_spd(&SparseMatrix::identity(3), &b).unwrap(), b);
        let a = SparseMatrix::from_dense(
            &[vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]],
            true,
        );
        let x = solve_spd(&a, &[1.0, 1.0, 1.0]).unwrap();
        for (xi, e) in x.iter().zip([1.5, 2.0, 1.5]) {
            assert!((xi - e).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_pivot_reports_dof() {
        let a = SparseMatrix::from_dense(
            &[vec![1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 1.0]],
            true,
        );
        match solve_spd(&a, &[1.0, 1.0, 1.0]) {
            Err(Error::Singular { index }) => assert_eq!(index, 1),
            other => panic!("expected singular pivot, got {other:?}"),
        }
    }

    #[test]
    fn supernodal_pivot_index() {
        // dense enough to be factored supernodally
        let n = 120;
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 2.0 * n as f64 } else { 1.0 };
            }
        }
        d[77][77] = -1e3;
        let a = SparseMatrix::from_dense(&d, true);
        match SymmetricFactor::cholesky(&a) {
            Err(Error::Singular { index }) => assert_eq!(index, 77),
            other => panic!("expected singular pivot, got {:?}", other.err()),
        }
    }

    #[test]
    fn random_spd_residual() {
        // M^T M + I with a fixed pseudo-random M
        let n = 10;
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| next()).collect()).collect();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                d[i][j] = (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        let a = SparseMatrix::from_dense(&d, true);
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = solve_spd(&a, &b).unwrap();
        let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(u, v)| u - v).collect();
        assert!(norm2(&r) < 1e-12 * norm2(&b));
    }

    #[test]
    fn saddle_point_system() {
        // [[2, 0, 1], [0, 2, 1], [1, 1, 0]] x = (1, 3, 1)
        let mut t = Triplets::new(3, 3);
        for (i, j, v) in [(0, 0, 2.0), (1, 1, 2.0), (0, 2, 1.0), (2, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (2, 2, 0.0)] {
            t.push(i, j, v);
        }
        let a = t.into_matrix(true);
        let s = solve_symmetric_indefinite(&a, &[1.0, 3.0, 1.0], &[1, 1, -1]).unwrap();
        // x0 + x1 = 1, 2 x0 + l = 1, 2 x1 + l = 3 -> x0 = 0, x1 = 1, l = 1
        for (xi, e) in s.x.iter().zip([0.0, 1.0, 1.0]) {
            assert!((xi - e).abs() < 1e-12, "{:?}", s.x);
        }
    }

    #[test]
    fn mean_multiplier_border_row() {
        // two pressures with B^T 1 = 0 and a multiplier fixing p0 + p1 = 0
        let mut t = Triplets::new(4, 4);
        for (i, j, v) in [
            (0, 0, 1.0),
            (0, 1, 1.0),
            (1, 0, 1.0),
            (0, 2, -1.0),
            (2, 0, -1.0),
            (1, 1, 0.0),
            (2, 2, 0.0),
            (1, 3, 1.0),
            (3, 1, 1.0),
            (2, 3, 1.0),
            (3, 2, 1.0),
            (3, 3, 0.0),
        ] {
            t.push(i, j, v);
        }
        let a = t.into_matrix(true);
        let b = [2.0, 0.0, 0.0, 0.0];
        let s = solve_symmetric_indefinite(&a, &b, &[1, -1, -1, 0]).unwrap();
        // u = 0, p0 - p1 = 2, p0 + p1 = 0
        for (xi, e) in s.x.iter().zip([0.0, 1.0, -1.0, 0.0]) {
            assert!((xi - e).abs() < 1e-10, "{:?}", s.x);
        }
    }
}
