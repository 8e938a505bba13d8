//! Dominant eigenpairs of Metzler and nonnegative matrices.
//!
//! A Metzler matrix `M` becomes nonnegative after the shift
//! `M + sigma I` with `sigma = 1 + max |m_ii|`; power iteration on the
//! shifted matrix converges to its Perron root, and the Collatz–Wielandt
//! quotients `min_i (Bx)_i / x_i <= rho(B) <= max_i (Bx)_i / x_i` give a
//! two-sided stopping test. Reducible inputs are split into strongly
//! connected components, each of which is irreducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-13;
const MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair {
    pub value: f64,
    /// Positive, unit Euclidean norm.
    pub vector: DVector<f64>,
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Dimension(format!("expected a nonempty square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    Ok(())
}

fn check_metzler(m: &DMatrix<f64>) -> Result<()> {
    check_square(m)?;
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] < 0.0 {
                return Err(Error::Domain(format!("entry ({i}, {j}) = {} is negative off the diagonal", m[(i, j)])));
            }
        }
    }
    Ok(())
}

/// Irreducibility of the off-diagonal sparsity pattern.
pub fn is_irreducible(m: &DMatrix<f64>) -> bool {
    sccs(m).len() == 1
}

/// Strongly connected components of the graph with an arc `i -> j` whenever
/// `m_ij != 0`, `i != j` (Tarjan, iterative).
fn sccs(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && m[(i, j)] != 0.0).collect())
        .collect();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            if *next < succ[v].len() {
                let w = succ[v][*next];
                *next += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out
}

struct PowerResult {
    value: f64,
    vector: DVector<f64>,
    converged: bool,
}

/// Power iteration on the nonnegative matrix `b` (assumed irreducible) with
/// Collatz–Wielandt bounds.
fn power_nonnegative(b: &DMatrix<f64>) -> PowerResult {
    let n = b.nrows();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut prev = f64::NAN;
    for _ in 0..MAX_ITER {
        let y = b * &x;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..n {
            let q = y[i] / x[i];
            lo = lo.min(q);
            hi = hi.max(q);
        }
        let norm = y.norm();
        if norm == 0.0 || !norm.is_finite() {
            return PowerResult { value: 0.0, vector: x, converged: norm == 0.0 };
        }
        let mid = 0.5 * (lo + hi);
        x = y / norm;
        if hi - lo <= REL_TOL * hi.abs().max(1e-300) || (mid - prev).abs() <= 1e-15 * mid.abs() && hi - lo <= 1e-10 * hi {
            return PowerResult { value: mid, vector: x, converged: true };
        }
        prev = mid;
    }
    let y = b * &x;
    PowerResult {
        value: x.dot(&y),
        vector: x,
        converged: false,
    }
}

/// Largest real eigenvalue of an irreducible Metzler block via the shift.
fn irreducible_abscissa(m: &DMatrix<f64>) -> (f64, DVector<f64>, bool) {
    let n = m.nrows();
    if n == 1 {
        return (m[(0, 0)], DVector::from_element(1, 1.0), true);
    }
    let sigma = 1.0 + (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let b = m + DMatrix::identity(n, n) * sigma;
    let r = power_nonnegative(&b);
    (r.value - sigma, r.vector, r.converged)
}

fn dense_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest real part of the spectrum of a Metzler matrix, which is itself an
/// eigenvalue.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    check_metzler(m)?;
    let comps = sccs(m);
    let mut best = f64::NEG_INFINITY;
    for comp in &comps {
        let sub = DMatrix::from_fn(comp.len(), comp.len(), |a, b| m[(comp[a], comp[b])]);
        let (v, _, ok) = irreducible_abscissa(&sub);
        let v = if ok { v } else { dense_abscissa(&sub) };
        best = best.max(v);
    }
    Ok(best)
}

/// Perron eigenpair of an irreducible Metzler matrix.
pub fn perron_vector(m: &DMatrix<f64>) -> Result<PerronPair> {
    check_metzler(m)?;
    if !is_irreducible(m) {
        return Err(Error::Reducible("Perron vector requires an irreducible matrix".into()));
    }
    let (value, mut vector, ok) = irreducible_abscissa(m);
    if !ok {
        return Err(Error::Numerical("power iteration did not converge".into()));
    }
    if vector.iter().any(|&v| v < 1e-12) {
        return Err(Error::Reducible("Perron vector has vanishing entries".into()));
    }
    vector /= vector.norm();
    let scale = m.amax().max(1.0);
    let resid = (m * &vector - &vector * value).amax();
    if resid > 1e-9 * scale {
        return Err(Error::Numerical(format!("Perron residual {resid:.3e} above tolerance")));
    }
    Ok(PerronPair { value, vector })
}

/// Dominant eigenvector of a Metzler matrix without the irreducibility
/// requirement; entries may be zero for reducible inputs.
pub(crate) fn dominant_vector(m: &DMatrix<f64>) -> Result<PerronPair> {
    check_metzler(m)?;
    let n = m.nrows();
    let sigma = 1.0 + (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    // A small uniform coupling makes the shifted matrix positive, so the
    // iteration converges to a unique positive vector.
    let eps = 1e-14 * (m.amax() + sigma);
    let b = m + DMatrix::identity(n, n) * sigma + DMatrix::from_element(n, n, eps);
    let r = power_nonnegative(&b);
    let mut vector = r.vector;
    vector /= vector.norm();
    Ok(PerronPair {
        value: spectral_abscissa(m)?,
        vector,
    })
}

/// Largest eigenvalue modulus of a nonnegative matrix (its Perron root).
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    check_square(m)?;
    if m.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("spectral radius expects a nonnegative matrix".into()));
    }
    spectral_abscissa(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    #[test]
    fn abscissa_of_small_examples() {
        assert!((spectral_abscissa(&mat(2, &[-1.0, 0.5, 0.5, -1.0])).unwrap() + 0.5).abs() < 1e-12);
        for n in 1..5 {
            let m = -DMatrix::<f64>::identity(n, n);
            assert!((spectral_abscissa(&m).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perron_of_symmetric_pairs() {
        let p = perron_vector(&mat(2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((p.value - 1.0).abs() < 1e-12);
        assert!((p.vector[0] - 0.70710678).abs() < 1e-8 && (p.vector[1] - 0.70710678).abs() < 1e-8);
        let q = perron_vector(&mat(2, &[0.0, 2.0, 2.0, 0.0])).unwrap();
        assert!((q.value - 2.0).abs() < 1e-12);
        assert!((q.vector - p.vector).amax() < 1e-12);
    }

    #[test]
    fn star_has_root_sqrt3() {
        let mut m = DMatrix::zeros(4, 4);
        for k in 1..4 {
            m[(0, k)] = 1.0;
            m[(k, 0)] = 1.0;
        }
        let p = perron_vector(&m).unwrap();
        assert!((p.value - 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn reducible_inputs() {
        // Upper triangular: eigenvalues are the diagonal.
        let m = mat(3, &[-2.0, 1.0, 0.0, 0.0, -0.5, 3.0, 0.0, 0.0, -1.0]);
        assert!(!is_irreducible(&m));
        assert!((spectral_abscissa(&m).unwrap() + 0.5).abs() < 1e-12);
        assert!(matches!(perron_vector(&m), Err(Error::Reducible(_))));
        let d = dominant_vector(&m).unwrap();
        assert!((d.value + 0.5).abs() < 1e-12);
    }

    #[test]
    fn radius_examples() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_radius(&mat(2, &[0.0, 0.5, 0.5, 0.0])).unwrap() - 0.5).abs() < 1e-12);
        assert!(spectral_radius(&mat(2, &[0.0, -0.5, 0.5, 0.0])).is_err());
    }

    #[test]
    fn rejects_non_metzler() {
        assert!(spectral_abscissa(&mat(2, &[0.0, -1.0, 1.0, 0.0])).is_err());
        assert!(spectral_abscissa(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn scc_split() {
        // 0 <-> 1, 2 alone, 1 -> 2.
        let m = mat(3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let mut c = sccs(&m);
        c.sort();
        assert_eq!(c, vec![vec![0, 1], vec![2]]);
    }
}
