use crate::error::{Error, Result};
use crate::numerics::Matrix;

const SYMMETRY_TOL: f64 = 1e-9;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix in descending order, by cyclic Jacobi
/// rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm falls below `1e-12`
/// (relative to the matrix norm when that exceeds one) or after 100 sweeps,
/// which is reported as a numeric error.
pub fn sym_eigenvalues(k: &Matrix) -> Result<Vec<f64>> {
    let n = k.rows();
    if k.cols() != n {
        return Err(Error::shape(format!("{}x{} is not square", n, k.cols())));
    }
    if !k.is_finite() {
        return Err(Error::numeric("non-finite matrix entry"));
    }
    let scale = k.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in i + 1..n {
            if (k.get(i, j) - k.get(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(Error::domain(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    k.get(i, j),
                    k.get(j, i)
                )));
            }
        }
    }

    let mut a = k.clone();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, m);
            a.set(j, i, m);
        }
    }
    let tol = OFF_DIAGONAL_TOL * a.frobenius_norm().max(1.0);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) >= tol {
        return Err(Error::numeric(format!(
            "Jacobi did not converge in {MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
            off_diagonal_norm(&a)
        )));
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Applies the plane rotation that annihilates `a[p][q]`.
fn rotate(a: &mut Matrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = a.rows();
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a.get(r, p);
        let arq = a.get(r, q);
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        a.set(r, p, new_rp);
        a.set(p, r, new_rp);
        a.set(r, q, new_rq);
        a.set(q, r, new_rq);
    }
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
}
