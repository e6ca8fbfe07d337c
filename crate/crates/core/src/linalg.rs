//! Small dense linear algebra on row-major `f64` matrices: one-sided Jacobi
//! SVD and orthonormal-matrix construction.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::Tensor;

/// Thin singular value decomposition `M = U · diag(σ) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m × k` with orthonormal columns, `k = min(m, n)`.
    pub u: Tensor,
    /// Non-negative, descending.
    pub sigma: Vec<f64>,
    /// `k × n` with orthonormal rows.
    pub vt: Tensor,
}

const MAX_SWEEPS: usize = 100;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Tensor) -> Result<Svd> {
    let (rows, cols) = m.dims2()?;
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("svd input contains NaN or infinite entries".into()));
    }
    if rows < cols {
        let t = svd(&m.transpose()?)?;
        return Ok(Svd {
            u: t.vt.transpose()?,
            sigma: t.sigma,
            vt: t.u.transpose()?,
        });
    }
    let (mr, n) = (rows, cols);
    // Work column-major: a[j] is column j of the working matrix, v[j] column j of V.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| (0..mr).map(|i| m.get2(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let eps = f64::EPSILON;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!("jacobi svd did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    let scale = order.first().map(|o| o.0).unwrap_or(0.0);
    let tol = scale * (mr.max(n) as f64) * eps;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for &(s, j) in &order {
        if s > tol {
            u_cols.push(a[j].iter().map(|x| x / s).collect());
            sigma.push(s);
        } else {
            deficient.push(u_cols.len());
            u_cols.push(vec![0.0; mr]);
            sigma.push(0.0);
        }
        v_cols.push(v[j].clone());
    }
    // Complete U for zero singular values so its columns stay orthonormal.
    for &slot in &deficient {
        let basis = complete_basis(&u_cols, &deficient, slot, mr)?;
        u_cols[slot] = basis;
    }

    let mut u = vec![0.0; mr * n];
    for (j, col) in u_cols.iter().enumerate() {
        for i in 0..mr {
            u[i * n + j] = col[i];
        }
    }
    let mut vt = vec![0.0; n * n];
    for (j, col) in v_cols.iter().enumerate() {
        vt[j * n..(j + 1) * n].copy_from_slice(col);
    }
    Ok(Svd {
        u: Tensor::matrix(mr, n, u),
        sigma,
        vt: Tensor::matrix(n, n, vt),
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn complete_basis(cols: &[Vec<f64>], deficient: &[usize], slot: usize, dim: usize) -> Result<Vec<f64>> {
    let filled = |j: usize| !deficient.contains(&j) || j < slot;
    for e in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[e] = 1.0;
        for _ in 0..2 {
            for (j, col) in cols.iter().enumerate() {
                if j == slot || !filled(j) {
                    continue;
                }
                let d: f64 = col.iter().zip(&cand).map(|(x, y)| x * y).sum();
                cand.iter_mut().zip(col).for_each(|(c, x)| *c -= d * x);
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return Ok(cand.into_iter().map(|x| x / norm).collect());
        }
    }
    Err(Error::Numeric("could not complete an orthonormal basis".into()))
}

/// `a · b` for rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul {:?} x {:?}: inner dimensions differ",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    crate::math::gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::matrix(m, n, out))
}

/// `max |AᵀA − I|` over all entries.
pub fn orthogonality_error(a: &Tensor) -> Result<f64> {
    let ata = matmul(&a.transpose()?, a)?;
    let n = ata.dims2()?.0;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ata.get2(i, j) - target).abs());
        }
    }
    Ok(worst)
}

/// Random `n × n` orthogonal matrix: Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut ok = true;
        for _ in 0..n {
            let mut c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..2 {
                for prev in &cols {
                    let d: f64 = prev.iter().zip(&c).map(|(x, y)| x * y).sum();
                    c.iter_mut().zip(prev).for_each(|(x, p)| *x -= d * p);
                }
            }
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols.push(c.into_iter().map(|x| x / norm).collect());
        }
        if ok {
            let mut data = vec![0.0; n * n];
            for (j, col) in cols.iter().enumerate() {
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
            return Tensor::matrix(n, n, data);
        }
    }
}
