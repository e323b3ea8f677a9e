//! One-sided Jacobi singular value decomposition.
//!
//! Small matrices only: plane rotations orthogonalize column pairs until all
//! pairwise inner products fall below 1e-12 relative to the column norms, or
//! 60 full sweeps elapse. Singular triplets come back in descending order of
//! singular value; ties keep the original column order.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};

const PAIR_THRESHOLD: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Thin SVD `a = u * diag(sigma) * vt` with `k = min(rows, cols)` triplets.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseTensor,
    pub sigma: Vec<f64>,
    pub vt: DenseTensor,
}

/// Decompose a rank-2 tensor.
pub fn jacobi_svd(a: &DenseTensor) -> Result<Svd> {
    if a.shape().rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "svd needs rank 2, got {}",
            a.shape()
        )));
    }
    let (m, n) = (a.rows(), a.cols());
    if m >= n {
        svd_tall(a)
    } else {
        // Factor the transpose and swap the roles of u and v.
        let t = a.transpose()?;
        let Svd { u, sigma, vt } = svd_tall(&t)?;
        Ok(Svd {
            u: vt.transpose()?,
            sigma,
            vt: u.transpose()?,
        })
    }
}

// One-sided Jacobi on a tall (or square) matrix: rotate column pairs of a
// working copy until mutually orthogonal, accumulate the rotations in v.
fn svd_tall(a: &DenseTensor) -> Result<Svd> {
    let (m, n) = (a.rows(), a.cols());
    // Column-major working copies make the column rotations contiguous.
    let mut w = vec![0.0f64; m * n]; // w[j*m + i] = a[i, j]
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a.at(i, j);
        }
    }
    let mut v = vec![0.0f64; n * n]; // column-major as well
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
                    let cp = &w[p * m..(p + 1) * m];
                    let cq = &w[q * m..(q + 1) * m];
                    for i in 0..m {
                        aa += cp[i] * cp[i];
                        bb += cq[i] * cq[i];
                        ab += cp[i] * cq[i];
                    }
                    (aa, bb, ab)
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= PAIR_THRESHOLD * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, m, p, q, c, s);
                rotate_pair(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values.
    let mut order: Vec<usize> = (0..n).collect();
    let sigmas: Vec<f64> = (0..n)
        .map(|j| w[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    // Stable sort keeps original column order on ties.
    order.sort_by(|&i, &j| sigmas[j].partial_cmp(&sigmas[i]).expect("finite sigmas"));

    let mut u = vec![0.0f64; m * n];
    let mut vt = vec![0.0f64; n * n];
    let mut sigma = Vec::with_capacity(n);
    for (rank, &col) in order.iter().enumerate() {
        let s = sigmas[col];
        sigma.push(s);
        if s > 0.0 {
            for i in 0..m {
                u[i * n + rank] = w[col * m + i] / s;
            }
        }
        for i in 0..n {
            vt[rank * n + i] = v[col * n + i];
        }
    }

    Ok(Svd {
        u: DenseTensor::new(Shape::new(vec![m, n])?, u)?,
        sigma,
        vt: DenseTensor::new(Shape::new(vec![n, n])?, vt)?,
    })
}

#[inline]
fn rotate_pair(cols: &mut [f64], height: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    let (head, tail) = cols.split_at_mut(hi * height);
    let cp = &mut head[lo * height..(lo + 1) * height];
    let cq = &mut tail[..height];
    if p < q {
        for i in 0..height {
            let wp = c * cp[i] - s * cq[i];
            let wq = s * cp[i] + c * cq[i];
            cp[i] = wp;
            cq[i] = wq;
        }
    } else {
        for i in 0..height {
            let wp = c * cq[i] - s * cp[i];
            let wq = s * cq[i] + c * cp[i];
            cq[i] = wp;
            cp[i] = wq;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::matmul;

    fn reconstruct(svd: &Svd) -> DenseTensor {
        let k = svd.sigma.len();
        let mut scaled = svd.u.clone();
        let n = svd.u.cols();
        for i in 0..svd.u.rows() {
            for j in 0..k {
                scaled.values_mut()[i * n + j] *= svd.sigma[j];
            }
        }
        matmul(&scaled, &svd.vt).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseTensor {
        let mut rng = Rng::new(seed);
        let values = (0..rows * cols).map(|_| rng.normal()).collect();
        DenseTensor::new(Shape::new(vec![rows, cols]).unwrap(), values).unwrap()
    }

    #[test]
    fn reconstructs_random_matrices() {
        for (rows, cols, seed) in [(5, 5, 1u64), (8, 3, 2), (3, 8, 3), (16, 16, 4)] {
            let a = random_matrix(rows, cols, seed);
            let svd = jacobi_svd(&a).unwrap();
            let r = reconstruct(&svd);
            let err = crate::tensor::frob_rel_error(&r, &a).unwrap();
            assert!(err < 1e-12, "{rows}x{cols} err {err}");
        }
    }

    #[test]
    fn singular_values_descending_and_nonnegative() {
        let a = random_matrix(7, 4, 11);
        let svd = jacobi_svd(&a).unwrap();
        for pair in svd.sigma.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
        assert!(svd.sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn diagonal_matrix_exact() {
        let a = DenseTensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let svd = jacobi_svd(&a).unwrap();
        assert!((svd.sigma[0] - 3.0).abs() < 1e-14);
        assert!((svd.sigma[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn orthonormal_factors() {
        let a = random_matrix(6, 4, 21);
        let svd = jacobi_svd(&a).unwrap();
        let utu = matmul(&svd.u.transpose().unwrap(), &svd.u).unwrap();
        let eye = DenseTensor::identity(4).unwrap();
        let err = crate::tensor::frob_rel_error(&utu, &eye).unwrap();
        assert!(err < 1e-12, "U^T U err {err}");
        let vvt = matmul(&svd.vt, &svd.vt.transpose().unwrap()).unwrap();
        let err = crate::tensor::frob_rel_error(&vvt, &eye).unwrap();
        assert!(err < 1e-12, "V V^T err {err}");
    }
}
