//! Empirical neural-tangent-kernel diagnostics.
//!
//! For a chosen logit index, the NTK is the Gram matrix of per-sample
//! parameter gradients. The eigensolver is a cyclic Jacobi iteration; all
//! spectral statements here are measurements, not assertions.

use crate::adapters::{Adapter, FrozenBackbone, TensorGuideAdapter};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};
use crate::train::backward_from_dlogits;
use crate::tt::{tt_apply_backward, tt_apply_with_tape};
use serde::Serialize;

/// Cap on dense Jacobian storage: `samples * params` entries.
pub const JACOBIAN_CAP: usize = 1 << 24;

const SYMMETRY_TOL: f64 = 1e-10;
const EIG_SWEEPS: usize = 100;
const EIG_OFFDIAG_FACTOR: f64 = 1e-12;

/// Symmetric Gram matrix of per-sample parameter Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct NTKMatrix {
    data: DenseTensor,
    sample_count: usize,
}

impl NTKMatrix {
    /// Wrap an `N x N` matrix, enforcing symmetry within 1e-10.
    pub fn new(data: DenseTensor) -> Result<Self> {
        if data.shape().rank() != 2 || data.rows() != data.cols() {
            return Err(Error::ShapeMismatch(format!(
                "kernel matrix must be square, got {}",
                data.shape()
            )));
        }
        let n = data.rows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (data.at(i, j) - data.at(j, i)).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric at ({i}, {j}): {} vs {}",
                        data.at(i, j),
                        data.at(j, i)
                    )));
                }
            }
        }
        Ok(NTKMatrix {
            data,
            sample_count: n,
        })
    }

    pub fn data(&self) -> &DenseTensor {
        &self.data
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// `kappa^2` estimate: the largest diagonal entry.
    pub fn max_diagonal(&self) -> f64 {
        (0..self.sample_count)
            .map(|i| self.data.at(i, i))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Gradient of the logit at `output_index` with respect to every trainable
/// parameter, flattened in the adapter's canonical parameter order.
pub fn param_jacobian(
    adapter: &Adapter,
    backbone: &FrozenBackbone,
    x: &DenseTensor,
    output_index: usize,
) -> Result<Vec<f64>> {
    let q = backbone.num_classes();
    if output_index >= q {
        return Err(Error::IndexOutOfRange {
            index: output_index,
            len: q,
        });
    }
    let features = backbone.features(x)?;
    if features.rows() != 1 {
        return Err(Error::ShapeMismatch("one sample at a time".into()));
    }
    // Upstream gradient: one-hot at the chosen logit, no softmax.
    let mut dlogits = DenseTensor::zeros(Shape::new(vec![1, q])?);
    dlogits.values_mut()[output_index] = 1.0;
    let grads = backward_from_dlogits(adapter, &features, &dlogits)?;
    Ok(grads.flatten())
}

/// Assemble the `N x N` kernel `J J^T` of stacked per-sample Jacobians.
pub fn ntk_matrix(
    adapter: &Adapter,
    backbone: &FrozenBackbone,
    samples: &DenseTensor,
    output_index: usize,
) -> Result<NTKMatrix> {
    let n = samples.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let theta = adapter.param_count();
    let entries = n
        .checked_mul(theta)
        .ok_or_else(|| Error::InvalidShape("jacobian size overflow".into()))?;
    if entries > JACOBIAN_CAP {
        return Err(Error::InvalidArgument(format!(
            "jacobian storage {n} x {theta} = {entries} entries exceeds cap {JACOBIAN_CAP}; subsample"
        )));
    }
    let p = samples.cols();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for b in 0..n {
        let x = DenseTensor::new(Shape::new(vec![1, p])?, samples.row(b).to_vec())?;
        rows.push(param_jacobian(adapter, backbone, &x, output_index)?);
    }
    let mut gram = DenseTensor::zeros(Shape::new(vec![n, n])?);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            gram.values_mut()[i * n + j] = dot;
            gram.values_mut()[j * n + i] = dot;
        }
    }
    NTKMatrix::new(gram)
}

/// Eigenvalues (ascending) and matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DenseTensor,
}

/// Cyclic Jacobi eigendecomposition of a symmetric rank-2 tensor.
///
/// Rotations run until the largest off-diagonal magnitude drops below
/// `1e-12 * ||m||_F` or 100 sweeps elapse.
pub fn eig_sym_dense(m: &DenseTensor) -> Result<SymmetricEigen> {
    if m.shape().rank() != 2 || m.rows() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "eigensolver needs a square matrix, got {}",
            m.shape()
        )));
    }
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.at(i, j) - m.at(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "asymmetric beyond tolerance at ({i}, {j})"
                )));
            }
        }
    }
    let mut a: Vec<f64> = m.values().to_vec();
    // Symmetrize round-off so rotations preserve symmetry exactly.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = avg;
            a[j * n + i] = avg;
        }
    }
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let stop = EIG_OFFDIAG_FACTOR * m.frob_norm();

    for _sweep in 0..EIG_SWEEPS {
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                max_off = max_off.max(a[p * n + q].abs());
            }
        }
        if max_off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= stop {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e12 {
                    1.0 / (2.0 * theta)
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[p * n + k] = a[k * n + p];
                        a[k * n + q] = s * akp + c * akq;
                        a[q * n + k] = a[k * n + q];
                    }
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    // Ascending eigenvalue order, vectors permuted alongside.
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = vec![0.0f64; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors: DenseTensor::new(Shape::new(vec![n, n])?, vectors)?,
    })
}

/// Eigendecomposition of a kernel matrix, eigenvalues ascending.
pub fn eig_sym(m: &NTKMatrix) -> Result<SymmetricEigen> {
    eig_sym_dense(&m.data)
}

/// Spectral statistics of one adapter on one sample set.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub name: String,
    pub param_count: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `lambda_max / lambda_min`; absent when the kernel is singular at
    /// working precision.
    pub condition_number: Option<f64>,
    pub kappa: f64,
    pub psd: bool,
}

/// Spectral statistics for a named set of adapters over shared samples.
/// Purely diagnostic: nothing here asserts an ordering.
pub fn ntk_compare(
    adapters: &[(String, Adapter)],
    backbone: &FrozenBackbone,
    samples: &DenseTensor,
    output_index: usize,
) -> Result<Vec<SpectralReport>> {
    let mut out = Vec::with_capacity(adapters.len());
    for (name, adapter) in adapters {
        let kernel = ntk_matrix(adapter, backbone, samples, output_index)?;
        let eig = eig_sym(&kernel)?;
        let lambda_min = *eig.values.first().expect("nonempty spectrum");
        let lambda_max = *eig.values.last().expect("nonempty spectrum");
        let condition_number = if lambda_min > 0.0 {
            Some(lambda_max / lambda_min)
        } else {
            None
        };
        out.push(SpectralReport {
            name: name.clone(),
            param_count: adapter.param_count(),
            lambda_min,
            lambda_max,
            condition_number,
            kappa: kernel.max_diagonal().max(0.0).sqrt(),
            psd: lambda_min >= -1e-8,
        });
    }
    Ok(out)
}

/// Both sides of the Rayleigh-quotient lower bound
/// `lambda_min(T) >= lambda_min(J J^T) * lambda_min(G G^T)` for the
/// weight-generating adapter, computed on a small sample set and reported,
/// never asserted.
#[derive(Debug, Clone, Serialize)]
pub struct RayleighCheck {
    pub lambda_min_ntk: f64,
    pub lambda_min_jjt: f64,
    pub lambda_min_ggt: f64,
    pub rhs_product: f64,
    pub holds: bool,
}

pub fn rayleigh_check(
    adapter: &TensorGuideAdapter,
    backbone: &FrozenBackbone,
    samples: &DenseTensor,
    output_index: usize,
) -> Result<RayleighCheck> {
    let d = adapter.feature_dim();
    let q = adapter.num_classes();
    let m = adapter.hidden_width();
    let w_len = d * m + m * q;
    let theta = crate::tt::tt_param_count(adapter.tt.format());
    if w_len * w_len.max(theta) > JACOBIAN_CAP {
        return Err(Error::InvalidArgument(
            "generated-weight space too large for the dense check; use a smaller preset".into(),
        ));
    }

    // J = d w_hat / d theta, one backward pass per generated scalar.
    let (_, tape) = tt_apply_with_tape(&adapter.tt, &adapter.z)?;
    let mut j_rows: Vec<Vec<f64>> = Vec::with_capacity(w_len);
    for i in 0..w_len {
        let mut dy = DenseTensor::zeros(Shape::new(vec![w_len])?);
        dy.values_mut()[i] = 1.0;
        let (core_grads, _) = tt_apply_backward(&adapter.tt, &tape, &dy)?;
        let mut row = Vec::with_capacity(theta);
        for g in &core_grads {
            row.extend_from_slice(g.values());
        }
        j_rows.push(row);
    }
    let jjt = gram_of(&j_rows)?;

    // G = d f / d w_hat per sample, at the generated weights.
    let (w1, w2) = adapter.generate_weights()?;
    let features = backbone.features(samples)?;
    let n = features.rows();
    let mut g_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for b in 0..n {
        let x = features.row(b);
        let mut pre = vec![0.0f64; m];
        for jm in 0..m {
            let mut acc = 0.0;
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * w1.at(i, jm);
            }
            pre[jm] = acc;
        }
        let mut row = vec![0.0f64; w_len];
        // d logit_q / d W1[i, jm] = x[i] * sigma'(pre[jm]) * W2[jm, q]
        for (i, &xi) in x.iter().enumerate() {
            for jm in 0..m {
                row[i * m + jm] =
                    xi * adapter.activation.derivative(pre[jm]) * w2.at(jm, output_index);
            }
        }
        // d logit_q / d W2[jm, l] = sigma(pre[jm]) * delta(l == q)
        for jm in 0..m {
            row[d * m + jm * q + output_index] = adapter.activation.apply(pre[jm]);
        }
        g_rows.push(row);
    }
    let ggt = gram_of(&g_rows)?;

    let kernel = ntk_matrix(
        &Adapter::TensorGuide(adapter.clone()),
        backbone,
        samples,
        output_index,
    )?;
    let lambda_min_ntk = *eig_sym(&kernel)?.values.first().expect("spectrum");
    let lambda_min_jjt = *eig_sym_dense(&jjt)?.values.first().expect("spectrum");
    let lambda_min_ggt = *eig_sym_dense(&ggt)?.values.first().expect("spectrum");
    let rhs_product = lambda_min_jjt * lambda_min_ggt;
    Ok(RayleighCheck {
        lambda_min_ntk,
        lambda_min_jjt,
        lambda_min_ggt,
        rhs_product,
        holds: lambda_min_ntk >= rhs_product - 1e-10,
    })
}

fn gram_of(rows: &[Vec<f64>]) -> Result<DenseTensor> {
    let n = rows.len();
    let mut gram = DenseTensor::zeros(Shape::new(vec![n, n])?);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            gram.values_mut()[i * n + j] = dot;
            gram.values_mut()[j * n + i] = dot;
        }
    }
    Ok(gram)
}
