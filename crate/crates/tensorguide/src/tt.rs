//! Tensor-train matrices: construction, application to a latent vector,
//! dense materialization, TT-SVD, and parameter accounting.
//!
//! A TT-matrix maps a latent of length `prod(in_dims)` to an output of length
//! `prod(out_dims)` through a chain of 4-way cores. Core `k` has shape
//! `[r_{k-1}, n_k, m_k, r_k]`; contraction interleaves input/output digits as
//! `(n1 m1)(n2 m2)...`, and boundary ranks are pinned to `r_0 = r_K = 1`.

use crate::error::{Error, Result};
use crate::svd::jacobi_svd;
use crate::tensor::{init_xavier_uniform, DenseTensor, Shape};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Default cap on materialized entries (2^24).
pub const MATERIALIZE_CAP: usize = 1 << 24;

/// Mode sizes and bond ranks of a TT-matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TTFormat {
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    ranks: Vec<usize>,
}

impl TTFormat {
    pub fn new(in_dims: Vec<usize>, out_dims: Vec<usize>, ranks: Vec<usize>) -> Result<Self> {
        let k = in_dims.len();
        if k == 0 {
            return Err(Error::InvalidFormat("no modes".into()));
        }
        if out_dims.len() != k {
            return Err(Error::InvalidFormat(format!(
                "{} input dims vs {} output dims",
                k,
                out_dims.len()
            )));
        }
        if ranks.len() != k + 1 {
            return Err(Error::InvalidFormat(format!(
                "ranks length {} must be {} (modes + 1)",
                ranks.len(),
                k + 1
            )));
        }
        if ranks[0] != 1 || ranks[k] != 1 {
            return Err(Error::InvalidFormat(format!(
                "boundary ranks must be 1, got r0={} rK={}",
                ranks[0], ranks[k]
            )));
        }
        if in_dims.contains(&0) || out_dims.contains(&0) || ranks.contains(&0) {
            return Err(Error::InvalidFormat("zero dimension or rank".into()));
        }
        // Element counts must stay in range.
        Shape::new(in_dims.clone())?;
        Shape::new(out_dims.clone())?;
        Ok(TTFormat {
            in_dims,
            out_dims,
            ranks,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.in_dims.len()
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Latent length `prod(in_dims)`.
    pub fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    /// Output length `prod(out_dims)`.
    pub fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Shape of core `k`: `[r_{k-1}, n_k, m_k, r_k]`.
    pub fn core_shape(&self, k: usize) -> [usize; 4] {
        [
            self.ranks[k],
            self.in_dims[k],
            self.out_dims[k],
            self.ranks[k + 1],
        ]
    }
}

/// One 4-way core of a TT-matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTCore {
    data: DenseTensor,
}

impl TTCore {
    pub fn new(data: DenseTensor) -> Result<Self> {
        if data.shape().rank() != 4 {
            return Err(Error::InvalidFormat(format!(
                "core must be 4-way, got {}",
                data.shape()
            )));
        }
        Ok(TTCore { data })
    }

    pub fn data(&self) -> &DenseTensor {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DenseTensor {
        &mut self.data
    }

    pub fn left_rank(&self) -> usize {
        self.data.shape().dims()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.data.shape().dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.data.shape().dims()[2]
    }

    pub fn right_rank(&self) -> usize {
        self.data.shape().dims()[3]
    }
}

/// Tensor-train matrix: ordered cores consistent with a [`TTFormat`].
#[derive(Debug, Clone, PartialEq)]
pub struct TTMatrix {
    format: TTFormat,
    cores: Vec<TTCore>,
}

impl TTMatrix {
    pub fn new(format: TTFormat, cores: Vec<TTCore>) -> Result<Self> {
        if cores.len() != format.num_modes() {
            return Err(Error::InvalidFormat(format!(
                "{} cores for {} modes",
                cores.len(),
                format.num_modes()
            )));
        }
        for (k, core) in cores.iter().enumerate() {
            let want = format.core_shape(k);
            let got = core.data.shape().dims();
            if got != want {
                return Err(Error::InvalidFormat(format!(
                    "core {k} shape {got:?}, format requires {want:?}"
                )));
            }
        }
        Ok(TTMatrix { format, cores })
    }

    pub fn format(&self) -> &TTFormat {
        &self.format
    }

    pub fn cores(&self) -> &[TTCore] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [TTCore] {
        &mut self.cores
    }

    pub fn param_count(&self) -> usize {
        tt_param_count(&self.format)
    }
}

/// Trainable parameter count: sum over cores of `r_{k-1} * n_k * m_k * r_k`.
pub fn tt_param_count(format: &TTFormat) -> usize {
    (0..format.num_modes())
        .map(|k| format.core_shape(k).iter().product::<usize>())
        .sum()
}

/// Xavier-uniform initialization of every core.
///
/// Core `k` uses `fan_in = r_{k-1} * n_k`, `fan_out = m_k * r_k`, and the
/// sub-stream seed `derive(seed, k)`.
pub fn tt_init(format: &TTFormat, seed: u64) -> Result<TTMatrix> {
    let mut cores = Vec::with_capacity(format.num_modes());
    for k in 0..format.num_modes() {
        let [r0, n, m, r1] = format.core_shape(k);
        let data = init_xavier_uniform(
            Shape::new(vec![r0, n, m, r1])?,
            r0 * n,
            m * r1,
            crate::rng::derive(seed, k as u64),
        )?;
        cores.push(TTCore::new(data)?);
    }
    TTMatrix::new(format.clone(), cores)
}

// Stage sizes of the left-to-right contraction. Stage k holds a tensor of
// layout [prod(m_{<k}), r_k, prod(n_{>=k})], flattened row-major; stage 0 is
// the latent itself and stage K is the output.
fn stage_len(format: &TTFormat, k: usize) -> usize {
    let m_prev: usize = format.out_dims[..k].iter().product();
    let n_rest: usize = format.in_dims[k..].iter().product();
    m_prev * format.ranks[k] * n_rest
}

/// Intermediates of [`tt_apply_with_tape`], consumed by [`tt_apply_backward`].
#[derive(Debug, Clone)]
pub struct ApplyTape {
    stages: Vec<Vec<f64>>,
}

fn apply_stages(tt: &TTMatrix, z: &DenseTensor, keep_tape: bool) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let format = &tt.format;
    if z.len() != format.in_len() {
        return Err(Error::ShapeMismatch(format!(
            "latent length {} but format expects {}",
            z.len(),
            format.in_len()
        )));
    }
    let k_modes = format.num_modes();
    let mut tape: Vec<Vec<f64>> = Vec::new();
    let mut stage: Vec<f64> = z.values().to_vec();
    for k in 0..k_modes {
        let m_prev: usize = format.out_dims[..k].iter().product();
        let r = format.ranks[k];
        let n = format.in_dims[k];
        let m = format.out_dims[k];
        let r_next = format.ranks[k + 1];
        let rest: usize = format.in_dims[k + 1..].iter().product();
        debug_assert_eq!(stage.len(), stage_len(format, k));

        let g = tt.cores[k].data.values(); // [(r*n) x (m*r_next)] row-major
        let rows = r * n;
        let cols = m * r_next;
        let mut next = vec![0.0f64; m_prev * cols * rest];
        for p in 0..m_prev {
            let x = &stage[p * rows * rest..(p + 1) * rows * rest]; // [rows x rest]
            let y = &mut next[p * cols * rest..(p + 1) * cols * rest]; // [cols x rest]
            // y = g^T x, accumulating over the shared index in ascending order.
            for (b, xrow) in x.chunks_exact(rest).enumerate() {
                let grow = &g[b * cols..(b + 1) * cols];
                for (a, &gba) in grow.iter().enumerate() {
                    if gba == 0.0 {
                        continue;
                    }
                    let yrow = &mut y[a * rest..(a + 1) * rest];
                    for (yv, xv) in yrow.iter_mut().zip(xrow) {
                        *yv += gba * xv;
                    }
                }
            }
        }
        if keep_tape {
            tape.push(stage);
        } else {
            stage.clear();
        }
        stage = next;
    }
    Ok((stage, tape))
}

/// Contract a latent through the TT chain: output length `prod(out_dims)`.
pub fn tt_apply(tt: &TTMatrix, z: &DenseTensor) -> Result<DenseTensor> {
    let (y, _) = apply_stages(tt, z, false)?;
    DenseTensor::new(Shape::new(vec![tt.format.out_len()])?, y)
}

/// [`tt_apply`] that also records the per-stage intermediates.
pub fn tt_apply_with_tape(tt: &TTMatrix, z: &DenseTensor) -> Result<(DenseTensor, ApplyTape)> {
    let (y, stages) = apply_stages(tt, z, true)?;
    Ok((
        DenseTensor::new(Shape::new(vec![tt.format.out_len()])?, y)?,
        ApplyTape { stages },
    ))
}

/// Reverse-mode pass through the contraction of [`tt_apply_with_tape`].
///
/// Given the upstream gradient `dy` of a scalar objective with respect to the
/// output, returns the exact gradients with respect to every core and to the
/// latent. Accumulation runs in a fixed order so results are bit-deterministic.
pub fn tt_apply_backward(
    tt: &TTMatrix,
    tape: &ApplyTape,
    dy: &DenseTensor,
) -> Result<(Vec<DenseTensor>, DenseTensor)> {
    let format = &tt.format;
    if dy.len() != format.out_len() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient length {} but format emits {}",
            dy.len(),
            format.out_len()
        )));
    }
    let k_modes = format.num_modes();
    if tape.stages.len() != k_modes {
        return Err(Error::InvalidArgument("tape does not match format".into()));
    }
    let mut core_grads: Vec<DenseTensor> = Vec::with_capacity(k_modes);
    for k in 0..k_modes {
        let [r0, n, m, r1] = format.core_shape(k);
        core_grads.push(DenseTensor::zeros(Shape::new(vec![r0, n, m, r1])?));
    }

    let mut d_stage: Vec<f64> = dy.values().to_vec();
    for k in (0..k_modes).rev() {
        let m_prev: usize = format.out_dims[..k].iter().product();
        let r = format.ranks[k];
        let n = format.in_dims[k];
        let m = format.out_dims[k];
        let r_next = format.ranks[k + 1];
        let rest: usize = format.in_dims[k + 1..].iter().product();
        let rows = r * n;
        let cols = m * r_next;

        let g = tt.cores[k].data.values();
        let x_all = &tape.stages[k];
        let dg = core_grads[k].values_mut();
        let mut d_prev = vec![0.0f64; m_prev * rows * rest];
        for p in 0..m_prev {
            let x = &x_all[p * rows * rest..(p + 1) * rows * rest];
            let dyk = &d_stage[p * cols * rest..(p + 1) * cols * rest];
            let dx = &mut d_prev[p * rows * rest..(p + 1) * rows * rest];
            // dG[b, a] += sum_c X[b, c] * dY[a, c];  dX[b, c] = sum_a G[b, a] * dY[a, c].
            for b in 0..rows {
                let xrow = &x[b * rest..(b + 1) * rest];
                let dxrow = &mut dx[b * rest..(b + 1) * rest];
                let grow = &g[b * cols..(b + 1) * cols];
                let dgrow = &mut dg[b * cols..(b + 1) * cols];
                for a in 0..cols {
                    let dyrow = &dyk[a * rest..(a + 1) * rest];
                    let mut acc = 0.0;
                    for (xv, dv) in xrow.iter().zip(dyrow) {
                        acc += xv * dv;
                    }
                    dgrow[a] += acc;
                    let gba = grow[a];
                    if gba != 0.0 {
                        for (dxv, dv) in dxrow.iter_mut().zip(dyrow) {
                            *dxv += gba * dv;
                        }
                    }
                }
            }
        }
        d_stage = d_prev;
    }

    let dz = DenseTensor::new(Shape::new(vec![format.in_len()])?, d_stage)?;
    Ok((core_grads, dz))
}

/// Materialize the dense `prod(in_dims) x prod(out_dims)` matrix with the
/// default entry cap.
pub fn tt_materialize(tt: &TTMatrix) -> Result<DenseTensor> {
    tt_materialize_with_cap(tt, MATERIALIZE_CAP)
}

/// Materialize with an explicit entry cap.
///
/// Entry `(i, j)` is the scalar chain product of core slices selected by the
/// row-major digits of `i` over `in_dims` and of `j` over `out_dims`. The
/// construction below expands digit by digit and never routes through
/// [`tt_apply`], so the two stay independent checks of each other.
pub fn tt_materialize_with_cap(tt: &TTMatrix, cap: usize) -> Result<DenseTensor> {
    let format = &tt.format;
    let rows_total = format.in_len();
    let cols_total = format.out_len();
    let total = rows_total
        .checked_mul(cols_total)
        .ok_or_else(|| Error::InvalidShape("materialized size overflow".into()))?;
    if total > cap {
        return Err(Error::CapExceeded {
            rows: rows_total,
            cols: cols_total,
            total,
            cap,
        });
    }

    // acc[I, J, rho] over the digits consumed so far.
    let mut acc = vec![1.0f64];
    let mut rows = 1usize;
    let mut cols = 1usize;
    let mut rank = 1usize;
    for k in 0..format.num_modes() {
        let [r, n, m, r_next] = format.core_shape(k);
        debug_assert_eq!(r, rank);
        let g = tt.cores[k].data.values();
        let rows_next = rows * n;
        let cols_next = cols * m;
        let mut next = vec![0.0f64; rows_next * cols_next * r_next];
        for big_i in 0..rows {
            for i in 0..n {
                for big_j in 0..cols {
                    for j in 0..m {
                        let dst =
                            (((big_i * n + i) * cols_next) + (big_j * m + j)) * r_next;
                        for rho_next in 0..r_next {
                            let mut val = 0.0;
                            for rho in 0..rank {
                                let a = acc[(big_i * cols + big_j) * rank + rho];
                                let gval = g[((rho * n + i) * m + j) * r_next + rho_next];
                                val += a * gval;
                            }
                            next[dst + rho_next] = val;
                        }
                    }
                }
            }
        }
        acc = next;
        rows = rows_next;
        cols = cols_next;
        rank = r_next;
    }
    debug_assert_eq!(rank, 1);
    DenseTensor::new(Shape::new(vec![rows_total, cols_total])?, acc)
}

/// Maximal exact TT ranks for the interleaved factorization of a dense matrix.
pub fn full_ranks(in_dims: &[usize], out_dims: &[usize]) -> Vec<usize> {
    let k = in_dims.len();
    let mut ranks = vec![1usize; k + 1];
    for bond in 1..k {
        let left: usize = (0..bond).map(|l| in_dims[l] * out_dims[l]).product();
        let right: usize = (bond..k).map(|l| in_dims[l] * out_dims[l]).product();
        ranks[bond] = left.min(right);
    }
    ranks
}

/// Sequential-SVD construction of a TT-matrix from a dense matrix.
///
/// `w` must be `prod(in_dims) x prod(out_dims)`. At each step the unfolding is
/// factored by a thin SVD; singular values below `tol * ||w||_F` are dropped,
/// and bond `k` is additionally capped by `max_ranks[k]` (length `K + 1`,
/// boundary entries ignored). With `tol = 0` and full ranks the result
/// reproduces `w` up to round-off.
pub fn tt_svd(
    w: &DenseTensor,
    in_dims: &[usize],
    out_dims: &[usize],
    max_ranks: &[usize],
    tol: f64,
) -> Result<TTMatrix> {
    if w.shape().rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "tt_svd input must be rank 2, got {}",
            w.shape()
        )));
    }
    let k_modes = in_dims.len();
    if k_modes == 0 || out_dims.len() != k_modes {
        return Err(Error::InvalidFormat(
            "in_dims/out_dims must be nonempty and equal length".into(),
        ));
    }
    if max_ranks.len() != k_modes + 1 {
        return Err(Error::InvalidFormat(format!(
            "max_ranks length {} must be {}",
            max_ranks.len(),
            k_modes + 1
        )));
    }
    let p: usize = in_dims.iter().product();
    let q: usize = out_dims.iter().product();
    if w.rows() != p || w.cols() != q {
        return Err(Error::ShapeMismatch(format!(
            "matrix {} does not factor as {in_dims:?} x {out_dims:?}",
            w.shape()
        )));
    }

    // Permute into the interleaved tensor over modes (n_k * m_k).
    let mode_sizes: Vec<usize> = (0..k_modes).map(|k| in_dims[k] * out_dims[k]).collect();
    let mut interleaved = vec![0.0f64; p * q];
    let mut in_digits = vec![0usize; k_modes];
    let mut out_digits = vec![0usize; k_modes];
    for i in 0..p {
        split_digits(i, in_dims, &mut in_digits);
        for j in 0..q {
            split_digits(j, out_dims, &mut out_digits);
            let mut t = 0usize;
            for k in 0..k_modes {
                t = t * mode_sizes[k] + (in_digits[k] * out_dims[k] + out_digits[k]);
            }
            interleaved[t] = w.at(i, j);
        }
    }

    let threshold = tol * w.frob_norm();
    let mut cores: Vec<TTCore> = Vec::with_capacity(k_modes);
    let mut ranks: Vec<usize> = vec![1];
    let mut current = interleaved;
    let mut r_prev = 1usize;
    for k in 0..k_modes - 1 {
        let rows = r_prev * mode_sizes[k];
        let rest: usize = mode_sizes[k + 1..].iter().product();
        let mat = DenseTensor::new(Shape::new(vec![rows, rest])?, current)?;
        let svd = jacobi_svd(&mat)?;
        let mut keep = svd.sigma.iter().filter(|&&s| s >= threshold).count();
        keep = keep.clamp(1, svd.sigma.len()).min(max_ranks[k + 1]);

        // Fold the kept left singular vectors into core k.
        let mut core = vec![0.0f64; rows * keep];
        for rr in 0..rows {
            for c in 0..keep {
                core[rr * keep + c] = svd.u.at(rr, c);
            }
        }
        cores.push(TTCore::new(DenseTensor::new(
            Shape::new(vec![r_prev, in_dims[k], out_dims[k], keep])?,
            core,
        )?)?);
        ranks.push(keep);

        // Carry sigma * V^T forward.
        let mut carried = vec![0.0f64; keep * rest];
        for c in 0..keep {
            let s = svd.sigma[c];
            for jj in 0..rest {
                carried[c * rest + jj] = s * svd.vt.at(c, jj);
            }
        }
        current = carried;
        r_prev = keep;
    }
    // Last core absorbs the remainder.
    let last = k_modes - 1;
    cores.push(TTCore::new(DenseTensor::new(
        Shape::new(vec![r_prev, in_dims[last], out_dims[last], 1])?,
        current,
    )?)?);
    ranks.push(1);

    let format = TTFormat::new(in_dims.to_vec(), out_dims.to_vec(), ranks)?;
    TTMatrix::new(format, cores)
}

#[inline]
fn split_digits(mut index: usize, dims: &[usize], digits: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        digits[k] = index % dims[k];
        index /= dims[k];
    }
}

/// Identity the adapter layout demands of a format, reported as a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatViolation {
    /// `prod(out_dims)` must equal `D*M + M*Q`.
    OutputLength { expected: usize, actual: usize },
    /// `prod(in_dims)` must equal the latent length.
    LatentLength { expected: usize, actual: usize },
}

impl std::fmt::Display for FormatViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatViolation::OutputLength { expected, actual } => write!(
                f,
                "output length {actual} != D*M + M*Q = {expected}"
            ),
            FormatViolation::LatentLength { expected, actual } => {
                write!(f, "latent length {actual} != {expected}")
            }
        }
    }
}

/// Check the two identities that let a format generate both adapter matrices:
/// `prod(out_dims) = D*M + M*Q` and `prod(in_dims) = latent_len`. Returns the
/// first violated identity, or `None` when the format fits.
pub fn validate_adapter_format(
    format: &TTFormat,
    d: usize,
    q: usize,
    m: usize,
    latent_len: usize,
) -> Option<FormatViolation> {
    let expected_out = d * m + m * q;
    if format.out_len() != expected_out {
        return Some(FormatViolation::OutputLength {
            expected: expected_out,
            actual: format.out_len(),
        });
    }
    if format.in_len() != latent_len {
        return Some(FormatViolation::LatentLength {
            expected: latent_len,
            actual: format.in_len(),
        });
    }
    None
}

/// Write a TT-matrix as four decimal header lines (`K`, `in_dims`,
/// `out_dims`, `ranks`, space-separated) followed by every core's values as
/// little-endian 64-bit reals, in core order, row-major.
pub fn write_tt<W: Write>(tt: &TTMatrix, out: &mut W) -> Result<()> {
    let f = &tt.format;
    writeln!(out, "{}", f.num_modes())?;
    writeln!(out, "{}", join_dims(f.in_dims()))?;
    writeln!(out, "{}", join_dims(f.out_dims()))?;
    writeln!(out, "{}", join_dims(f.ranks()))?;
    for core in &tt.cores {
        for v in core.data.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`write_tt`].
pub fn read_tt<R: BufRead>(input: &mut R) -> Result<TTMatrix> {
    let k: usize = read_header_line(input)?
        .parse()
        .map_err(|_| Error::MalformedFile("mode count".into()))?;
    let in_dims = parse_dims(&read_header_line(input)?, k, "in_dims")?;
    let out_dims = parse_dims(&read_header_line(input)?, k, "out_dims")?;
    let ranks = parse_dims(&read_header_line(input)?, k + 1, "ranks")?;
    let format = TTFormat::new(in_dims, out_dims, ranks)?;
    let mut cores = Vec::with_capacity(k);
    for idx in 0..k {
        let shape = format.core_shape(idx);
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 8];
        input.read_exact(&mut bytes).map_err(|_| {
            Error::MalformedFile(format!("core {idx} truncated ({count} values expected)"))
        })?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        cores.push(TTCore::new(DenseTensor::new(
            Shape::new(shape.to_vec())?,
            values,
        )?)?);
    }
    TTMatrix::new(format, cores)
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn read_header_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    let n = input.read_line(&mut line)?;
    if n == 0 {
        return Err(Error::MalformedFile("unexpected end of header".into()));
    }
    Ok(line.trim().to_string())
}

fn parse_dims(line: &str, expect: usize, what: &str) -> Result<Vec<usize>> {
    let dims: std::result::Result<Vec<usize>, _> =
        line.split_whitespace().map(|t| t.parse::<usize>()).collect();
    let dims = dims.map_err(|_| Error::MalformedFile(format!("{what} line")))?;
    if dims.len() != expect {
        return Err(Error::MalformedFile(format!(
            "{what}: {} entries, expected {expect}",
            dims.len()
        )));
    }
    Ok(dims)
}
