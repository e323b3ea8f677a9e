//! The three adaptation strategies behind one interface: given frozen
//! backbone features, produce `logits = x W0 + delta(x)`.
//!
//! * [`LoraAdapter`]: trainable low-rank pair, `delta(x) = (x W1) W2`.
//! * [`TtLoraAdapter`]: each low-rank factor held in its own tensor train.
//! * [`TensorGuideAdapter`]: one tensor train applied to a fixed Gaussian
//!   latent emits the concatenation of both MLP weights, so
//!   `delta(x) = sigma(x W1_hat) W2_hat` with hidden width `M` decoupled from
//!   the trainable parameter count.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{init_gaussian, init_xavier_uniform, matmul, DenseTensor, Shape};
use crate::tt::{
    read_tt, tt_apply, tt_init, tt_materialize_with_cap, tt_param_count, validate_adapter_format,
    write_tt, TTFormat, TTMatrix,
};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};

/// Pointwise nonlinearity of the generated MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    ReLU,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the pre-activation. The kink of ReLU at 0
    /// takes derivative 0.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-pre).exp());
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::ReLU),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation {other}"))),
        }
    }
}

/// Frozen head and frozen random feature projection; never touched by
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBackbone {
    w0: DenseTensor,          // [D x Q]
    feature_map: DenseTensor, // [P x D]
}

impl FrozenBackbone {
    pub fn new(w0: DenseTensor, feature_map: DenseTensor) -> Result<Self> {
        if w0.shape().rank() != 2 || feature_map.shape().rank() != 2 {
            return Err(Error::ShapeMismatch("backbone matrices must be rank 2".into()));
        }
        if feature_map.cols() != w0.rows() {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} vs head input {}",
                feature_map.cols(),
                w0.rows()
            )));
        }
        Ok(FrozenBackbone { w0, feature_map })
    }

    pub fn w0(&self) -> &DenseTensor {
        &self.w0
    }

    pub fn feature_map(&self) -> &DenseTensor {
        &self.feature_map
    }

    /// Raw input length `P`.
    pub fn input_len(&self) -> usize {
        self.feature_map.rows()
    }

    /// Feature width `D`.
    pub fn feature_dim(&self) -> usize {
        self.w0.rows()
    }

    /// Output width `Q`.
    pub fn num_classes(&self) -> usize {
        self.w0.cols()
    }

    /// Project raw inputs `[batch x P]` to features `[batch x D]`.
    pub fn features(&self, x_raw: &DenseTensor) -> Result<DenseTensor> {
        matmul(x_raw, &self.feature_map)
    }

    /// Frozen-head logits `[batch x Q]` from features.
    pub fn base_logits(&self, features: &DenseTensor) -> Result<DenseTensor> {
        matmul(features, &self.w0)
    }
}

/// Directly trained low-rank pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub w1: DenseTensor, // [D x r]
    pub w2: DenseTensor, // [r x Q]
    rank: usize,
}

impl LoraAdapter {
    /// Xavier-uniform `W1`, zero `W2`: training starts at the frozen model.
    pub fn init(d: usize, q: usize, rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be >= 1".into()));
        }
        let w1 = init_xavier_uniform(Shape::new(vec![d, rank])?, d, rank, seed)?;
        let w2 = DenseTensor::zeros(Shape::new(vec![rank, q])?);
        Ok(LoraAdapter { w1, w2, rank })
    }

    pub fn from_parts(w1: DenseTensor, w2: DenseTensor) -> Result<Self> {
        if w1.shape().rank() != 2 || w2.shape().rank() != 2 || w1.cols() != w2.rows() {
            return Err(Error::ShapeMismatch(format!(
                "lora factors {} and {}",
                w1.shape(),
                w2.shape()
            )));
        }
        let rank = w1.cols();
        Ok(LoraAdapter { w1, w2, rank })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn delta(&self, features: &DenseTensor) -> Result<DenseTensor> {
        matmul(&matmul(features, &self.w1)?, &self.w2)
    }
}

/// Low-rank pair with each factor held in tensor-train form.
#[derive(Debug, Clone, PartialEq)]
pub struct TtLoraAdapter {
    pub tt1: TTMatrix, // materializes to [D x r]
    pub tt2: TTMatrix, // materializes to [r x Q]
    rank: usize,
}

impl TtLoraAdapter {
    pub fn init(format1: &TTFormat, format2: &TTFormat, seed: u64) -> Result<Self> {
        let tt1 = tt_init(format1, rng::derive(seed, 0))?;
        let tt2 = tt_init(format2, rng::derive(seed, 1))?;
        Self::from_parts(tt1, tt2)
    }

    pub fn from_parts(tt1: TTMatrix, tt2: TTMatrix) -> Result<Self> {
        if tt1.format().out_len() != tt2.format().in_len() {
            return Err(Error::ShapeMismatch(format!(
                "tt1 emits rank {} but tt2 consumes {}",
                tt1.format().out_len(),
                tt2.format().in_len()
            )));
        }
        let rank = tt1.format().out_len();
        Ok(TtLoraAdapter { tt1, tt2, rank })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn delta(&self, features: &DenseTensor) -> Result<DenseTensor> {
        // Row by row: u = x W1 is exactly the train applied to the feature row.
        let batch = features.rows();
        let q = self.tt2.format().out_len();
        let mut out = DenseTensor::zeros(Shape::new(vec![batch, q])?);
        for b in 0..batch {
            let row = DenseTensor::new(
                Shape::new(vec![features.cols()])?,
                features.row(b).to_vec(),
            )?;
            let u = tt_apply(&self.tt1, &row)?;
            let y = tt_apply(&self.tt2, &u)?;
            out.values_mut()[b * q..(b + 1) * q].copy_from_slice(y.values());
        }
        Ok(out)
    }
}

/// One tensor train generates both MLP weights from a Gaussian latent.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGuideAdapter {
    pub tt: TTMatrix,
    pub z: DenseTensor,
    d: usize,
    q: usize,
    m_width: usize,
    pub activation: Activation,
    pub resample_per_batch: bool,
    /// When set, the generated MLP replaces the frozen head instead of
    /// correcting it.
    pub replace_head: bool,
}

impl TensorGuideAdapter {
    /// Xavier cores plus a standard-normal latent, both derived from `seed`.
    /// The format must satisfy `prod(out_dims) = D*M + M*Q` and
    /// `prod(in_dims) =` latent length.
    pub fn init(
        format: &TTFormat,
        d: usize,
        q: usize,
        m_width: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let tt = tt_init(format, rng::derive(seed, 0))?;
        let z = init_gaussian(
            Shape::new(vec![format.in_len()])?,
            rng::derive(seed, 1),
        );
        Self::from_parts(tt, z, d, q, m_width, activation)
    }

    pub fn from_parts(
        tt: TTMatrix,
        z: DenseTensor,
        d: usize,
        q: usize,
        m_width: usize,
        activation: Activation,
    ) -> Result<Self> {
        if let Some(violation) = validate_adapter_format(tt.format(), d, q, m_width, z.len()) {
            return Err(Error::InvalidFormat(violation.to_string()));
        }
        Ok(TensorGuideAdapter {
            tt,
            z,
            d,
            q,
            m_width,
            activation,
            resample_per_batch: false,
            replace_head: false,
        })
    }

    pub fn hidden_width(&self) -> usize {
        self.m_width
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.q
    }

    /// Draw a fresh latent; only the trainer calls this, and only when
    /// per-batch resampling is on.
    pub fn resample_latent(&mut self, seed: u64) {
        self.z = init_gaussian(
            Shape::new(vec![self.tt.format().in_len()]).expect("valid latent shape"),
            seed,
        );
    }

    /// Run the train on the latent and slice the output: the first `D*M`
    /// entries are `W1_hat` (row-major `[D x M]`), the next `M*Q` are
    /// `W2_hat` (`[M x Q]`).
    pub fn generate_weights(&self) -> Result<(DenseTensor, DenseTensor)> {
        let y = tt_apply(&self.tt, &self.z)?;
        self.slice_generated(&y)
    }

    pub(crate) fn slice_generated(&self, y: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
        let split = self.d * self.m_width;
        let total = split + self.m_width * self.q;
        if y.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "generated vector length {} != {total}",
                y.len()
            )));
        }
        let w1 = DenseTensor::new(
            Shape::new(vec![self.d, self.m_width])?,
            y.values()[..split].to_vec(),
        )?;
        let w2 = DenseTensor::new(
            Shape::new(vec![self.m_width, self.q])?,
            y.values()[split..].to_vec(),
        )?;
        Ok((w1, w2))
    }

    fn delta(&self, features: &DenseTensor) -> Result<DenseTensor> {
        let (w1, w2) = self.generate_weights()?;
        let pre = matmul(features, &w1)?;
        let mut h = pre.clone();
        for v in h.values_mut() {
            *v = self.activation.apply(*v);
        }
        matmul(&h, &w2)
    }
}

/// Any of the three adaptation strategies.
#[derive(Debug, Clone, PartialEq)]
pub enum Adapter {
    Lora(LoraAdapter),
    TtLora(TtLoraAdapter),
    TensorGuide(TensorGuideAdapter),
}

impl Adapter {
    pub fn kind(&self) -> &'static str {
        match self {
            Adapter::Lora(_) => "lora",
            Adapter::TtLora(_) => "tt-lora",
            Adapter::TensorGuide(_) => "tensor-guide",
        }
    }

    /// Trainable parameters in the adaptation path; the frozen backbone is
    /// never counted.
    pub fn param_count(&self) -> usize {
        match self {
            Adapter::Lora(a) => a.rank * (a.w1.rows() + a.w2.cols()),
            Adapter::TtLora(a) => {
                tt_param_count(a.tt1.format()) + tt_param_count(a.tt2.format())
            }
            Adapter::TensorGuide(a) => tt_param_count(a.tt.format()),
        }
    }

    /// Canonical parameter order used for gradients, checkpoints, and
    /// flattened Jacobians.
    pub fn param_names(&self) -> Vec<String> {
        match self {
            Adapter::Lora(_) => vec!["w1".into(), "w2".into()],
            Adapter::TtLora(a) => {
                let mut names: Vec<String> = (0..a.tt1.cores().len())
                    .map(|k| format!("tt1.core{k}"))
                    .collect();
                names.extend((0..a.tt2.cores().len()).map(|k| format!("tt2.core{k}")));
                names
            }
            Adapter::TensorGuide(a) => {
                (0..a.tt.cores().len()).map(|k| format!("core{k}")).collect()
            }
        }
    }

    pub fn params(&self) -> Vec<&DenseTensor> {
        match self {
            Adapter::Lora(a) => vec![&a.w1, &a.w2],
            Adapter::TtLora(a) => a
                .tt1
                .cores()
                .iter()
                .chain(a.tt2.cores().iter())
                .map(|c| c.data())
                .collect(),
            Adapter::TensorGuide(a) => a.tt.cores().iter().map(|c| c.data()).collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseTensor> {
        match self {
            Adapter::Lora(a) => vec![&mut a.w1, &mut a.w2],
            Adapter::TtLora(a) => {
                let (tt1, tt2) = (&mut a.tt1, &mut a.tt2);
                tt1.cores_mut()
                    .iter_mut()
                    .chain(tt2.cores_mut().iter_mut())
                    .map(|c| c.data_mut())
                    .collect()
            }
            Adapter::TensorGuide(a) => a
                .tt
                .cores_mut()
                .iter_mut()
                .map(|c| c.data_mut())
                .collect(),
        }
    }

    /// The trainable correction `delta(x)` on `[batch x D]` features.
    pub fn delta(&self, features: &DenseTensor) -> Result<DenseTensor> {
        match self {
            Adapter::Lora(a) => a.delta(features),
            Adapter::TtLora(a) => a.delta(features),
            Adapter::TensorGuide(a) => a.delta(features),
        }
    }

    /// Logits from precomputed features: `x W0 + delta(x)`, or `delta(x)`
    /// alone for a head-replacing generator.
    pub fn forward_features(
        &self,
        backbone: &FrozenBackbone,
        features: &DenseTensor,
    ) -> Result<DenseTensor> {
        let delta = self.delta(features)?;
        if let Adapter::TensorGuide(a) = self {
            if a.replace_head {
                return Ok(delta);
            }
        }
        backbone.base_logits(features)?.add(&delta)
    }

    /// Full path from raw inputs `[batch x P]` to logits `[batch x Q]`.
    pub fn forward(&self, backbone: &FrozenBackbone, x_raw: &DenseTensor) -> Result<DenseTensor> {
        let features = backbone.features(x_raw)?;
        self.forward_features(backbone, &features)
    }
}

const CHECKPOINT_MAGIC: &str = "adapter v1";

/// Write an adapter checkpoint: a type tag, the dimension line, then the
/// parameters in canonical order (low-rank pairs row-major; tensor trains via
/// the TT file layout; the generator additionally stores its latent).
pub fn write_adapter<W: Write>(adapter: &Adapter, out: &mut W) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    match adapter {
        Adapter::Lora(a) => {
            writeln!(out, "lora {} {} {}", a.w1.rows(), a.w2.cols(), a.rank)?;
            for v in a.w1.values().iter().chain(a.w2.values()) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Adapter::TtLora(a) => {
            writeln!(
                out,
                "tt-lora {} {} {}",
                a.tt1.format().in_len(),
                a.tt2.format().out_len(),
                a.rank
            )?;
            write_tt(&a.tt1, out)?;
            write_tt(&a.tt2, out)?;
        }
        Adapter::TensorGuide(a) => {
            writeln!(
                out,
                "tensor-guide {} {} {} {} {} {}",
                a.d,
                a.q,
                a.m_width,
                a.activation.name(),
                a.resample_per_batch as u8,
                a.replace_head as u8,
            )?;
            write_tt(&a.tt, out)?;
            for v in a.z.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Inverse of [`write_adapter`].
pub fn read_adapter<R: BufRead>(input: &mut R) -> Result<Adapter> {
    let magic = read_line(input)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::MalformedFile(format!("bad magic {magic:?}")));
    }
    let header = read_line(input)?;
    let mut parts = header.split_whitespace();
    let tag = parts.next().ok_or_else(|| Error::MalformedFile("empty header".into()))?;
    match tag {
        "lora" => {
            let (d, q, r) = (parse_usize(&mut parts)?, parse_usize(&mut parts)?, parse_usize(&mut parts)?);
            let w1 = read_matrix(input, d, r)?;
            let w2 = read_matrix(input, r, q)?;
            Ok(Adapter::Lora(LoraAdapter::from_parts(w1, w2)?))
        }
        "tt-lora" => {
            let (_d, _q, _r) = (parse_usize(&mut parts)?, parse_usize(&mut parts)?, parse_usize(&mut parts)?);
            let tt1 = read_tt(input)?;
            let tt2 = read_tt(input)?;
            Ok(Adapter::TtLora(TtLoraAdapter::from_parts(tt1, tt2)?))
        }
        "tensor-guide" => {
            let d = parse_usize(&mut parts)?;
            let q = parse_usize(&mut parts)?;
            let m_width = parse_usize(&mut parts)?;
            let activation = Activation::parse(
                parts.next().ok_or_else(|| Error::MalformedFile("missing activation".into()))?,
            )?;
            let resample = parse_usize(&mut parts)? != 0;
            let replace = parse_usize(&mut parts)? != 0;
            let tt = read_tt(input)?;
            let latent_len = tt.format().in_len();
            let mut bytes = vec![0u8; latent_len * 8];
            input
                .read_exact(&mut bytes)
                .map_err(|_| Error::MalformedFile("latent truncated".into()))?;
            let z = DenseTensor::new(
                Shape::new(vec![latent_len])?,
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            )?;
            let mut adapter =
                TensorGuideAdapter::from_parts(tt, z, d, q, m_width, activation)?;
            adapter.resample_per_batch = resample;
            adapter.replace_head = replace;
            Ok(Adapter::TensorGuide(adapter))
        }
        other => Err(Error::MalformedFile(format!("unknown adapter tag {other:?}"))),
    }
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(Error::MalformedFile("unexpected end of file".into()));
    }
    Ok(line.trim().to_string())
}

fn parse_usize(parts: &mut std::str::SplitWhitespace<'_>) -> Result<usize> {
    parts
        .next()
        .ok_or_else(|| Error::MalformedFile("short header".into()))?
        .parse()
        .map_err(|_| Error::MalformedFile("bad integer".into()))
}

fn read_matrix<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<DenseTensor> {
    let mut bytes = vec![0u8; rows * cols * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::MalformedFile("matrix truncated".into()))?;
    DenseTensor::new(
        Shape::new(vec![rows, cols])?,
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    )
}

/// Materialize both factors of a [`TtLoraAdapter`] (testing and inspection).
pub fn materialize_tt_lora(adapter: &TtLoraAdapter) -> Result<(DenseTensor, DenseTensor)> {
    let w1 = tt_materialize_with_cap(&adapter.tt1, usize::MAX)?;
    let w2 = tt_materialize_with_cap(&adapter.tt2, usize::MAX)?;
    Ok((w1, w2))
}
