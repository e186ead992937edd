//! Encoder, latent dynamics, auxiliary head and decoder probe.
//!
//! All four components are ReLU perceptrons with a linear output layer:
//!
//! * encoder `z = E(o)` on preprocessed observations, optionally behind a
//!   strided convolution whose responses are averaged over positions;
//! * dynamics `ẑ' = T([z; a])`, one hidden layer;
//! * auxiliary head `P(z)`, two hidden layers;
//! * decoder probe `D(z)`, reading a detached copy of `z`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PJPA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Linear layers with ReLU between them and none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    /// Plain forward pass without a tape.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i + 1 < self.layers.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// Tape handles of one perceptron's parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpVars {
    pub fn register(tape: &mut Tape, mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, w);
            h = tape.add_row(h, b);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }

    fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// What the encoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSpec {
    /// One-hot observation ids of a tabular MDP.
    OneHot { num_observations: usize },
    /// `channels x size x size` images, intensities shifted to `[-0.5, 0.5]`.
    Image { channels: usize, size: usize },
}

impl InputSpec {
    pub fn dim(self) -> usize {
        match self {
            InputSpec::OneHot { num_observations } => num_observations,
            InputSpec::Image { channels, size } => channels * size * size,
        }
    }
}

/// A strided convolution over image inputs, optionally followed by
/// per-position layers (1x1 convolutions). Every layer is ReLU'd and the last
/// one is averaged over all positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pointwise: Vec<usize>,
}

impl ConvSpec {
    pub fn positions_per_axis(&self, size: usize) -> usize {
        (size - self.kernel) / self.stride + 1
    }

    pub fn widths(&self, channels: usize) -> Vec<usize> {
        let mut w = vec![channels * self.kernel * self.kernel, self.filters];
        w.extend(&self.pointwise);
        w
    }

    pub fn out_dim(&self) -> usize {
        self.pointwise.last().copied().unwrap_or(self.filters)
    }
}

/// Every `kernel x kernel` window of channel-planar images, one row per
/// (image, position) pair. Rows for one image are contiguous.
pub fn patches(inputs: &Tensor, channels: usize, size: usize, conv: &ConvSpec) -> Tensor {
    let k = conv.kernel;
    let per_axis = conv.positions_per_axis(size);
    let plane = size * size;
    let width = channels * k * k;
    let mut out = vec![0.0; inputs.nrows() * per_axis * per_axis * width];
    let mut rows = out.chunks_exact_mut(width);
    for img in inputs.rows() {
        let img = img.to_slice().expect("row-major input");
        for py in 0..per_axis {
            for px in 0..per_axis {
                let row = rows.next().expect("sized above");
                for (c, chunk) in row.chunks_exact_mut(k * k).enumerate() {
                    for (dy, dst) in chunk.chunks_exact_mut(k).enumerate() {
                        let base = c * plane + (py * conv.stride + dy) * size + px * conv.stride;
                        dst.copy_from_slice(&img[base..base + k]);
                    }
                }
            }
        }
    }
    Tensor::from_shape_vec((inputs.nrows() * per_axis * per_axis, width), out).expect("length matches shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputSpec,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub aux_dim: usize,
    /// Image inputs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvSpec>,
    /// Hidden widths of the encoder; empty means a single linear map.
    pub encoder_hidden: Vec<usize>,
    pub dynamics_hidden: usize,
    pub aux_hidden: usize,
    pub decoder_hidden: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if let Some(conv) = &self.conv {
            let InputSpec::Image { size, .. } = self.input else {
                return Err(Error::InvalidConfig("convolution needs image inputs".into()));
            };
            if conv.kernel == 0
                || conv.stride == 0
                || conv.filters == 0
                || conv.kernel > size
                || conv.pointwise.contains(&0)
            {
                return Err(Error::InvalidConfig(format!("bad convolution {conv:?}")));
            }
        }
        Ok(())
    }

    fn conv_layer(&self) -> Option<(&ConvSpec, usize, usize)> {
        match (&self.conv, self.input) {
            (Some(conv), InputSpec::Image { channels, size }) => Some((conv, channels, size)),
            _ => None,
        }
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        let first = match &self.conv {
            Some(conv) => conv.out_dim(),
            None => self.input.dim(),
        };
        let mut w = vec![first];
        w.extend(&self.encoder_hidden);
        w.push(self.latent_dim);
        w
    }

    pub fn dynamics_widths(&self) -> Vec<usize> {
        vec![self.latent_dim + self.action_dim, self.dynamics_hidden, self.latent_dim]
    }

    pub fn aux_widths(&self) -> Vec<usize> {
        vec![self.latent_dim, self.aux_hidden, self.aux_hidden, self.aux_dim]
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        vec![self.latent_dim, self.decoder_hidden, self.input.dim()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    /// Present iff `arch.conv` is set; the first layer's weight is
    /// `(channels * kernel²) x filters`.
    pub conv: Option<Mlp>,
    pub encoder: Mlp,
    pub dynamics: Mlp,
    pub aux_head: Mlp,
    pub decoder: Mlp,
}

impl ModelParams {
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng::seeded(rng::derive_seed(seed, rng::stream::INIT));
        let conv = arch
            .conv_layer()
            .map(|(c, channels, _)| Mlp::new(&c.widths(channels), &mut rng));
        Self {
            conv,
            encoder: Mlp::new(&arch.encoder_widths(), &mut rng),
            dynamics: Mlp::new(&arch.dynamics_widths(), &mut rng),
            aux_head: Mlp::new(&arch.aux_widths(), &mut rng),
            decoder: Mlp::new(&arch.decoder_widths(), &mut rng),
            arch,
        }
    }

    /// Every parameter tensor, encoder first, then dynamics, aux head and
    /// decoder; weight before bias within each layer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.conv
            .iter()
            .flat_map(Mlp::tensors)
            .chain(self.encoder.tensors())
            .chain(self.dynamics.tensors())
            .chain(self.aux_head.tensors())
            .chain(self.decoder.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.conv
            .iter_mut()
            .flat_map(Mlp::tensors_mut)
            .chain(self.encoder.tensors_mut())
            .chain(self.dynamics.tensors_mut())
            .chain(self.aux_head.tensors_mut())
            .chain(self.decoder.tensors_mut())
            .collect()
    }

    /// Number of leading tensors in [`Self::tensors`] that belong to the
    /// encoder.
    pub fn encoder_tensor_count(&self) -> usize {
        2 * (self.encoder.layers.len() + self.conv.as_ref().map_or(0, |c| c.layers.len()))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `z = E(x)` on already preprocessed inputs.
    pub fn encode(&self, inputs: &Tensor) -> Result<Tensor> {
        check_cols("encoder input", inputs, self.arch.input.dim())?;
        let features = match (&self.conv, self.arch.conv_layer()) {
            (Some(conv), Some((spec, channels, size))) => {
                let mut h = conv.forward(&patches(inputs, channels, size, spec));
                h.mapv_inplace(|v| v.max(0.0));
                crate::autodiff::mean_pool_rows(&h, spec.positions_per_axis(size).pow(2))
            }
            _ => inputs.clone(),
        };
        finite("encode", self.encoder.forward(&features))
    }

    /// Encoder applied on a tape to preprocessed inputs.
    pub fn encode_on_tape(&self, tape: &mut Tape, vars: &ParamVars, inputs: &Tensor) -> Var {
        match (&vars.conv, self.arch.conv_layer()) {
            (Some(conv), Some((spec, channels, size))) => {
                let x = tape.input(patches(inputs, channels, size, spec));
                let h = conv.forward(tape, x);
                let h = tape.relu(h);
                let pooled = tape.mean_pool_rows(h, spec.positions_per_axis(size).pow(2));
                vars.encoder.forward(tape, pooled)
            }
            _ => {
                let x = tape.input(inputs.clone());
                vars.encoder.forward(tape, x)
            }
        }
    }

    /// `ẑ' = T([z; a])`.
    pub fn predict_next(&self, latents: &Tensor, actions: &Tensor) -> Result<Tensor> {
        check_cols("latent", latents, self.arch.latent_dim)?;
        check_cols("action", actions, self.arch.action_dim)?;
        if latents.nrows() != actions.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} latents but {} actions",
                latents.nrows(),
                actions.nrows()
            )));
        }
        let joined = ndarray::concatenate(ndarray::Axis(1), &[latents.view(), actions.view()])
            .expect("row counts checked");
        finite("predict_next", self.dynamics.forward(&joined))
    }

    pub fn predict_aux(&self, latents: &Tensor) -> Result<Tensor> {
        check_cols("latent", latents, self.arch.latent_dim)?;
        finite("aux_head", self.aux_head.forward(latents))
    }

    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            conv: self.conv.as_ref().map(|c| MlpVars::register(tape, c)),
            encoder: MlpVars::register(tape, &self.encoder),
            dynamics: MlpVars::register(tape, &self.dynamics),
            aux_head: MlpVars::register(tape, &self.aux_head),
            decoder: MlpVars::register(tape, &self.decoder),
        }
    }

    pub fn write_checkpoint(&self, mut w: impl Write, config_json: &str) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        let header = serde_json::to_string(&CheckpointHeader {
            architecture: self.arch.clone(),
            config: serde_json::from_str(config_json)?,
        })?;
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(header.as_bytes())?;
        let tensors = self.tensors();
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for t in tensors {
            w.write_u32::<LittleEndian>(2)?;
            w.write_u32::<LittleEndian>(t.nrows() as u32)?;
            w.write_u32::<LittleEndian>(t.ncols() as u32)?;
            for &v in t.iter() {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint, returning the parameters and the echoed config.
    pub fn read_checkpoint(mut r: impl Read) -> Result<(Self, serde_json::Value)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        header.architecture.validate()?;
        let mut params = Self::init(header.architecture, 0);
        let count = r.read_u32::<LittleEndian>()? as usize;
        let slots = params.tensors_mut();
        if count != slots.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} tensors, architecture expects {}",
                slots.len()
            )));
        }
        for slot in slots {
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let dims = (0..ndim)
                .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            if dims != [slot.nrows(), slot.ncols()] {
                return Err(Error::Format(format!(
                    "tensor shape {dims:?} does not match {:?}",
                    slot.shape()
                )));
            }
            for v in slot.iter_mut() {
                *v = f64::from(r.read_f32::<LittleEndian>()?);
            }
        }
        Ok((params, header.config))
    }

    pub fn save(&self, path: impl AsRef<Path>, config_json: &str) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut w, config_json)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    config: serde_json::Value,
}

fn check_cols(what: &str, t: &Tensor, expected: usize) -> Result<()> {
    if t.ncols() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} columns, expected {expected}",
            t.ncols()
        )));
    }
    Ok(())
}

fn finite(op: &str, t: Tensor) -> Result<Tensor> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(t)
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

/// Tape handles for every component.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub conv: Option<MlpVars>,
    pub encoder: MlpVars,
    pub dynamics: MlpVars,
    pub aux_head: MlpVars,
    pub decoder: MlpVars,
}

impl ParamVars {
    /// Same order as [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        self.conv
            .iter()
            .flat_map(MlpVars::vars)
            .chain(self.encoder.vars())
            .chain(self.dynamics.vars())
            .chain(self.aux_head.vars())
            .chain(self.decoder.vars())
            .collect()
    }
}

/// The zero-loss witness on a tabular MDP with scalar aux values.
///
/// The encoder embeds observation `k` as the basis vector `e_k`. The dynamics
/// hidden unit for `(k, a)` computes `relu(z_k + a_a - 1)`, which is 1 exactly
/// when `z = e_k` and the action is one-hot `a`, and the output layer sends it
/// to `e_{f(k, a)}`. The aux head passes `z` through two identity layers and
/// reads `p` off with a final dot product. Requires
/// `latent_dim >= |O|`.
pub fn perfect_fit(mdp: &crate::mdp::DeterministicMdp, latent_dim: usize) -> Result<ModelParams> {
    let n = mdp.num_observations;
    let na = mdp.num_actions;
    if latent_dim < n {
        return Err(Error::InvalidConfig(format!(
            "latent_dim {latent_dim} < |O| = {n}"
        )));
    }
    let arch = Architecture {
        input: InputSpec::OneHot { num_observations: n },
        action_dim: na,
        latent_dim,
        aux_dim: mdp.aux_dim(),
        conv: None,
        encoder_hidden: vec![],
        dynamics_hidden: n * na,
        aux_hidden: latent_dim,
        decoder_hidden: 8,
    };
    let mut params = ModelParams::init(arch, 0);

    let mut enc = Linear::zeros(n, latent_dim);
    for k in 0..n {
        enc.weight[[k, k]] = 1.0;
    }
    params.encoder.layers = vec![enc];

    let mut hidden = Linear::zeros(latent_dim + na, n * na);
    let mut out = Linear::zeros(n * na, latent_dim);
    for k in 0..n {
        for a in 0..na {
            let unit = k * na + a;
            hidden.weight[[k, unit]] = 1.0;
            hidden.weight[[latent_dim + a, unit]] = 1.0;
            hidden.bias[[0, unit]] = -1.0;
            out.weight[[unit, mdp.next(k, a)]] = 1.0;
        }
    }
    params.dynamics.layers = vec![hidden, out];

    let identity = || {
        let mut l = Linear::zeros(latent_dim, latent_dim);
        for i in 0..latent_dim {
            l.weight[[i, i]] = 1.0;
        }
        l
    };
    let mut readout = Linear::zeros(latent_dim, mdp.aux_dim());
    for k in 0..n {
        for (d, &v) in mdp.aux[k].iter().enumerate() {
            readout.weight[[k, d]] = v;
        }
    }
    params.aux_head.layers = vec![identity(), identity(), readout];
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::counting_abstract_mdp;
    use ndarray::array;

    fn tiny_arch() -> Architecture {
        Architecture {
            input: InputSpec::OneHot { num_observations: 5 },
            action_dim: 2,
            latent_dim: 4,
            aux_dim: 1,
            conv: None,
            encoder_hidden: vec![6],
            dynamics_hidden: 7,
            aux_hidden: 3,
            decoder_hidden: 3,
        }
    }

    #[test]
    fn zero_weights_give_zero_latents() {
        let mut p = ModelParams::init(tiny_arch(), 1);
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        let z = p.encode(&Array2::from_elem((3, 5), 0.7)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let next = p.predict_next(&z, &Array2::ones((3, 2))).unwrap();
        assert!(next.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_encode_identically() {
        let p = ModelParams::init(tiny_arch(), 2);
        let x = array![[0.1, 0.2, 0.3, 0.4, 0.5], [0.1, 0.2, 0.3, 0.4, 0.5]];
        let z = p.encode(&x).unwrap();
        assert_eq!(z.row(0), z.row(1));
        assert!(p.encode(&Array2::zeros((1, 4))).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let p = ModelParams::init(tiny_arch(), 3);
        let limit = (6.0f64 / 11.0).sqrt();
        assert!(p.encoder.layers[0].weight.iter().all(|w| w.abs() <= limit));
        assert_eq!(p, ModelParams::init(tiny_arch(), 3));
    }

    #[test]
    fn perfect_fit_reproduces_dynamics_and_aux() {
        let mdp = counting_abstract_mdp(8, 4).unwrap();
        let p = perfect_fit(&mdp, 12).unwrap();
        let eye = Array2::from_shape_fn((9, 9), |(i, j)| f64::from(u8::from(i == j)));
        let z = p.encode(&eye).unwrap();
        for a in 0..2 {
            let acts = Array2::from_shape_fn((9, 2), |(_, j)| f64::from(u8::from(j == a)));
            let next = p.predict_next(&z, &acts).unwrap();
            for k in 0..9 {
                assert_eq!(next.row(k), z.row(mdp.next(k, a)));
            }
        }
        let aux = p.predict_aux(&z).unwrap();
        for k in 0..9 {
            assert_eq!(aux[[k, 0]], mdp.aux[k][0]);
        }
        assert!(perfect_fit(&mdp, 8).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(tiny_arch(), 4);
        let mut bytes = Vec::new();
        p.write_checkpoint(&mut bytes, r#"{"seed":4}"#).unwrap();
        assert_eq!(&bytes[..4], b"PJPA");
        let (q, cfg) = ModelParams::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(cfg["seed"], 4);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        bytes[0] = b'Q';
        assert!(ModelParams::read_checkpoint(bytes.as_slice()).is_err());
    }

    fn conv_arch() -> Architecture {
        Architecture {
            input: InputSpec::Image { channels: 2, size: 5 },
            conv: Some(ConvSpec {
                kernel: 3,
                stride: 2,
                filters: 4,
                pointwise: vec![3],
            }),
            ..tiny_arch()
        }
    }

    #[test]
    fn patches_follow_planar_layout() {
        let img = Tensor::from_shape_fn((1, 2 * 25), |(_, i)| i as f64);
        let spec = ConvSpec {
            kernel: 3,
            stride: 2,
            filters: 1,
            pointwise: vec![],
        };
        let p = patches(&img, 2, 5, &spec);
        assert_eq!(p.dim(), (4, 18));
        // Second position starts at x = 2 of row 0; channel 1 starts at 25.
        assert_eq!(p.row(1).to_vec()[..3], [2.0, 3.0, 4.0]);
        assert_eq!(p[[1, 9]], 27.0);
        // Last position is the bottom-right window.
        assert_eq!(p[[3, 8]], 24.0);
    }

    #[test]
    fn conv_encoder_tape_matches_plain_forward() {
        let arch = conv_arch();
        arch.validate().unwrap();
        let p = ModelParams::init(arch, 3);
        assert_eq!(p.encoder_tensor_count(), 8);
        let x = Tensor::from_shape_fn((3, 50), |(r, c)| ((r * 31 + c * 7) % 11) as f64 / 11.0 - 0.5);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let z = p.encode_on_tape(&mut tape, &vars, &x);
        let plain = p.encode(&x).unwrap();
        for (a, b) in tape.value(z).iter().zip(plain.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(vars.all().len(), p.tensors().len());
    }

    #[test]
    fn conv_needs_images() {
        let arch = Architecture {
            conv: conv_arch().conv,
            ..tiny_arch()
        };
        assert!(arch.validate().is_err());
    }

    #[test]
    fn conv_checkpoint_round_trip() {
        let p = ModelParams::init(conv_arch(), 8);
        let mut bytes = Vec::new();
        p.write_checkpoint(&mut bytes, "{}").unwrap();
        let (q, _) = ModelParams::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(q.arch, p.arch);
        assert_eq!(q.tensors().len(), p.tensors().len());
    }
}
