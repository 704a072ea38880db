//! U-shaped encoder–decoder segmentation networks and the hard-sharing
//! multi-head variant.
//!
//! Layout for `depth = d` and `base_channels = b` (level `l` has `b·2^l`
//! channels):
//!
//! ```text
//! enc{l}.c1, enc{l}.c2   3×3 conv + relu, dropout, then 2×2 max pool   l = 0..d
//! mid.c1, mid.c2         3×3 conv + relu, dropout
//! dec{l}.up              ×2 nearest upsample, 3×3 conv + relu          l = d-1..0
//! dec{l}.c1, dec{l}.c2   concat skip, 3×3 conv + relu ×2, dropout
//! head                   1×1 conv to 2 logits
//! ```

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, NodeId, Real, Tensor};

/// Network shape hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dropout_p: f64,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            in_channels: 1,
            out_channels: 2,
            dropout_p: 0.39,
        }
    }
}

/// One convolution layer of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvSpec {
    fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.fan_in() + self.out_channels
    }
}

/// Which layers a parameter set covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Full,
    Encoder,
    Decoder,
}

impl Part {
    fn contains(self, layer: &str) -> bool {
        let enc = layer.starts_with("enc") || layer.starts_with("mid");
        match self {
            Part::Full => true,
            Part::Encoder => enc,
            Part::Decoder => !enc,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.depth == 0 {
            problems.push("depth must be at least 1".to_string());
        }
        if self.base_channels == 0 {
            problems.push("base_channels must be positive".to_string());
        }
        if self.in_channels != 1 {
            problems.push(format!("in_channels must be 1, got {}", self.in_channels));
        }
        if self.out_channels != 2 {
            problems.push(format!("out_channels must be 2, got {}", self.out_channels));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            problems.push(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Input height and width must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Every convolution in forward order.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let mut layers = Vec::new();
        for l in 0..self.depth {
            let cin = if l == 0 { self.in_channels } else { self.channels(l - 1) };
            layers.push(ConvSpec::new(format!("enc{l}.c1"), cin, self.channels(l), 3));
            layers.push(ConvSpec::new(format!("enc{l}.c2"), self.channels(l), self.channels(l), 3));
        }
        let bottom = self.channels(self.depth);
        layers.push(ConvSpec::new("mid.c1".into(), self.channels(self.depth - 1), bottom, 3));
        layers.push(ConvSpec::new("mid.c2".into(), bottom, bottom, 3));
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            layers.push(ConvSpec::new(format!("dec{l}.up"), self.channels(l + 1), c, 3));
            layers.push(ConvSpec::new(format!("dec{l}.c1"), 2 * c, c, 3));
            layers.push(ConvSpec::new(format!("dec{l}.c2"), c, c, 3));
        }
        layers.push(ConvSpec::new("head".into(), self.channels(0), self.out_channels, 1));
        layers
    }

    pub fn layers_of(&self, part: Part) -> Vec<ConvSpec> {
        self.layers().into_iter().filter(|l| part.contains(&l.name)).collect()
    }

    /// Closed-form parameter count of the full network.
    pub fn param_count(&self) -> usize {
        let (b, d) = (self.base_channels, self.depth);
        let ch = |l: usize| b << l;
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let mut n = conv(self.in_channels, b, 3) + conv(b, b, 3);
        for l in 1..d {
            n += conv(ch(l - 1), ch(l), 3) + conv(ch(l), ch(l), 3);
        }
        n += conv(ch(d - 1), ch(d), 3) + conv(ch(d), ch(d), 3);
        for l in 0..d {
            // up conv, post-concat conv, second conv: 9·c·(2c + 2c + c) + 3c
            n += 9 * ch(l) * (ch(l + 1) + 3 * ch(l)) + 3 * ch(l);
        }
        n + conv(b, self.out_channels, 1)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [c, h, w] = *shape else {
            return Err(Error::InvalidShape {
                op: "unet_forward",
                msg: format!("image must be C×H×W, got {shape:?}"),
            });
        };
        if c != self.in_channels {
            return Err(Error::InvalidShape {
                op: "unet_forward",
                msg: format!("expected {} input channel(s), got {c}", self.in_channels),
            });
        }
        let d = self.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::IndivisibleInput {
                height: h,
                width: w,
                divisor: d,
            });
        }
        Ok(())
    }
}

/// Ordered, uniquely named parameter tensors of one network (or one part of
/// a shared network).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    arch: Arch,
    part: Part,
    tensors: Vec<(String, Tensor<T>)>,
}

/// Kernels ~ U(-1/√fan_in, 1/√fan_in), biases zero. Deterministic per seed.
pub fn init_params<T: Real>(arch: &Arch, part: Part, seed: u64) -> Result<NetworkParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for layer in arch.layers_of(part) {
        let bound = 1.0 / (layer.fan_in() as f64).sqrt();
        let kernel: Vec<f64> = (0..layer.out_channels * layer.fan_in())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let shape = [layer.out_channels, layer.in_channels, layer.kernel, layer.kernel];
        tensors.push((format!("{}.w", layer.name), Tensor::from_f64(&shape, &kernel)?));
        tensors.push((format!("{}.b", layer.name), Tensor::zeros(&[layer.out_channels])));
    }
    Ok(NetworkParams {
        arch: arch.clone(),
        part,
        tensors,
    })
}

impl<T: Real> NetworkParams<T> {
    /// Rebuilds a parameter set from named tensors, checking every expected
    /// name and shape for `arch`/`part`.
    pub fn from_tensors(arch: Arch, part: Part, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        arch.validate()?;
        let expected: Vec<(String, Vec<usize>)> = arch
            .layers_of(part)
            .into_iter()
            .flat_map(|l| {
                [
                    (format!("{}.w", l.name), vec![l.out_channels, l.in_channels, l.kernel, l.kernel]),
                    (format!("{}.b", l.name), vec![l.out_channels]),
                ]
            })
            .collect();
        if expected.len() != tensors.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Invalid(format!(
                    "parameter mismatch: expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { arch, part, tensors })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn part(&self) -> Part {
        self.part
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.arch.dropout_p = p;
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch.clone(),
            part: self.part,
            tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Registers every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ParamNodes {
        let mut ids = HashMap::with_capacity(self.tensors.len());
        let mut order = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let id = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            ids.insert(name.clone(), id);
            order.push(name.clone());
        }
        ParamNodes { ids, order }
    }
}

/// Graph handles of a bound [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct ParamNodes {
    ids: HashMap<String, NodeId>,
    order: Vec<String>,
}

/// Parameter gradients keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub HashMap<String, Vec<T>>);

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.0.get(name).map(Vec::as_slice)
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

impl ParamNodes {
    /// Handles for nodes registered elsewhere, in the given order.
    pub fn from_ids(pairs: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        let mut ids = HashMap::new();
        let mut order = Vec::new();
        for (name, id) in pairs {
            order.push(name.clone());
            ids.insert(name, id);
        }
        ParamNodes { ids, order }
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.order.iter().map(|n| self.ids[n])
    }

    /// Reads gradients after a backward pass. Parameters the root did not
    /// depend on get an all-zero gradient.
    pub fn gradients<T: Real>(&self, g: &Graph<T>) -> Gradients<T> {
        Gradients(
            self.order
                .iter()
                .map(|name| {
                    let id = self.ids[name];
                    let grad = g
                        .grad(id)
                        .map(<[T]>::to_vec)
                        .unwrap_or_else(|| vec![T::zero(); g.value(id).numel()]);
                    (name.clone(), grad)
                })
                .collect(),
        )
    }
}

fn conv<T: Real>(g: &mut Graph<T>, p: &ParamNodes, layer: &str, x: NodeId, relu: bool) -> Result<NodeId> {
    let w = p.id(&format!("{layer}.w"))?;
    let b = p.id(&format!("{layer}.b"))?;
    let pad = (g.shape(w)[2] - 1) / 2;
    let y = g.conv2d(x, w, b, pad)?;
    Ok(if relu { g.relu(y) } else { y })
}

/// Encoder outputs: one skip tensor per level plus the bottleneck.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub skips: Vec<NodeId>,
    pub bottom: NodeId,
}

pub fn encode<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &ParamNodes,
    arch: &Arch,
    image: NodeId,
    mode: Mode,
    rng: &mut R,
) -> Result<Encoded> {
    arch.check_input(g.shape(image))?;
    let mut x = image;
    let mut skips = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        x = conv(g, p, &format!("enc{l}.c1"), x, true)?;
        x = conv(g, p, &format!("enc{l}.c2"), x, true)?;
        x = g.dropout(x, arch.dropout_p, mode, rng)?;
        skips.push(x);
        x = g.max_pool2(x)?;
    }
    x = conv(g, p, "mid.c1", x, true)?;
    x = conv(g, p, "mid.c2", x, true)?;
    let bottom = g.dropout(x, arch.dropout_p, mode, rng)?;
    Ok(Encoded { skips, bottom })
}

/// Decoder from encoder features to 2×H×W logits.
pub fn decode<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &ParamNodes,
    arch: &Arch,
    enc: &Encoded,
    mode: Mode,
    rng: &mut R,
) -> Result<NodeId> {
    let mut x = enc.bottom;
    for l in (0..arch.depth).rev() {
        x = g.upsample2(x)?;
        x = conv(g, p, &format!("dec{l}.up"), x, true)?;
        x = g.concat(x, enc.skips[l])?;
        x = conv(g, p, &format!("dec{l}.c1"), x, true)?;
        x = conv(g, p, &format!("dec{l}.c2"), x, true)?;
        x = g.dropout(x, arch.dropout_p, mode, rng)?;
    }
    conv(g, p, "head", x, false)
}

/// Full U-net: `1×H×W` image to `2×H×W` logits.
pub fn unet_forward<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &ParamNodes,
    arch: &Arch,
    image: NodeId,
    mode: Mode,
    rng: &mut R,
) -> Result<NodeId> {
    let enc = encode(g, p, arch, image, mode, rng)?;
    decode(g, p, arch, &enc, mode, rng)
}

/// Shared encoder with two structurally identical decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadParams<T> {
    pub encoder: NetworkParams<T>,
    pub decoder_m: NetworkParams<T>,
    pub decoder_s: NetworkParams<T>,
}

impl<T: Real> MultiHeadParams<T> {
    pub fn init(arch: &Arch, seed: u64) -> Result<Self> {
        Ok(Self {
            encoder: init_params(arch, Part::Encoder, seed)?,
            decoder_m: init_params(arch, Part::Decoder, seed.wrapping_add(1))?,
            decoder_s: init_params(arch, Part::Decoder, seed.wrapping_add(2))?,
        })
    }

    pub fn arch(&self) -> &Arch {
        self.encoder.arch()
    }
}

/// Bound handles of a [`MultiHeadParams`].
pub struct MultiHeadNodes {
    pub encoder: ParamNodes,
    pub decoder_m: ParamNodes,
    pub decoder_s: ParamNodes,
}

impl<T: Real> MultiHeadParams<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> MultiHeadNodes {
        MultiHeadNodes {
            encoder: self.encoder.bind(g, trainable),
            decoder_m: self.decoder_m.bind(g, trainable),
            decoder_s: self.decoder_s.bind(g, trainable),
        }
    }
}

/// Runs the encoder once and both decoders on its features; returns
/// `(myocardium logits, scar logits)`.
pub fn multihead_forward<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &MultiHeadNodes,
    arch: &Arch,
    image: NodeId,
    mode: Mode,
    rng: &mut R,
) -> Result<(NodeId, NodeId)> {
    let enc = encode(g, &p.encoder, arch, image, mode, rng)?;
    let m = decode(g, &p.decoder_m, arch, &enc, mode, rng)?;
    let s = decode(g, &p.decoder_s, arch, &enc, mode, rng)?;
    Ok((m, s))
}
