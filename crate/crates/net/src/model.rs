//! The DINs encoder–decoder and its deep interactive module (DIM).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ops::{self, Conv3d, Deconv3d, NormCache};
use crate::{NetError, Real, Tensor};

/// Where the guide maps enter the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DimVariant {
    /// Guides concatenated to the input and added at the deepest encoder stage.
    #[default]
    Full,
    /// Input concatenation only.
    InputOnly,
    /// Deepest-stage injection only; the image enters alone.
    HighestOnly,
    /// Deepest-stage injection through a (1,4,4) pool and two strided convolutions.
    V2,
    /// Input concatenation plus injection at encoder stage `n` (1..=5).
    InsertAt(u8),
}

impl DimVariant {
    /// `insert_at(5)` is the proposed structure itself and maps to `Full`.
    pub fn canonical(self) -> Self {
        match self {
            DimVariant::InsertAt(5) => DimVariant::Full,
            v => v,
        }
    }

    pub fn all() -> Vec<DimVariant> {
        let mut v = vec![DimVariant::Full, DimVariant::InputOnly, DimVariant::HighestOnly, DimVariant::V2];
        v.extend((1..=5).map(DimVariant::InsertAt));
        v
    }

    fn guides_at_input(self) -> bool {
        !matches!(self, DimVariant::HighestOnly)
    }

    /// Encoder stage (0-based) receiving output 2, if any.
    fn injection_stage(self) -> Option<usize> {
        match self.canonical() {
            DimVariant::InputOnly => None,
            DimVariant::InsertAt(n) => Some(n as usize - 1),
            _ => Some(4),
        }
    }
}

impl fmt::Display for DimVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimVariant::Full => write!(f, "full"),
            DimVariant::InputOnly => write!(f, "input_only"),
            DimVariant::HighestOnly => write!(f, "highest_only"),
            DimVariant::V2 => write!(f, "v2"),
            DimVariant::InsertAt(n) => write!(f, "insert_at({n})"),
        }
    }
}

impl FromStr for DimVariant {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NetError::Config(format!("unknown dim variant {s:?}"));
        Ok(match s {
            "full" => DimVariant::Full,
            "input_only" => DimVariant::InputOnly,
            "highest_only" => DimVariant::HighestOnly,
            "v2" => DimVariant::V2,
            _ => {
                let n = s
                    .strip_prefix("insert_at(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|n| n.parse::<u8>().ok())
                    .ok_or_else(bad)?;
                if !(1..=5).contains(&n) {
                    return Err(bad());
                }
                DimVariant::InsertAt(n)
            }
        })
    }
}

impl TryFrom<String> for DimVariant {
    type Error = NetError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DimVariant> for String {
    fn from(v: DimVariant) -> String {
        v.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Training crop `(D, H, W)`; D even, H and W multiples of 16.
    pub in_dims: [usize; 3],
    /// Output channels of encoder stages E1..E5.
    pub channels: [usize; 5],
    pub dim_variant: DimVariant,
    pub num_classes: usize,
    /// Seed of the weight initializer.
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { in_dims: [8, 64, 64], channels: [8, 16, 32, 64, 96], dim_variant: DimVariant::Full, num_classes: 2, init_seed: 0 }
    }
}

impl NetConfig {
    /// Full-size network for 10x512x160 inputs.
    pub fn full_size() -> Self {
        Self { in_dims: [10, 512, 160], channels: [30, 60, 120, 240, 320], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        check_spatial(self.in_dims)?;
        if self.channels.iter().any(|&c| c == 0) {
            return Err(NetError::Config("channel counts must be positive".into()));
        }
        if self.num_classes != 2 {
            return Err(NetError::Config("only two-class segmentation is supported".into()));
        }
        if let DimVariant::InsertAt(n) = self.dim_variant {
            if !(1..=5).contains(&n) {
                return Err(NetError::Config(format!("insert_at({n}) is outside 1..=5")));
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        if self.dim_variant.guides_at_input() {
            3
        } else {
            1
        }
    }
}

/// Legal network input: depth even, height and width multiples of 16.
pub fn check_spatial(s: [usize; 3]) -> Result<(), NetError> {
    if s[0] == 0 || s[0] % 2 != 0 || s[1] == 0 || s[1] % 16 != 0 || s[2] == 0 || s[2] % 16 != 0 {
        return Err(NetError::Shape(format!("input {s:?} needs D even and H, W multiples of 16")));
    }
    Ok(())
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Real> ParamStore<T> {
    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

/// Conv → instance norm → (optional additive injection) → ReLU.
#[derive(Clone, Debug)]
struct Unit {
    conv: Conv3d,
    weight: usize,
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Debug)]
struct UnitTape<T: Real> {
    input: Tensor<T>,
    norm: NormCache<T>,
    out: Tensor<T>,
}

impl Unit {
    fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Tensor<T>, inject: Option<&Tensor<T>>) -> (Tensor<T>, UnitTape<T>) {
        let z = self.conv.forward(x, p.get(self.weight), None);
        let (mut n, norm) = ops::instance_norm(&z, p.get(self.gamma), p.get(self.beta));
        if let Some(add) = inject {
            n.add_assign(add);
        }
        let out = ops::relu(&n);
        (out.clone(), UnitTape { input: x.clone(), norm, out })
    }

    /// Returns the input gradient and the gradient at the injection point.
    #[allow(clippy::type_complexity)]
    fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        g: &mut [Tensor<T>],
        tape: &UnitTape<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> (Option<Tensor<T>>, Tensor<T>) {
        let dn = ops::relu_backward(&tape.out, dy);
        let (dgamma, dbeta) = two_mut(g, self.gamma, self.beta);
        let dz = ops::instance_norm_backward(&tape.norm, p.get(self.gamma), &dn, dgamma, dbeta);
        let dx = self.conv.backward(&tape.input, p.get(self.weight), &dz, &mut g[self.weight], None, need_dx);
        (dx, dn)
    }
}

fn two_mut<T: Real>(g: &mut [Tensor<T>], a: usize, b: usize) -> (&mut Tensor<T>, &mut Tensor<T>) {
    assert!(a < b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[derive(Clone, Debug)]
struct Biased<L> {
    layer: L,
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Decoder {
    up: Biased<Deconv3d>,
    units: [Unit; 2],
}

#[derive(Clone, Debug)]
struct DimPath {
    pool: [usize; 3],
    convs: Vec<Biased<Conv3d>>,
    stage: usize,
}

#[derive(Clone, Debug)]
struct DimTape<T: Real> {
    /// Input of each conv; entries after the first are post-ReLU.
    inputs: Vec<Tensor<T>>,
    output: Tensor<T>,
}

/// Activations retained by a training forward pass.
#[derive(Clone, Debug)]
pub struct Tape<T: Real = f32> {
    encoder: Vec<[UnitTape<T>; 2]>,
    decoder: Vec<(Tensor<T>, [UnitTape<T>; 2])>,
    head_input: Tensor<T>,
    dim: Option<DimTape<T>>,
}

impl<T: Real> Tape<T> {
    /// Output of encoder stage `stage` (0-based).
    pub fn encoder_output(&self, stage: usize) -> &Tensor<T> {
        &self.encoder[stage][1].out
    }

    /// The additive DIM output 2, when the variant has one.
    pub fn dim_output(&self) -> Option<&Tensor<T>> {
        self.dim.as_ref().map(|d| &d.output)
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    cfg: NetConfig,
    params: ParamStore<T>,
    encoder: Vec<[Unit; 2]>,
    decoder: Vec<Decoder>,
    head: Biased<Conv3d>,
    dim: Option<DimPath>,
}

const K133: [usize; 3] = [1, 3, 3];
const K333: [usize; 3] = [3, 3, 3];
const S1: [usize; 3] = [1, 1, 1];
const S122: [usize; 3] = [1, 2, 2];
const S222: [usize; 3] = [2, 2, 2];

fn stage_kernel(stage: usize) -> [usize; 3] {
    if stage < 2 {
        K133
    } else {
        K333
    }
}

struct Builder {
    params: ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn he(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
        let data = (0..shape.iter().product::<usize>()).map(|_| normal.sample(&mut self.rng)).collect();
        self.params.push(name, Tensor::from_vec(&shape, data).expect("sized by shape"))
    }

    fn unit(&mut self, name: &str, cin: usize, cout: usize, kernel: [usize; 3], stride: [usize; 3]) -> Unit {
        let conv = Conv3d::new(cin, cout, kernel, stride);
        let weight = self.he(format!("{name}.weight"), conv.weight_shape(), cin * conv.taps());
        let gamma = self.params.push(format!("{name}.norm.gamma"), Tensor::filled(&[cout], 1.0));
        let beta = self.params.push(format!("{name}.norm.beta"), Tensor::zeros(&[cout]));
        Unit { conv, weight, gamma, beta }
    }

    fn conv(&mut self, name: &str, conv: Conv3d) -> Biased<Conv3d> {
        let weight = self.he(format!("{name}.weight"), conv.weight_shape(), conv.cin * conv.taps());
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[conv.cout]));
        Biased { layer: conv, weight, bias }
    }

    fn deconv(&mut self, name: &str, layer: Deconv3d) -> Biased<Deconv3d> {
        let weight = self.he(format!("{name}.weight"), layer.weight_shape(), layer.cin);
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[layer.cout]));
        Biased { layer, weight, bias }
    }
}

impl<T: Real> Model<T> {
    /// Builds the network with He-normal weights drawn in `f32` from `init_seed`.
    pub fn new(cfg: NetConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let mut cfg = cfg;
        cfg.dim_variant = cfg.dim_variant.canonical();
        let c = cfg.channels;
        let mut b = Builder { params: ParamStore::default(), rng: ChaCha8Rng::seed_from_u64(cfg.init_seed) };

        let strides = [S1, S122, S122, S122, S222];
        let mut encoder = Vec::new();
        let mut cin = cfg.input_channels();
        for stage in 0..5 {
            let k = stage_kernel(stage);
            let first = b.unit(&format!("e{}.conv1", stage + 1), cin, c[stage], k, strides[stage]);
            let second = b.unit(&format!("e{}.conv2", stage + 1), c[stage], c[stage], k, S1);
            encoder.push([first, second]);
            cin = c[stage];
        }

        let mut decoder = Vec::new();
        for stage in (0..4).rev() {
            let name = format!("d{}", stage + 1);
            let up_stride = if stage == 3 { S222 } else { S122 };
            let up = b.deconv(&format!("{name}.up"), Deconv3d::new(c[stage + 1], c[stage], up_stride));
            let k = stage_kernel(stage);
            let u1 = b.unit(&format!("{name}.conv1"), 2 * c[stage], c[stage], k, S1);
            let u2 = b.unit(&format!("{name}.conv2"), c[stage], c[stage], k, S1);
            decoder.push(Decoder { up, units: [u1, u2] });
        }
        let head = b.conv("head", Conv3d::new(c[0], cfg.num_classes, [1, 1, 1], S1));

        let dim = cfg.dim_variant.injection_stage().map(|stage| match cfg.dim_variant {
            DimVariant::V2 => DimPath {
                pool: [1, 4, 4],
                convs: vec![b.conv("dim.conv1", Conv3d::new(2, c[3], K333, S122)), b.conv("dim.conv2", Conv3d::new(c[3], c[4], K333, S222))],
                stage,
            },
            DimVariant::InsertAt(_) => {
                let f = 1 << stage;
                DimPath { pool: [1, f, f], convs: vec![b.conv("dim.conv1", Conv3d::new(2, c[stage], stage_kernel(stage), S1))], stage }
            }
            _ => DimPath { pool: [1, 8, 8], convs: vec![b.conv("dim.conv1", Conv3d::new(2, c[4], K333, S222))], stage },
        });
        Ok(Self { cfg, params: b.params.cast(), encoder, decoder, head, dim })
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
            dim: self.dim.clone(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// `(name, shape)` of every parameter, in order.
    pub fn signature(&self) -> Vec<(String, Vec<usize>)> {
        self.params.names.iter().cloned().zip(self.params.tensors.iter().map(|t| t.shape().to_vec())).collect()
    }

    /// Replaces parameter values; names and shapes must match exactly.
    pub fn load_params(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<(), NetError> {
        if named.len() != self.params.len() {
            return Err(NetError::Shape(format!("expected {} parameters, got {}", self.params.len(), named.len())));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.params.names[i] || t.shape() != self.params.tensors[i].shape() {
                return Err(NetError::Shape(format!("parameter {i}: expected {} {:?}, got {name} {:?}", self.params.names[i], self.params.tensors[i].shape(), t.shape())));
            }
            self.params.tensors[i] = t;
        }
        Ok(())
    }

    fn check_inputs(&self, image: &Tensor<T>, guides: &Tensor<T>) -> Result<(), NetError> {
        let [n, c, d, h, w] = image.dims5();
        let [gn, gc, gd, gh, gw] = guides.dims5();
        if c != 1 || gc != 2 || (n, d, h, w) != (gn, gd, gh, gw) {
            return Err(NetError::Shape(format!("image {:?} and guides {:?} do not pair up", image.shape(), guides.shape())));
        }
        check_spatial([d, h, w])
    }

    /// DIM output 2 computed from the guide pair.
    fn dim_forward(&self, path: &DimPath, guides: &Tensor<T>) -> DimTape<T> {
        let p = &self.params;
        let (pooled, _) = ops::max_pool(guides, path.pool);
        let mut inputs = vec![pooled];
        let mut out = path.convs[0].layer.forward(&inputs[0], p.get(path.convs[0].weight), Some(p.get(path.convs[0].bias)));
        for conv in &path.convs[1..] {
            inputs.push(ops::relu(&out));
            out = conv.layer.forward(inputs.last().expect("just pushed"), p.get(conv.weight), Some(p.get(conv.bias)));
        }
        DimTape { inputs, output: out }
    }

    /// Logits `[n, 2, D, H, W]` plus the activations needed for [`Model::backward`].
    pub fn forward_train(&self, image: &Tensor<T>, guides: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>), NetError> {
        self.check_inputs(image, guides)?;
        let p = &self.params;
        let dim = self.dim.as_ref().map(|path| self.dim_forward(path, guides));
        let mut x = if self.cfg.dim_variant.guides_at_input() { Tensor::concat_channels(image, guides) } else { image.clone() };

        let mut encoder = Vec::with_capacity(5);
        for (stage, units) in self.encoder.iter().enumerate() {
            let inject = dim.as_ref().filter(|_| self.dim.as_ref().is_some_and(|d| d.stage == stage)).map(|d| &d.output);
            let (y1, t1) = units[0].forward(p, &x, inject);
            let (y2, t2) = units[1].forward(p, &y1, None);
            encoder.push([t1, t2]);
            x = y2;
        }
        let mut decoder = Vec::with_capacity(4);
        for (i, dec) in self.decoder.iter().enumerate() {
            let skip = &encoder[3 - i][1].out;
            let up = dec.up.layer.forward(&x, p.get(dec.up.weight), p.get(dec.up.bias));
            let cat = Tensor::concat_channels(skip, &up);
            let (y1, t1) = dec.units[0].forward(p, &cat, None);
            let (y2, t2) = dec.units[1].forward(p, &y1, None);
            decoder.push((x, [t1, t2]));
            x = y2;
        }
        let logits = self.head.layer.forward(&x, p.get(self.head.weight), Some(p.get(self.head.bias)));
        Ok((logits, Tape { encoder, decoder, head_input: x, dim }))
    }

    pub fn forward(&self, image: &Tensor<T>, guides: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        Ok(self.forward_train(image, guides)?.0)
    }

    /// Class probabilities.
    pub fn predict_proba(&self, image: &Tensor<T>, guides: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        Ok(ops::softmax2(&self.forward(image, guides)?))
    }

    /// Accumulates parameter gradients of a loss whose logit gradient is `dlogits`.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &Tensor<T>, grads: &mut [Tensor<T>]) {
        assert_eq!(grads.len(), self.params.len());
        let p = &self.params;
        let (gw, gb) = two_mut(grads, self.head.weight, self.head.bias);
        let mut dx = self.head.layer.backward(&tape.head_input, p.get(self.head.weight), dlogits, gw, Some(gb), true).expect("requested");

        // Decoders run D4..D1 forward, so walk them back from D1.
        let mut skip_grads: [Option<Tensor<T>>; 4] = Default::default();
        for (i, dec) in self.decoder.iter().enumerate().rev() {
            let stage = 3 - i;
            let (dec_in, tapes) = &tape.decoder[i];
            let d1 = dec.units[1].backward(p, grads, &tapes[1], &dx, true).0.expect("requested");
            let dcat = dec.units[0].backward(p, grads, &tapes[0], &d1, true).0.expect("requested");
            let (dskip, dup) = dcat.split_channels(self.cfg.channels[stage]);
            let (gw, gb) = two_mut(grads, dec.up.weight, dec.up.bias);
            dx = dec.up.layer.backward(dec_in, p.get(dec.up.weight), &dup, gw, gb);
            skip_grads[stage] = Some(dskip);
        }

        for stage in (0..5).rev() {
            if let Some(skip) = skip_grads.get_mut(stage).and_then(Option::take) {
                dx.add_assign(&skip);
            }
            let units = &self.encoder[stage];
            let tapes = &tape.encoder[stage];
            let d1 = units[1].backward(p, grads, &tapes[1], &dx, true).0.expect("requested");
            let (d0, dinject) = units[0].backward(p, grads, &tapes[0], &d1, stage > 0);
            if let (Some(path), Some(dim_tape)) = (&self.dim, &tape.dim) {
                if path.stage == stage {
                    self.dim_backward(path, dim_tape, &dinject, grads);
                }
            }
            if let Some(d0) = d0 {
                dx = d0;
            }
        }
    }

    fn dim_backward(&self, path: &DimPath, tape: &DimTape<T>, dout: &Tensor<T>, grads: &mut [Tensor<T>]) {
        let p = &self.params;
        let mut g = dout.clone();
        for (k, conv) in path.convs.iter().enumerate().rev() {
            let (gw, gb) = two_mut(grads, conv.weight, conv.bias);
            let dx = conv.layer.backward(&tape.inputs[k], p.get(conv.weight), &g, gw, Some(gb), k > 0);
            if let Some(dx) = dx {
                g = ops::relu_backward(&tape.inputs[k], &dx);
            }
        }
    }
}
