//! Trainable components: semantic encoder, auxiliary projection, JSCC encoder and
//! decoder, and the task decoder, all stored in one prefixed [`ParamStore`].

use rand::Rng as _;
use rand_distr::StandardNormal;
use slscom_autograd::{ParamId, ParamKind, ParamStore, Tape, Tensor, Var};

use crate::config::{DerivedDims, EncoderPreset, ExperimentConfig, JsccSpec};
use crate::error::{Error, Result};
use crate::seed::Rng;

pub const BN_EPS: f64 = 1e-5;

/// Name prefixes of the five components inside a model's parameter store.
pub mod prefix {
    pub const ENCODER: &str = "se.";
    pub const PROJECTION: &str = "ap.";
    pub const JSCC_ENCODER: &str = "je.";
    pub const JSCC_DECODER: &str = "jd.";
    pub const TASK: &str = "sd.";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Encoder,
    Projection,
    JsccEncoder,
    JsccDecoder,
    Task,
}

impl Component {
    pub fn prefix(self) -> &'static str {
        match self {
            Component::Encoder => prefix::ENCODER,
            Component::Projection => prefix::PROJECTION,
            Component::JsccEncoder => prefix::JSCC_ENCODER,
            Component::JsccDecoder => prefix::JSCC_DECODER,
            Component::Task => prefix::TASK,
        }
    }
}

/// Forward-pass context for one component: `train` selects batch statistics in
/// batch norm (and records running-stat updates), `grad` makes weights differentiable.
#[derive(Clone, Copy)]
pub struct Fwd<'a> {
    pub tape: &'a Tape,
    pub store: &'a ParamStore,
    pub train: bool,
    pub grad: bool,
    pub momentum: f64,
}

impl<'a> Fwd<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore, train: bool, grad: bool) -> Self {
        Self {
            tape,
            store,
            train,
            grad,
            momentum: 0.1,
        }
    }

    /// Evaluation mode without gradients.
    pub fn eval(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Self::new(tape, store, false, false)
    }

    fn p(&self, id: ParamId) -> Var<'a> {
        self.tape.param(self.store, id, self.grad)
    }
}

fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

// ---- layers ----

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), ParamKind::Weight, uniform(&[outputs, inputs], bound, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::Weight, uniform(&[outputs], bound, rng)));
        Self { weight, bias }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        x.linear(f.p(self.weight), self.bias.map(|b| f.p(b)))
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            normal(&[cout, cin, kernel, kernel], (2.0 / fan_in).sqrt(), rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        x.conv2d(f.p(self.weight), self.bias.map(|b| f.p(b)), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / ((cout * kernel * kernel) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            uniform(&[cin, cout, kernel, kernel], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), ParamKind::Weight, uniform(&[cout], bound, rng));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        x.conv_transpose2d(f.p(self.weight), Some(f.p(self.bias)), self.stride, self.pad, 0)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.weight"), ParamKind::Weight, Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros(&[channels])),
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[channels])),
            running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full(&[channels], 1.0)),
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        let (y, stats) = x.batch_norm(
            f.p(self.gamma),
            f.p(self.beta),
            f.store.get(self.running_mean),
            f.store.get(self.running_var),
            f.train,
            f.momentum,
            BN_EPS,
        );
        if let Some(s) = stats {
            f.tape.record_update(self.running_mean, s.mean);
            f.tape.record_update(self.running_var, s.var);
        }
        y
    }
}

/// Convolution (no bias) followed by batch norm and optionally ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        relu: bool,
        rng: &mut Rng,
    ) -> Self {
        Self {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, kernel, stride, kernel / 2, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
            relu,
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        let y = self.bn.forward(f, self.conv.forward(f, x));
        if self.relu {
            y.relu()
        } else {
            y
        }
    }
}

/// Residual block: two or three ConvBn stages plus an optional projection shortcut.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub body: Vec<ConvBn>,
    pub shortcut: Option<ConvBn>,
}

impl ResBlock {
    pub fn basic(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Self {
        let body = vec![
            ConvBn::new(store, &format!("{name}.0"), cin, cout, 3, stride, true, rng),
            ConvBn::new(store, &format!("{name}.1"), cout, cout, 3, 1, false, rng),
        ];
        let shortcut =
            (stride != 1 || cin != cout).then(|| ConvBn::new(store, &format!("{name}.down"), cin, cout, 1, stride, false, rng));
        Self { body, shortcut }
    }

    pub fn bottleneck(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        width: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let cout = 4 * width;
        let body = vec![
            ConvBn::new(store, &format!("{name}.0"), cin, width, 1, 1, true, rng),
            ConvBn::new(store, &format!("{name}.1"), width, width, 3, stride, true, rng),
            ConvBn::new(store, &format!("{name}.2"), width, cout, 1, 1, false, rng),
        ];
        let shortcut =
            (stride != 1 || cin != cout).then(|| ConvBn::new(store, &format!("{name}.down"), cin, cout, 1, stride, false, rng));
        Self { body, shortcut }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        let y = self.body.iter().fold(x, |h, l| l.forward(f, h));
        let skip = match &self.shortcut {
            Some(s) => s.forward(f, x),
            None => x,
        };
        y.add(skip).relu()
    }
}

// ---- semantic encoder ----

#[derive(Debug, Clone)]
pub enum Encoder {
    /// Four 3x3 ConvBn stages (3->16->32->64->128, the last three strided) and global pooling.
    Desk(Vec<ConvBn>),
    /// ResNet trunk without the classification layer: 7x7 stem, max pool, four stages.
    ResNet { stem: ConvBn, blocks: Vec<ResBlock> },
}

impl Encoder {
    pub fn new(store: &mut ParamStore, preset: EncoderPreset, in_channels: usize, rng: &mut Rng) -> Self {
        let p = prefix::ENCODER;
        match preset {
            EncoderPreset::DeskCnn => {
                let widths = [in_channels, 16, 32, 64, 128];
                let layers = (0..4)
                    .map(|i| {
                        let stride = if i == 0 { 1 } else { 2 };
                        ConvBn::new(store, &format!("{p}layer{i}"), widths[i], widths[i + 1], 3, stride, true, rng)
                    })
                    .collect();
                Encoder::Desk(layers)
            }
            EncoderPreset::PaperR34 | EncoderPreset::PaperR50 => {
                let stem = ConvBn::new(store, &format!("{p}stem"), in_channels, 64, 7, 2, true, rng);
                let mut blocks = vec![];
                let depths = [3, 4, 6, 3];
                let widths = [64, 128, 256, 512];
                let mut cin = 64;
                for (stage, (&depth, &width)) in depths.iter().zip(&widths).enumerate() {
                    for b in 0..depth {
                        let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                        let name = format!("{p}stage{stage}.{b}");
                        if preset == EncoderPreset::PaperR34 {
                            blocks.push(ResBlock::basic(store, &name, cin, width, stride, rng));
                            cin = width;
                        } else {
                            blocks.push(ResBlock::bottleneck(store, &name, cin, width, stride, rng));
                            cin = 4 * width;
                        }
                    }
                }
                Encoder::ResNet { stem, blocks }
            }
        }
    }

    /// `[n, c, h, w]` images to `[n, L_s]` semantic vectors.
    pub fn forward<'a>(&self, f: &Fwd<'a>, images: Var<'a>) -> Var<'a> {
        match self {
            Encoder::Desk(layers) => layers.iter().fold(images, |h, l| l.forward(f, h)).global_avg_pool(),
            Encoder::ResNet { stem, blocks } => {
                let h = stem.forward(f, images).max_pool2d(3, 2, 1);
                blocks.iter().fold(h, |h, b| b.forward(f, h)).global_avg_pool()
            }
        }
    }
}

// ---- auxiliary projection ----

/// Two fully connected layers with ReLU between them and unit-norm rows at the output.
#[derive(Debug, Clone)]
pub struct Projection {
    pub hidden: Linear,
    pub out: Linear,
}

impl Projection {
    pub fn new(store: &mut ParamStore, input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        let p = prefix::PROJECTION;
        Self {
            hidden: Linear::new(store, &format!("{p}fc0"), input, hidden, true, rng),
            out: Linear::new(store, &format!("{p}fc1"), hidden, output, true, rng),
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        let h = self.hidden.forward(f, x).relu();
        self.out.forward(f, h).row_normalize(1.0)
    }
}

// ---- JSCC ----

/// Maps `[n, L_s]` to `[n, 2 L_c]` interleaved (re, im) symbols with `|z|^2 = L_c` per row.
#[derive(Debug, Clone)]
pub struct JsccEncoder {
    pub grid: (usize, usize, usize),
    /// Per-feature normalization of the semantic vector, so the common component
    /// shared by all images does not take up transmit power.
    pub input_norm: BatchNorm,
    pub head: ConvBn,
    pub res: ResBlock,
    pub tail: ConvBn,
    pub out: Linear,
    pub channel_len: usize,
}

impl JsccEncoder {
    pub fn new(store: &mut ParamStore, spec: &JsccSpec, channel_len: usize, rng: &mut Rng) -> Self {
        let p = prefix::JSCC_ENCODER;
        let (c0, h0, w0) = spec.grid;
        let (h1, w1) = (h0 / spec.sampling, w0 / spec.sampling);
        Self {
            grid: spec.grid,
            input_norm: BatchNorm::new(store, &format!("{p}input_norm"), c0 * h0 * w0),
            head: ConvBn::new(store, &format!("{p}head"), c0, spec.filters, 3, spec.sampling, true, rng),
            res: ResBlock::basic(store, &format!("{p}res"), spec.filters, spec.filters, 1, rng),
            tail: ConvBn::new(store, &format!("{p}tail"), spec.filters, spec.channel_filters, 3, 1, true, rng),
            out: Linear::new(store, &format!("{p}out"), spec.channel_filters * h1 * w1, 2 * channel_len, true, rng),
            channel_len,
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        let n = x.shape()[0];
        let (c0, h0, w0) = self.grid;
        let h = self.input_norm.forward(f, x.reshape(&[n, c0 * h0 * w0, 1, 1])).reshape(&[n, c0, h0, w0]);
        let h = self.tail.forward(f, self.res.forward(f, self.head.forward(f, h)));
        let flat = h.reshape(&[n, h.value().len() / n]);
        self.out.forward(f, flat).row_normalize((self.channel_len as f64).sqrt())
    }
}

/// Maps received feature planes `[n, 5, K, F N_s]` back to `[n, L_s]`.
#[derive(Debug, Clone)]
pub struct JsccDecoder {
    pub grid: (usize, usize, usize),
    pub sampling: usize,
    pub channel_filters: usize,
    pub head: ConvBn,
    pub squeeze: Conv,
    pub expand: Linear,
    pub body: ConvBn,
    pub res: ResBlock,
    pub up: ConvTranspose,
}

/// Feature planes fed to the JSCC decoder: Re/Im of the received data, Re/Im of
/// the LS channel estimate and the noise variance.
pub const DECODER_PLANES: usize = 5;

impl JsccDecoder {
    pub fn new(store: &mut ParamStore, spec: &JsccSpec, input_hw: (usize, usize), rng: &mut Rng) -> Self {
        let p = prefix::JSCC_DECODER;
        let (c0, h0, w0) = spec.grid;
        let (h1, w1) = (h0 / spec.sampling, w0 / spec.sampling);
        let (kernel, pad) = if spec.sampling == 1 { (3, 1) } else { (2 * spec.sampling, spec.sampling / 2) };
        Self {
            grid: spec.grid,
            sampling: spec.sampling,
            channel_filters: spec.channel_filters,
            head: ConvBn::new(store, &format!("{p}head"), DECODER_PLANES, spec.filters, 3, 1, true, rng),
            squeeze: Conv::new(store, &format!("{p}squeeze"), spec.filters, 2, 3, 1, 1, true, rng),
            expand: Linear::new(
                store,
                &format!("{p}expand"),
                2 * input_hw.0 * input_hw.1,
                spec.channel_filters * h1 * w1,
                true,
                rng,
            ),
            body: ConvBn::new(store, &format!("{p}body"), spec.channel_filters, spec.filters, 3, 1, true, rng),
            res: ResBlock::basic(store, &format!("{p}res"), spec.filters, spec.filters, 1, rng),
            up: ConvTranspose::new(store, &format!("{p}up"), spec.filters, c0, kernel, spec.sampling, pad, rng),
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, planes: Var<'a>) -> Var<'a> {
        let n = planes.shape()[0];
        let (c0, h0, w0) = self.grid;
        let (h1, w1) = (h0 / self.sampling, w0 / self.sampling);
        let h = self.squeeze.forward(f, self.head.forward(f, planes));
        let flat = h.reshape(&[n, h.value().len() / n]);
        let h = self.expand.forward(f, flat).relu().reshape(&[n, self.channel_filters, h1, w1]);
        let h = self.up.forward(f, self.res.forward(f, self.body.forward(f, h)));
        h.reshape(&[n, c0 * h0 * w0])
    }
}

// ---- task decoder ----

/// Per-feature normalization of the recovered semantic vector, one fully connected
/// layer and a softmax over classes. The normalization keeps the classifier input
/// at a fixed scale whatever scale the semantic vector settles at.
#[derive(Debug, Clone)]
pub struct TaskDecoder {
    pub norm: BatchNorm,
    pub fc: Linear,
}

impl TaskDecoder {
    pub fn new(store: &mut ParamStore, input: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            norm: BatchNorm::new(store, &format!("{}norm", prefix::TASK), input),
            fc: Linear::new(store, &format!("{}fc", prefix::TASK), input, classes, true, rng),
        }
    }

    pub fn forward<'a>(&self, f: &Fwd<'a>, x: Var<'a>) -> Var<'a> {
        let n = x.shape()[0];
        let d = x.shape()[1];
        let h = self.norm.forward(f, x.reshape(&[n, d, 1, 1])).reshape(&[n, d]);
        self.fc.forward(f, h).softmax()
    }
}

// ---- assembled model ----

#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub dims: DerivedDims,
    pub encoder: Encoder,
    pub projection: Option<Projection>,
    pub jscc_encoder: JsccEncoder,
    pub jscc_decoder: JsccDecoder,
    pub task: TaskDecoder,
}

impl Model {
    /// Build every component with fresh weights drawn from `rng`.
    pub fn new(cfg: &ExperimentConfig, rng: &mut Rng) -> Result<Self> {
        let dims = cfg.dims()?;
        if dims.semantic_len != cfg.encoder.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "encoder {} emits {} features, config needs {}",
                cfg.encoder,
                cfg.encoder.output_dim(),
                dims.semantic_len
            )));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, cfg.encoder, cfg.image_shape.0, rng);
        let projection = (!cfg.ablations.no_aux_projection)
            .then(|| Projection::new(&mut store, dims.semantic_len, cfg.proj_hidden, cfg.proj_dim, rng));
        let jscc_encoder = JsccEncoder::new(&mut store, &cfg.jscc, dims.channel_len, rng);
        let input_hw = (cfg.ofdm.subcarriers, cfg.ofdm.data_symbols * dims.frames_per_image);
        let jscc_decoder = JsccDecoder::new(&mut store, &cfg.jscc, input_hw, rng);
        let task = TaskDecoder::new(&mut store, dims.semantic_len, cfg.classes, rng);
        Ok(Self {
            store,
            dims,
            encoder,
            projection,
            jscc_encoder,
            jscc_decoder,
            task,
        })
    }

    pub fn count_params(&self, component: Component) -> usize {
        self.store.count_weights(component.prefix())
    }

    /// Encoder plus (when present) projection: the pre-training assembly.
    pub fn pretrain_params(&self) -> usize {
        self.count_params(Component::Encoder) + self.count_params(Component::Projection)
    }

    /// Encoder, JSCC pair and task decoder: the fine-tuning assembly.
    pub fn finetune_params(&self) -> usize {
        [Component::Encoder, Component::JsccEncoder, Component::JsccDecoder, Component::Task]
            .iter()
            .map(|&c| self.count_params(c))
            .sum()
    }

    pub fn checksum(&self, component: Component) -> u64 {
        self.store.checksum(component.prefix())
    }

    /// Apply queued batch-norm running statistics.
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor)>) {
        for (id, value) in updates {
            *self.store.get_mut(id) = value;
        }
    }

    /// Copy every entry under `component`'s prefix from `other` (same architecture).
    pub fn copy_component(&mut self, other: &ParamStore, component: Component) -> Result<()> {
        for id in self.store.ids_with_prefix(component.prefix()) {
            let name = self.store.entry(id).name.clone();
            let src = other
                .id(&name)
                .ok_or_else(|| Error::MissingCheckpoint(format!("checkpoint has no entry `{name}`")))?;
            self.store.set(id, other.get(src).clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    #[test]
    fn desk_encoder_count_is_closed_form() {
        let cfg = ExperimentConfig::desk();
        let m = Model::new(&cfg, &mut derive_rng(0, "init")).unwrap();
        let widths = [3usize, 16, 32, 64, 128];
        let expected: usize = (0..4).map(|i| widths[i] * widths[i + 1] * 9 + 2 * widths[i + 1]).sum();
        assert_eq!(expected, 97_680);
        assert_eq!(m.count_params(Component::Encoder), expected);
    }

    #[test]
    fn desk_shapes_and_eval_determinism() {
        let cfg = ExperimentConfig::desk();
        let m = Model::new(&cfg, &mut derive_rng(0, "init")).unwrap();
        let tape = Tape::new();
        let f = Fwd::eval(&tape, &m.store);
        let mut rng = derive_rng(1, "x");
        let imgs = tape.constant(Tensor::from_vec(&[2, 3, 32, 32], (0..6144).map(|_| rng.gen()).collect()).unwrap());
        let x = m.encoder.forward(&f, imgs);
        assert_eq!(x.shape(), vec![2, 128]);
        assert_eq!(m.encoder.forward(&f, imgs).value(), x.value());
        let z = m.jscc_encoder.forward(&f, x);
        assert_eq!(z.shape(), vec![2, 2 * m.dims.channel_len]);
        let planes = tape.constant(Tensor::zeros(&[2, 5, 64, 6]));
        assert_eq!(m.jscc_decoder.forward(&f, planes).shape(), vec![2, 128]);
        let y = m.task.forward(&f, x);
        for row in y.value().rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_zero_weights_give_normalized_bias() {
        let cfg = ExperimentConfig::desk();
        let mut m = Model::new(&cfg, &mut derive_rng(0, "init")).unwrap();
        let p = m.projection.clone().unwrap();
        for id in [p.hidden.weight, p.out.weight] {
            let shape = m.store.get(id).shape().to_vec();
            m.store.set(id, Tensor::zeros(&shape)).unwrap();
        }
        let b = m.store.get(p.out.bias.unwrap()).clone();
        let norm = b.sq_norm().sqrt();
        let tape = Tape::new();
        let f = Fwd::eval(&tape, &m.store);
        let out = p.forward(&f, tape.constant(Tensor::full(&[3, 128], 0.7)));
        for row in out.value().rows() {
            for (a, bv) in row.iter().zip(b.data()) {
                assert!((a - bv / norm).abs() < 1e-12);
            }
        }
    }

    /// Closed-form torchvision trunk sizes (no final FC layer).
    fn resnet_trunk(bottleneck: bool) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + 2 * cout;
        let mut total = conv(3, 64, 7);
        let mut cin = 64;
        for (stage, (&depth, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
            for b in 0..depth {
                let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                let cout = if bottleneck { 4 * width } else { width };
                total += if bottleneck {
                    conv(cin, width, 1) + conv(width, width, 3) + conv(width, cout, 1)
                } else {
                    conv(cin, width, 3) + conv(width, width, 3)
                };
                if stride != 1 || cin != cout {
                    total += conv(cin, cout, 1);
                }
                cin = cout;
            }
        }
        total
    }

    #[test]
    fn paper_encoders_match_reference_sizes() {
        assert_eq!(resnet_trunk(true), 23_508_032);
        assert_eq!(resnet_trunk(false), 21_284_672);
        let r50 = Model::new(&ExperimentConfig::paper_r50(), &mut derive_rng(0, "init")).unwrap();
        assert_eq!(r50.count_params(Component::Encoder), 23_508_032);
        let target = 27.95e6;
        assert!((r50.pretrain_params() as f64 - target).abs() / target < 0.15);
        let r34 = Model::new(&ExperimentConfig::paper_r34(), &mut derive_rng(0, "init")).unwrap();
        assert_eq!(r34.count_params(Component::Encoder), 21_284_672);
    }
}
