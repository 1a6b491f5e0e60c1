//! The classifier `G` and the pair critic `D`.
//!
//! Both networks share the same trunk: two 3×3 convolutions with stride 3
//! ("same" padding, so 28 → 10 → 4), a 2×2 max pool (4 → 2), a 128-unit
//! dense layer and an output layer. `G` normalises with batch norm and ends
//! in a softmax over the ten classes; `D` uses layer norm (or nothing, under
//! spectral normalisation), sees the one-hot label at every layer and ends in
//! a single linear unit.
//!
//! Label conditioning: before each convolution the label is broadcast to ten
//! constant channels and stacked onto the feature map; before each dense
//! layer it is appended to the feature vector. Convolving constant channels
//! only needs, per output position, the sum of the label taps that land
//! inside the (zero-padded) input, so [`label_conv`] computes that
//! contribution as `y · Q` instead of materialising the channels.

use std::rc::Rc;

use advloss_autodiff::{ConvGeom, Graph, PowerIteration, SpectralEstimate, Tensor, TensorError, Var, WeightLayout};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CLASSES, SIDE};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 3;
pub const CONV1: usize = 32;
pub const CONV2: usize = 64;
pub const HIDDEN: usize = 128;

pub const BN_DECAY: f64 = 0.99;
pub const NORM_EPS: f64 = 1e-5;

type R<T> = Result<T, TensorError>;

/// Uniform fan-in initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(&[fan_in, fan_out], data).expect("weight shape")
}

fn conv_geom(batch: usize, side: usize, channels: usize) -> ConvGeom {
    ConvGeom::same(batch, side, side, channels, KERNEL, STRIDE)
}

/// Spatial sizes after each stage: 28 → 10 → 4 → 2.
pub fn spatial_plan() -> [usize; 4] {
    let s1 = conv_geom(1, SIDE, 1).out_h;
    let s2 = conv_geom(1, s1, CONV1).out_h;
    [SIDE, s1, s2, s2 / 2]
}

fn flat_len() -> usize {
    let s = spatial_plan()[3];
    s * s * CONV2
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub names: Vec<&'static str>,
    pub values: Vec<Tensor>,
}

impl Params {
    fn push(&mut self, name: &'static str, t: Tensor) {
        self.names.push(name);
        self.values.push(t);
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds every tensor to `g`, as trainable leaves or as constants.
    pub fn attach(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    pub fn records(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.names.iter().zip(&self.values).map(|(n, t)| (format!("{prefix}.{n}"), t.clone())).collect()
    }
}

/// Stacks a `[B, 10]` label onto an NHWC map as ten constant channels.
pub fn with_label_maps(g: &mut Graph, x: Var, y: Var) -> R<Var> {
    let s = g.shape(x).to_vec();
    let [b, h, w, c] = s[..] else {
        return Err(TensorError::Shape { op: "label_maps", detail: format!("expected NHWC, got {s:?}") });
    };
    let flat = g.reshape(x, &[b * h * w, c])?;
    let maps = g.repeat_rows(y, h * w)?;
    let cat = g.concat_cols(&[flat, maps])?;
    g.reshape(cat, &[b, h, w, c + CLASSES])
}

/// `[OH*OW, KH*KW]` indicator of which kernel taps fall inside the input.
fn tap_mask(geom: &ConvGeom) -> Tensor {
    let taps = geom.kernel_h * geom.kernel_w;
    let mut m = vec![0.0; geom.out_h * geom.out_w * taps];
    for oy in 0..geom.out_h {
        for ox in 0..geom.out_w {
            for ky in 0..geom.kernel_h {
                for kx in 0..geom.kernel_w {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad_top as isize;
                    let ix = (ox * geom.stride + kx) as isize - geom.pad_left as isize;
                    if (0..geom.height as isize).contains(&iy) && (0..geom.width as isize).contains(&ix) {
                        m[(oy * geom.out_w + ox) * taps + ky * geom.kernel_w + kx] = 1.0;
                    }
                }
            }
        }
    }
    Tensor::new(&[geom.out_h * geom.out_w, taps], m).expect("mask shape")
}

/// Convolution of `x` (`[B, H, W, C]`) stacked with label maps of `y`
/// (`[B, 10]`), for a kernel over `C + 10` input channels. Equal to
/// `conv2d(with_label_maps(x, y), ...)`.
pub fn label_conv(g: &mut Graph, x: Var, y: Var, kernel: Var, bias: Var, geom: ConvGeom) -> R<Var> {
    let c = geom.channels;
    let cin = c + CLASSES;
    let taps = geom.kernel_h * geom.kernel_w;
    let cout = g.shape(kernel)[1];
    let positions = geom.out_h * geom.out_w;
    if g.shape(kernel) != [taps * cin, cout] {
        return Err(TensorError::Shape { op: "label_conv", detail: format!("kernel {:?} for {cin} input channels", g.shape(kernel)) });
    }

    let mut img_rows = Vec::with_capacity(taps * c * cout);
    for t in 0..taps {
        for ch in 0..c {
            img_rows.extend((0..cout).map(|j| (t * cin + ch) * cout + j));
        }
    }
    let k_img = g.gather(kernel, Rc::new(img_rows), &[taps * c, cout])?;
    let cols = g.im2col(x, geom)?;
    let img = g.matmul(cols, k_img)?;

    // K[t, l*cout + j] = kernel[t*cin + c + l, j]
    let mut lab_rows = Vec::with_capacity(taps * CLASSES * cout);
    for t in 0..taps {
        for l in 0..CLASSES {
            lab_rows.extend((0..cout).map(|j| (t * cin + c + l) * cout + j));
        }
    }
    let k_lab = g.gather(kernel, Rc::new(lab_rows), &[taps, CLASSES * cout])?;
    let mask = g.constant(tap_mask(&geom));
    let per_pos = g.matmul(mask, k_lab)?;
    // Q[l, o*cout + j] = per_pos[o, l*cout + j]
    let mut q_index = Vec::with_capacity(CLASSES * positions * cout);
    for l in 0..CLASSES {
        for o in 0..positions {
            q_index.extend((0..cout).map(|j| o * CLASSES * cout + l * cout + j));
        }
    }
    let q = g.gather(per_pos, Rc::new(q_index), &[CLASSES, positions * cout])?;
    let lab = g.matmul(y, q)?;
    let lab = g.reshape(lab, &[geom.batch * positions, cout])?;

    let out = g.add(img, lab)?;
    let out = g.add_row_vector(out, bias)?;
    g.reshape(out, &[geom.batch, geom.out_h, geom.out_w, cout])
}

/// Per-channel statistics from the last training-mode forward pass.
pub type BatchStats = Vec<(Vec<f64>, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub params: Params,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

/// Output of a generator forward pass.
pub struct GenOutput {
    pub probs: Var,
    /// Batch statistics of each batch-norm layer (training mode only).
    pub stats: Option<BatchStats>,
}

impl Generator {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut p = Params { names: Vec::new(), values: Vec::new() };
        let widths = [CONV1, CONV2, HIDDEN];
        p.push("conv1.kernel", he_uniform(rng, KERNEL * KERNEL, CONV1));
        p.push("conv1.bias", Tensor::zeros(&[1, CONV1]));
        p.push("bn1.gamma", Tensor::ones(&[1, CONV1]));
        p.push("bn1.beta", Tensor::zeros(&[1, CONV1]));
        p.push("conv2.kernel", he_uniform(rng, KERNEL * KERNEL * CONV1, CONV2));
        p.push("conv2.bias", Tensor::zeros(&[1, CONV2]));
        p.push("bn2.gamma", Tensor::ones(&[1, CONV2]));
        p.push("bn2.beta", Tensor::zeros(&[1, CONV2]));
        p.push("dense1.weight", he_uniform(rng, flat_len(), HIDDEN));
        p.push("dense1.bias", Tensor::zeros(&[1, HIDDEN]));
        p.push("bn3.gamma", Tensor::ones(&[1, HIDDEN]));
        p.push("bn3.beta", Tensor::zeros(&[1, HIDDEN]));
        p.push("dense2.weight", he_uniform(rng, HIDDEN, CLASSES));
        p.push("dense2.bias", Tensor::zeros(&[1, CLASSES]));
        Self {
            params: p,
            running_mean: widths.iter().map(|&w| vec![0.0; w]).collect(),
            running_var: widths.iter().map(|&w| vec![1.0; w]).collect(),
        }
    }

    fn norm(&self, g: &mut Graph, p: &[Var], layer: usize, x: Var, stats: &mut Option<BatchStats>) -> R<Var> {
        let (gamma, beta) = (p[4 * layer + 2], p[4 * layer + 3]);
        match stats {
            Some(s) => {
                let (y, m, v) = g.batch_norm_train(x, gamma, beta, NORM_EPS)?;
                s.push((m, v));
                Ok(y)
            }
            None => g.batch_norm_eval(x, gamma, beta, &self.running_mean[layer], &self.running_var[layer], NORM_EPS),
        }
    }

    /// Class probabilities `[B, 10]` for NHWC images `x`. `p` holds the
    /// attached parameters. In training mode batch norm uses batch
    /// statistics (returned for [`Generator::update_running`]); otherwise the
    /// running estimates.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, train: bool) -> R<GenOutput> {
        let b = g.shape(x)[0];
        let [side, s1, s2, s3] = spatial_plan();
        let mut stats = train.then(Vec::new);

        let h = g.conv2d(x, p[0], p[1], conv_geom(b, side, 1))?;
        let h = g.reshape(h, &[b * s1 * s1, CONV1])?;
        let h = self.norm(g, p, 0, h, &mut stats)?;
        let h = g.relu(h)?;
        let h = g.reshape(h, &[b, s1, s1, CONV1])?;

        let h = g.conv2d(h, p[4], p[5], conv_geom(b, s1, CONV1))?;
        let h = g.reshape(h, &[b * s2 * s2, CONV2])?;
        let h = self.norm(g, p, 1, h, &mut stats)?;
        let h = g.relu(h)?;
        let h = g.reshape(h, &[b, s2, s2, CONV2])?;
        let h = g.maxpool2x2(h)?;
        let h = g.reshape(h, &[b, s3 * s3 * CONV2])?;

        let h = g.linear(h, p[8], p[9])?;
        let h = self.norm(g, p, 2, h, &mut stats)?;
        let h = g.relu(h)?;
        let logits = g.linear(h, p[12], p[13])?;
        let probs = g.softmax_rows(logits)?;
        Ok(GenOutput { probs, stats })
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        for (layer, (m, v)) in stats.iter().enumerate() {
            for (r, &x) in self.running_mean[layer].iter_mut().zip(m) {
                *r = BN_DECAY * *r + (1.0 - BN_DECAY) * x;
            }
            for (r, &x) in self.running_var[layer].iter_mut().zip(v) {
                *r = BN_DECAY * *r + (1.0 - BN_DECAY) * x;
            }
        }
    }

    /// Evaluation-mode class probabilities for a batch of images.
    pub fn predict(&self, images: Tensor) -> R<Tensor> {
        let mut g = Graph::new();
        let p = self.params.attach(&mut g, false);
        let x = g.constant(images);
        let out = self.forward(&mut g, &p, x, false)?;
        Ok(g.value(out.probs).clone())
    }
}

/// Indices of the weight matrices inside [`Discriminator::params`].
pub const D_WEIGHTS: [usize; 4] = [0, 2, 4, 6];

/// Power iterations run on the freshly initialised weights. Random matrices
/// have close top singular values, so one iteration per step would take
/// hundreds of steps to converge from a random start.
pub const SPECTRAL_WARMUP: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub params: Params,
    /// Power-iteration state per weight matrix when spectrally normalised.
    pub spectral: Option<Vec<PowerIteration>>,
}

impl Discriminator {
    pub fn new(rng: &mut ChaCha8Rng, spectral_norm: bool) -> Self {
        let mut p = Params { names: Vec::new(), values: Vec::new() };
        let flat = flat_len();
        p.push("conv1.kernel", he_uniform(rng, KERNEL * KERNEL * (1 + CLASSES), CONV1));
        p.push("conv1.bias", Tensor::zeros(&[1, CONV1]));
        p.push("conv2.kernel", he_uniform(rng, KERNEL * KERNEL * (CONV1 + CLASSES), CONV2));
        p.push("conv2.bias", Tensor::zeros(&[1, CONV2]));
        p.push("dense1.weight", he_uniform(rng, flat + CLASSES, HIDDEN));
        p.push("dense1.bias", Tensor::zeros(&[1, HIDDEN]));
        p.push("dense2.weight", he_uniform(rng, HIDDEN + CLASSES, 1));
        p.push("dense2.bias", Tensor::zeros(&[1, 1]));
        let spectral = if spectral_norm {
            let states = D_WEIGHTS
                .iter()
                .map(|&i| {
                    let out = p.values[i].shape()[1];
                    PowerIteration::new((0..out).map(|_| rng.random_range(-1.0..1.0)).collect())
                })
                .collect();
            Some(states)
        } else {
            for (name_g, name_b, w) in [("ln1.gamma", "ln1.beta", CONV1), ("ln2.gamma", "ln2.beta", CONV2), ("ln3.gamma", "ln3.beta", HIDDEN)] {
                p.push(name_g, Tensor::ones(&[1, w]));
                p.push(name_b, Tensor::zeros(&[1, w]));
            }
            None
        };
        let mut d = Self { params: p, spectral };
        d.refresh_spectral(SPECTRAL_WARMUP).expect("weights match their power-iteration states");
        d
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    /// Runs `iters` power iterations on every weight, updating the persistent
    /// state, and returns the estimates (`None` for an all-zero weight, which
    /// is then used unscaled). `None` overall for a layer-normed critic.
    pub fn refresh_spectral(&mut self, iters: usize) -> R<Option<Vec<Option<SpectralEstimate>>>> {
        let Some(states) = self.spectral.as_mut() else { return Ok(None) };
        let mut out = Vec::with_capacity(states.len());
        for (state, &i) in states.iter_mut().zip(&D_WEIGHTS) {
            out.push(state.refresh(&self.params.values[i], WeightLayout::RestByOut, iters)?);
        }
        Ok(Some(out))
    }

    /// Scores `[B, 1]` for NHWC images `x` paired with labels `y` (`[B, 10]`).
    /// `spectral` must hold one estimate per weight matrix in spectral mode.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, y: Var, spectral: Option<&[Option<SpectralEstimate>]>) -> R<Var> {
        let b = g.shape(x)[0];
        let [side, s1, _, s3] = spatial_plan();
        let mut w = [p[0], p[2], p[4], p[6]];
        if let Some(est) = spectral {
            for (wi, e) in w.iter_mut().zip(est) {
                if let Some(e) = e {
                    *wi = g.spectral_normalized(*wi, WeightLayout::RestByOut, e)?;
                }
            }
        }
        let norm = |g: &mut Graph, h: Var, layer: usize| -> R<Var> {
            if spectral.is_some() {
                Ok(h)
            } else {
                g.layer_norm(h, p[8 + 2 * layer], p[9 + 2 * layer], NORM_EPS)
            }
        };

        let h = label_conv(g, x, y, w[0], p[1], conv_geom(b, side, 1))?;
        let h = norm(g, h, 0)?;
        let h = g.relu(h)?;

        let h = label_conv(g, h, y, w[1], p[3], conv_geom(b, s1, CONV1))?;
        let h = norm(g, h, 1)?;
        let h = g.relu(h)?;
        let h = g.maxpool2x2(h)?;
        let h = g.reshape(h, &[b, s3 * s3 * CONV2])?;

        let h = g.concat_cols(&[h, y])?;
        let h = g.linear(h, w[2], p[5])?;
        let h = norm(g, h, 2)?;
        let h = g.relu(h)?;
        let h = g.concat_cols(&[h, y])?;
        g.linear(h, w[3], p[7])
    }
}
