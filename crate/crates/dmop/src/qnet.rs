//! The convolutional Q-network, built by hand.
//!
//! Topology: two valid (no-padding) stride-2 convolutions with ReLU, then
//! three fully connected layers where the last is linear and emits one Q
//! value per action. No pooling anywhere. Forward, backward and the SGD
//! update are implemented directly on `f64` buffers with a fixed summation
//! order, so results are bit-reproducible across machines and thread counts.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::gridworld::Observation;

/// Binary checkpoint magic bytes.
const CHECKPOINT_MAGIC: &[u8; 8] = b"DMOPQNET";
/// Current checkpoint format version.
const CHECKPOINT_VERSION: u32 = 1;
/// Upper bound on accepted checkpoint parameter counts (guards allocation).
const MAX_CHECKPOINT_PARAMS: u64 = 64 * 1024 * 1024;

/// Samples per work chunk in batch gradient computation. Chunks are summed
/// in index order, which keeps results independent of the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum QNetError {
    #[error("observation is {got_w}x{got_h}, network expects {want_w}x{want_h}")]
    ShapeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("invalid architecture: {0}")]
    BadArch(String),
    #[error("non-finite gradient; training step aborted")]
    Divergence,
    #[error("batch of {batch} transitions given {targets} targets")]
    BatchMismatch { batch: usize, targets: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Architecture descriptor. All shapes below derive from these fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetArch {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub actions: usize,
}

impl NetArch {
    /// The full-size network for a given observation size: 8 then 16 conv
    /// kernels of 3x3, stride 2, fully connected 512 -> 256 -> 8.
    pub fn canonical(input_w: usize, input_h: usize) -> Self {
        NetArch {
            input_h,
            input_w,
            input_channels: 3,
            conv1_channels: 8,
            conv2_channels: 16,
            kernel: 3,
            stride: 2,
            fc1: 512,
            fc2: 256,
            actions: 8,
        }
    }

    /// A slimmer variant for small maps: same convolutional stack, narrower
    /// fully connected layers.
    pub fn reduced(input_w: usize, input_h: usize, fc1: usize, fc2: usize) -> Self {
        NetArch {
            fc1,
            fc2,
            ..NetArch::canonical(input_w, input_h)
        }
    }

    pub fn validate(&self) -> Result<(), QNetError> {
        let all = [
            self.input_h,
            self.input_w,
            self.input_channels,
            self.conv1_channels,
            self.conv2_channels,
            self.kernel,
            self.stride,
            self.fc1,
            self.fc2,
            self.actions,
        ];
        if all.iter().any(|&v| v == 0) {
            return Err(QNetError::BadArch("zero-sized field".to_string()));
        }
        if self.conv1_out().0 == 0 || self.conv2_out().0 == 0 {
            return Err(QNetError::BadArch(format!(
                "input {}x{} too small for two {}x{} stride-{} convolutions",
                self.input_w, self.input_h, self.kernel, self.kernel, self.stride
            )));
        }
        Ok(())
    }

    fn conv_out(input: usize, kernel: usize, stride: usize) -> usize {
        if input < kernel {
            0
        } else {
            (input - kernel) / stride + 1
        }
    }

    /// (height, width) after the first convolution.
    pub fn conv1_out(&self) -> (usize, usize) {
        (
            Self::conv_out(self.input_h, self.kernel, self.stride),
            Self::conv_out(self.input_w, self.kernel, self.stride),
        )
    }

    /// (height, width) after the second convolution.
    pub fn conv2_out(&self) -> (usize, usize) {
        let (h, w) = self.conv1_out();
        (
            Self::conv_out(h, self.kernel, self.stride),
            Self::conv_out(w, self.kernel, self.stride),
        )
    }

    /// Length of the flattened convolutional output feeding fc1.
    pub fn flatten_len(&self) -> usize {
        let (h, w) = self.conv2_out();
        self.conv2_channels * h * w
    }

    pub fn block_sizes(&self) -> [(&'static str, usize); 10] {
        let k2 = self.kernel * self.kernel;
        [
            ("conv1_w", self.conv1_channels * self.input_channels * k2),
            ("conv1_b", self.conv1_channels),
            ("conv2_w", self.conv2_channels * self.conv1_channels * k2),
            ("conv2_b", self.conv2_channels),
            ("fc1_w", self.fc1 * self.flatten_len()),
            ("fc1_b", self.fc1),
            ("fc2_w", self.fc2 * self.fc1),
            ("fc2_b", self.fc2),
            ("fc3_w", self.actions * self.fc2),
            ("fc3_b", self.actions),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.block_sizes().iter().map(|(_, n)| n).sum()
    }
}

/// All learnable parameters plus the architecture they belong to.
///
/// Convolution weights are laid out `[out_ch][in_ch][ky][kx]`, fully
/// connected weights `[out][in]`, all row-major in flat `Vec<f64>`s.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    arch: NetArch,
    blocks: Vec<Vec<f64>>,
}

impl QNetworkParams {
    /// Fan-in-scaled uniform initialization, deterministic for a seed.
    /// Biases start at zero.
    pub fn init(arch: NetArch, seed: u64) -> Result<Self, QNetError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = arch.kernel * arch.kernel;
        let fan_ins = [
            arch.input_channels * k2, // conv1_w
            0,
            arch.conv1_channels * k2, // conv2_w
            0,
            arch.flatten_len(), // fc1_w
            0,
            arch.fc1, // fc2_w
            0,
            arch.fc2, // fc3_w
            0,
        ];
        let blocks = arch
            .block_sizes()
            .iter()
            .zip(fan_ins)
            .map(|(&(_, size), fan_in)| {
                if fan_in == 0 {
                    vec![0.0; size]
                } else {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..size).map(|_| rng.gen_range(-bound..bound)).collect()
                }
            })
            .collect();
        Ok(QNetworkParams { arch, blocks })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Named views of every parameter block, in checkpoint order.
    pub fn blocks(&self) -> impl Iterator<Item = (&'static str, &[f64])> {
        self.arch
            .block_sizes()
            .into_iter()
            .zip(&self.blocks)
            .map(|((name, _), b)| (name, b.as_slice()))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.blocks.iter_mut()
    }

    fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const FC1_W: usize = 4;
const FC1_B: usize = 5;
const FC2_W: usize = 6;
const FC2_B: usize = 7;
const FC3_W: usize = 8;
const FC3_B: usize = 9;

/// Per-parameter gradients, same block layout as [`QNetworkParams`].
#[derive(Debug, Clone)]
pub struct QNetGrads {
    blocks: Vec<Vec<f64>>,
}

impl QNetGrads {
    pub fn zeros(arch: &NetArch) -> Self {
        QNetGrads {
            blocks: arch
                .block_sizes()
                .iter()
                .map(|&(_, size)| vec![0.0; size])
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &QNetGrads) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales gradients so the global norm is at most `max_norm`; returns the
    /// pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for b in &mut self.blocks {
                for v in b.iter_mut() {
                    *v *= scale;
                }
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.blocks
    }
}

/// One replayable experience.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next: Observation,
    pub terminal: bool,
}

/// Intermediate activations of one forward pass, reusable across calls.
pub struct Scratch {
    conv1: Vec<f64>,
    conv2: Vec<f64>,
    fc1: Vec<f64>,
    fc2: Vec<f64>,
    q: Vec<f64>,
}

impl Scratch {
    pub fn new(arch: &NetArch) -> Self {
        let (o1h, o1w) = arch.conv1_out();
        let (o2h, o2w) = arch.conv2_out();
        Scratch {
            conv1: vec![0.0; arch.conv1_channels * o1h * o1w],
            conv2: vec![0.0; arch.conv2_channels * o2h * o2w],
            fc1: vec![0.0; arch.fc1],
            fc2: vec![0.0; arch.fc2],
            q: vec![0.0; arch.actions],
        }
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }
}

fn check_shape(arch: &NetArch, obs: &Observation) -> Result<(), QNetError> {
    if obs.width != arch.input_w
        || obs.height != arch.input_h
        || obs.data.len() != arch.input_channels * arch.input_w * arch.input_h
    {
        return Err(QNetError::ShapeMismatch {
            got_w: obs.width,
            got_h: obs.height,
            want_w: arch.input_w,
            want_h: arch.input_h,
        });
    }
    Ok(())
}

/// Valid stride-`s` convolution plus ReLU. `input` is `[c_in][h][w]`,
/// `output` is `[c_out][oh][ow]`, weights `[c_out][c_in][k][k]`.
#[allow(clippy::too_many_arguments)]
fn conv_relu_forward(
    input: &[f64],
    (c_in, h, w): (usize, usize, usize),
    weights: &[f64],
    biases: &[f64],
    (c_out, oh, ow): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    output: &mut [f64],
) {
    for o in 0..c_out {
        let w_base_o = o * c_in * kernel * kernel;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = biases[o];
                for i in 0..c_in {
                    let w_base = w_base_o + i * kernel * kernel;
                    let in_base = i * h * w;
                    for ky in 0..kernel {
                        let row = in_base + (oy * stride + ky) * w + ox * stride;
                        let wrow = w_base + ky * kernel;
                        for kx in 0..kernel {
                            acc += input[row + kx] * weights[wrow + kx];
                        }
                    }
                }
                output[(o * oh + oy) * ow + ox] = acc.max(0.0);
            }
        }
    }
}

/// Fully connected layer `y = W x + b`, optionally ReLU-activated.
fn fc_forward(input: &[f64], weights: &[f64], biases: &[f64], relu: bool, output: &mut [f64]) {
    let n = input.len();
    for (o, out) in output.iter_mut().enumerate() {
        let row = &weights[o * n..(o + 1) * n];
        // four independent accumulators: fixed summation order, decent ILP
        let mut acc = [0.0f64; 4];
        let chunks = n / 4;
        for c in 0..chunks {
            let i = c * 4;
            acc[0] += row[i] * input[i];
            acc[1] += row[i + 1] * input[i + 1];
            acc[2] += row[i + 2] * input[i + 2];
            acc[3] += row[i + 3] * input[i + 3];
        }
        let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for i in chunks * 4..n {
            sum += row[i] * input[i];
        }
        sum += biases[o];
        *out = if relu { sum.max(0.0) } else { sum };
    }
}

/// Forward pass into caller-provided scratch; returns the Q values.
pub fn forward_with_scratch<'s>(
    params: &QNetworkParams,
    obs: &Observation,
    scratch: &'s mut Scratch,
) -> Result<&'s [f64], QNetError> {
    let arch = &params.arch;
    check_shape(arch, obs)?;
    let (o1h, o1w) = arch.conv1_out();
    let (o2h, o2w) = arch.conv2_out();
    conv_relu_forward(
        &obs.data,
        (arch.input_channels, arch.input_h, arch.input_w),
        params.block(CONV1_W),
        params.block(CONV1_B),
        (arch.conv1_channels, o1h, o1w),
        arch.kernel,
        arch.stride,
        &mut scratch.conv1,
    );
    conv_relu_forward(
        &scratch.conv1,
        (arch.conv1_channels, o1h, o1w),
        params.block(CONV2_W),
        params.block(CONV2_B),
        (arch.conv2_channels, o2h, o2w),
        arch.kernel,
        arch.stride,
        &mut scratch.conv2,
    );
    fc_forward(
        &scratch.conv2,
        params.block(FC1_W),
        params.block(FC1_B),
        true,
        &mut scratch.fc1,
    );
    fc_forward(
        &scratch.fc1,
        params.block(FC2_W),
        params.block(FC2_B),
        true,
        &mut scratch.fc2,
    );
    fc_forward(
        &scratch.fc2,
        params.block(FC3_W),
        params.block(FC3_B),
        false,
        &mut scratch.q,
    );
    Ok(&scratch.q)
}

/// One-off forward pass returning the Q values for all actions.
pub fn forward(params: &QNetworkParams, obs: &Observation) -> Result<Vec<f64>, QNetError> {
    let mut scratch = Scratch::new(&params.arch);
    forward_with_scratch(params, obs, &mut scratch)?;
    Ok(scratch.q)
}

/// Index and value of the largest Q entry (first wins ties).
pub fn argmax_q(q: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    (best, q[best])
}

/// Bootstrapped regression target for one transition: `r` if terminal, else
/// `r + discount * max_a Q_target(next, a)`.
pub fn td_target(
    transition: &Transition,
    target_params: &QNetworkParams,
    discount: f64,
) -> Result<f64, QNetError> {
    if transition.terminal {
        return Ok(transition.reward);
    }
    let q = forward(target_params, &transition.next)?;
    Ok(transition.reward + discount * argmax_q(&q).1)
}

/// Mean squared error between targets and the taken actions' Q values.
pub fn batch_loss(
    params: &QNetworkParams,
    batch: &[Transition],
    targets: &[f64],
) -> Result<f64, QNetError> {
    if batch.len() != targets.len() {
        return Err(QNetError::BatchMismatch {
            batch: batch.len(),
            targets: targets.len(),
        });
    }
    let mut scratch = Scratch::new(&params.arch);
    let mut total = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let q = forward_with_scratch(params, &t.state, &mut scratch)?;
        let err = y - q[t.action];
        total += err * err;
    }
    Ok(total / batch.len() as f64)
}

/// Mutable weight/bias gradient pair for a layer whose blocks are adjacent.
fn wb_mut(blocks: &mut [Vec<f64>], w_idx: usize) -> (&mut [f64], &mut [f64]) {
    let (head, tail) = blocks.split_at_mut(w_idx + 1);
    (&mut head[w_idx], &mut tail[0])
}

/// Backward pass for one sample. `scratch` must hold the forward activations
/// of `obs`; `dq` is dLoss/dQ for every action (zeros except the taken one).
fn backward_sample(
    params: &QNetworkParams,
    obs: &Observation,
    scratch: &Scratch,
    dq: &[f64],
    grads: &mut QNetGrads,
    buffers: &mut BackBuffers,
) {
    let arch = &params.arch;
    let (o1h, o1w) = arch.conv1_out();
    let (o2h, o2w) = arch.conv2_out();

    // fc3 (linear)
    let (dw, db) = wb_mut(&mut grads.blocks, FC3_W);
    fc_backward(
        &scratch.fc2,
        params.block(FC3_W),
        dq,
        dw,
        db,
        Some(&mut buffers.dfc2),
    );
    relu_mask(&mut buffers.dfc2, &scratch.fc2);

    // fc2
    let (dw, db) = wb_mut(&mut grads.blocks, FC2_W);
    fc_backward(
        &scratch.fc1,
        params.block(FC2_W),
        &buffers.dfc2,
        dw,
        db,
        Some(&mut buffers.dfc1),
    );
    relu_mask(&mut buffers.dfc1, &scratch.fc1);

    // fc1; its input is the flattened conv2 output
    let (dw, db) = wb_mut(&mut grads.blocks, FC1_W);
    fc_backward(
        &scratch.conv2,
        params.block(FC1_W),
        &buffers.dfc1,
        dw,
        db,
        Some(&mut buffers.dconv2),
    );
    relu_mask(&mut buffers.dconv2, &scratch.conv2);

    // conv2: gradients for weights, biases and its input
    let (dw, db) = wb_mut(&mut grads.blocks, CONV2_W);
    conv_backward(
        &scratch.conv1,
        (arch.conv1_channels, o1h, o1w),
        params.block(CONV2_W),
        (arch.conv2_channels, o2h, o2w),
        arch.kernel,
        arch.stride,
        &buffers.dconv2,
        dw,
        db,
        Some(&mut buffers.dconv1),
    );
    relu_mask(&mut buffers.dconv1, &scratch.conv1);

    // conv1: weight and bias gradients only, no input gradient needed
    let (dw, db) = wb_mut(&mut grads.blocks, CONV1_W);
    conv_backward(
        &obs.data,
        (arch.input_channels, arch.input_h, arch.input_w),
        params.block(CONV1_W),
        (arch.conv1_channels, o1h, o1w),
        arch.kernel,
        arch.stride,
        &buffers.dconv1,
        dw,
        db,
        None,
    );
}

fn relu_mask(grad: &mut [f64], activated: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Accumulates fully connected gradients; optionally computes dLoss/dInput.
fn fc_backward(
    input: &[f64],
    weights: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dinput: Option<&mut Vec<f64>>,
) {
    let n = input.len();
    if let Some(dinput) = dinput {
        dinput.clear();
        dinput.resize(n, 0.0);
        for (o, &g) in dout.iter().enumerate() {
            db[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &weights[o * n..(o + 1) * n];
            let drow = &mut dw[o * n..(o + 1) * n];
            for i in 0..n {
                drow[i] += g * input[i];
                dinput[i] += g * row[i];
            }
        }
    } else {
        for (o, &g) in dout.iter().enumerate() {
            db[o] += g;
            if g == 0.0 {
                continue;
            }
            let drow = &mut dw[o * n..(o + 1) * n];
            for i in 0..n {
                drow[i] += g * input[i];
            }
        }
    }
}

/// Accumulates convolution gradients; optionally computes dLoss/dInput.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    (c_in, h, w): (usize, usize, usize),
    weights: &[f64],
    (c_out, oh, ow): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dinput: Option<&mut Vec<f64>>,
) {
    if let Some(di) = dinput.as_deref_mut() {
        di.clear();
        di.resize(c_in * h * w, 0.0);
    }
    for o in 0..c_out {
        let w_base_o = o * c_in * kernel * kernel;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[(o * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                for i in 0..c_in {
                    let w_base = w_base_o + i * kernel * kernel;
                    let in_base = i * h * w;
                    for ky in 0..kernel {
                        let row = in_base + (oy * stride + ky) * w + ox * stride;
                        let wrow = w_base + ky * kernel;
                        for kx in 0..kernel {
                            dw[wrow + kx] += g * input[row + kx];
                        }
                        if let Some(di) = dinput.as_deref_mut() {
                            for kx in 0..kernel {
                                di[row + kx] += g * weights[wrow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct BackBuffers {
    dfc2: Vec<f64>,
    dfc1: Vec<f64>,
    dconv2: Vec<f64>,
    dconv1: Vec<f64>,
}

impl BackBuffers {
    fn new(arch: &NetArch) -> Self {
        let (o1h, o1w) = arch.conv1_out();
        BackBuffers {
            dfc2: Vec::new(),
            dfc1: Vec::new(),
            dconv2: Vec::new(),
            dconv1: vec![0.0; arch.conv1_channels * o1h * o1w],
        }
    }
}

/// Mean-squared-error gradients over a batch, and the batch loss.
///
/// Work is split into fixed chunks processed in parallel; chunk results are
/// reduced in index order, so the result does not depend on thread count.
pub fn batch_gradients(
    params: &QNetworkParams,
    batch: &[Transition],
    targets: &[f64],
) -> Result<(QNetGrads, f64), QNetError> {
    if batch.len() != targets.len() {
        return Err(QNetError::BatchMismatch {
            batch: batch.len(),
            targets: targets.len(),
        });
    }
    if batch.is_empty() {
        return Ok((QNetGrads::zeros(&params.arch), 0.0));
    }
    for t in batch {
        check_shape(&params.arch, &t.state)?;
        if t.action >= params.arch.actions {
            return Err(QNetError::BadArch(format!(
                "action index {} out of range",
                t.action
            )));
        }
    }
    let inv_batch = 1.0 / batch.len() as f64;
    let chunks: Vec<(QNetGrads, f64)> = batch
        .par_chunks(GRAD_CHUNK)
        .zip(targets.par_chunks(GRAD_CHUNK))
        .map(|(ts, ys)| {
            let mut grads = QNetGrads::zeros(&params.arch);
            let mut scratch = Scratch::new(&params.arch);
            let mut buffers = BackBuffers::new(&params.arch);
            let mut dq = vec![0.0; params.arch.actions];
            let mut loss = 0.0;
            for (t, &y) in ts.iter().zip(ys) {
                forward_with_scratch(params, &t.state, &mut scratch)
                    .expect("shapes checked above");
                let err = scratch.q[t.action] - y;
                loss += err * err * inv_batch;
                dq.fill(0.0);
                dq[t.action] = 2.0 * err * inv_batch;
                backward_sample(params, &t.state, &scratch, &dq, &mut grads, &mut buffers);
            }
            (grads, loss)
        })
        .collect();

    let mut iter = chunks.into_iter();
    let (mut grads, mut loss) = iter.next().expect("batch is non-empty");
    for (g, l) in iter {
        grads.add_assign(&g);
        loss += l;
    }
    Ok((grads, loss))
}

/// Plain SGD update `theta -= lr * grad`.
pub fn sgd_apply(params: &mut QNetworkParams, grads: &QNetGrads, learning_rate: f64) {
    for (p, g) in params.blocks.iter_mut().zip(&grads.blocks) {
        for (x, d) in p.iter_mut().zip(g) {
            *x -= learning_rate * d;
        }
    }
}

/// Gradient clipping threshold used by [`grad_step`].
pub const GRAD_CLIP_NORM: f64 = 10.0;

/// One full training step: batch gradients, global-norm clipping at
/// [`GRAD_CLIP_NORM`], finiteness check, SGD update. Returns the batch loss
/// measured before the update. A non-finite gradient aborts without touching
/// the parameters.
pub fn grad_step(
    params: &mut QNetworkParams,
    batch: &[Transition],
    targets: &[f64],
    learning_rate: f64,
) -> Result<f64, QNetError> {
    let (mut grads, loss) = batch_gradients(params, batch, targets)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(QNetError::Divergence);
    }
    grads.clip_global_norm(GRAD_CLIP_NORM);
    sgd_apply(params, &grads, learning_rate);
    Ok(loss)
}

/// Deep copy used as the frozen bootstrap target.
pub fn sync_target(params: &QNetworkParams) -> QNetworkParams {
    params.clone()
}

// --- checkpoint format -----------------------------------------------------
//
//   bytes 0..8    magic "DMOPQNET"
//   bytes 8..12   format version, u32 LE
//   10 x u32 LE   architecture fields in NetArch declaration order
//   10 blocks     u64 LE element count, then that many f64 LE values,
//                 in the order of NetArch::block_sizes()

/// Serializes parameters to the versioned binary checkpoint layout.
pub fn encode_checkpoint(params: &QNetworkParams) -> Vec<u8> {
    let a = &params.arch;
    let mut out = Vec::with_capacity(16 + params.param_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for field in [
        a.input_h,
        a.input_w,
        a.input_channels,
        a.conv1_channels,
        a.conv2_channels,
        a.kernel,
        a.stride,
        a.fc1,
        a.fc2,
        a.actions,
    ] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for block in &params.blocks {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses and validates a binary checkpoint. Never panics on malformed
/// input; shape consistency with the declared architecture is enforced.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<QNetworkParams, QNetError> {
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], QNetError> {
        let start = *cursor;
        let end = start
            .checked_add(n)
            .ok_or_else(|| QNetError::BadCheckpoint("length overflow".to_string()))?;
        if end > bytes.len() {
            return Err(QNetError::BadCheckpoint(format!(
                "truncated at byte {start}, wanted {n} more"
            )));
        }
        *cursor = end;
        Ok(&bytes[start..end])
    };

    if take(&mut cursor, 8)? != CHECKPOINT_MAGIC {
        return Err(QNetError::BadCheckpoint("bad magic".to_string()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(QNetError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut fields = [0usize; 10];
    for f in &mut fields {
        *f = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    }
    let arch = NetArch {
        input_h: fields[0],
        input_w: fields[1],
        input_channels: fields[2],
        conv1_channels: fields[3],
        conv2_channels: fields[4],
        kernel: fields[5],
        stride: fields[6],
        fc1: fields[7],
        fc2: fields[8],
        actions: fields[9],
    };
    arch.validate()
        .map_err(|e| QNetError::BadCheckpoint(format!("architecture: {e}")))?;
    if arch.param_count() as u64 > MAX_CHECKPOINT_PARAMS {
        return Err(QNetError::BadCheckpoint(format!(
            "parameter count {} exceeds limit",
            arch.param_count()
        )));
    }

    let mut blocks = Vec::with_capacity(10);
    for (name, expected) in arch.block_sizes() {
        let count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
        if count != expected as u64 {
            return Err(QNetError::BadCheckpoint(format!(
                "block {name} has {count} values, architecture implies {expected}"
            )));
        }
        let raw = take(&mut cursor, expected * 8)?;
        let mut block = Vec::with_capacity(expected);
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(QNetError::BadCheckpoint(format!(
                    "non-finite value in block {name}"
                )));
            }
            block.push(v);
        }
        blocks.push(block);
    }
    if cursor != bytes.len() {
        return Err(QNetError::BadCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - cursor
        )));
    }
    Ok(QNetworkParams { arch, blocks })
}

pub fn save_checkpoint(params: &QNetworkParams, path: &Path) -> Result<(), QNetError> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<QNetworkParams, QNetError> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes)
}
