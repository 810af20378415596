use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Geometry of a border frame of width `pad` around an
/// `(height - 2·pad) × (width - 2·pad)` interior window.
///
/// Border pixels are enumerated channel-major, then row-major over the
/// canvas, skipping the interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pad: usize,
}

impl FrameLayout {
    pub fn interior(&self) -> (usize, usize) {
        (self.height - 2 * self.pad, self.width - 2 * self.pad)
    }

    pub fn is_border(&self, y: usize, x: usize) -> bool {
        y < self.pad || x < self.pad || y >= self.height - self.pad || x >= self.width - self.pad
    }

    /// Border pixels per channel.
    pub fn border_len(&self) -> usize {
        let (ih, iw) = self.interior();
        self.height * self.width - ih * iw
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.border_len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf {
        requires_grad: bool,
    },
    MatMul(usize, usize),
    AddRowBias {
        x: usize,
        bias: usize,
    },
    AddChannelBias {
        x: usize,
        bias: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        geom: ConvGeom,
    },
    Relu(usize),
    Clamp01(usize),
    Reshape(usize),
    Sum(usize),
    Scale(usize, f32),
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
    BlockReduce {
        x: usize,
        width: usize,
        winners: Vec<usize>,
    },
    SelectColumns {
        x: usize,
        width: usize,
        columns: Vec<usize>,
    },
    Frame {
        border: usize,
        image: usize,
        layout: FrameLayout,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run tape for reverse-mode differentiation.
///
/// Every operation appends a node whose operands were recorded earlier, so
/// the node order is already topological and [`Graph::backward`] is a single
/// reverse sweep. Build a fresh graph per forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
    peak_bytes: usize,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }

    /// High-water mark of gradient buffers alive during the sweep.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }
}

fn check_finite(op: &'static str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { requires_grad: false }, false)
    }

    /// Records a leaf whose gradient [`backward`](Self::backward) reports.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { requires_grad: true }, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.graph, self.id, "variable belongs to a different graph");
        &self.nodes[var.index].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded values.
    pub fn size_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.size_bytes()).sum()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn node(&self, var: Var) -> Result<&Node> {
        if var.graph != self.id {
            return Err(Error::InvalidInput(
                "variable belongs to a different graph".into(),
            ));
        }
        Ok(&self.nodes[var.index])
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].needs_grad)
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, operands: &[Var]) -> Result<Var> {
        check_finite(op_name, value.data())?;
        let needs = self.needs(operands);
        Ok(self.push(value, op, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = Tensor::new(&[m, n], kernels::matmul(av.data(), bv.data(), m, k, n))?;
        self.record("matmul", out, Op::MatMul(a.index, b.index), &[a, b])
    }

    /// `x[N×K] + bias[K]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.node(x)?.value, &self.node(bias)?.value);
        if xv.rank() != 2 || bv.numel() != xv.shape()[1] {
            return Err(Error::shape(
                "add_row_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let k = xv.shape()[1];
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(k) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        self.record(
            "add_row_bias",
            out,
            Op::AddRowBias {
                x: x.index,
                bias: bias.index,
            },
            &[x, bias],
        )
    }

    /// `x[N×F×H×W] + bias[F]` broadcast over batch and space.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.node(x)?.value, &self.node(bias)?.value);
        if xv.rank() != 4 || bv.numel() != xv.shape()[1] {
            return Err(Error::shape(
                "add_channel_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let plane = xv.shape()[2] * xv.shape()[3];
        let f = xv.shape()[1];
        let mut data = xv.data().to_vec();
        for (i, chunk) in data.chunks_mut(plane).enumerate() {
            let b = bv.data()[i % f];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let out = Tensor::new(xv.shape(), data)?;
        self.record(
            "add_channel_bias",
            out,
            Op::AddChannelBias {
                x: x.index,
                bias: bias.index,
            },
            &[x, bias],
        )
    }

    /// Valid (unpadded) cross-correlation of `input[N×C×H×W]` with
    /// `kernel[F×C×kh×kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (iv, kv) = (&self.node(input)?.value, &self.node(kernel)?.value);
        if iv.rank() != 4 || kv.rank() != 4 || iv.shape()[1] != kv.shape()[1] || stride == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, kernel {:?}, stride {stride}", iv.shape(), kv.shape()),
            ));
        }
        let (n, c, h, w) = (iv.shape()[0], iv.shape()[1], iv.shape()[2], iv.shape()[3]);
        let (f, kh, kw) = (kv.shape()[0], kv.shape()[2], kv.shape()[3]);
        if kh > h || kw > w {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than input {h}x{w}"),
            ));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        };
        let out = Tensor::new(
            &[n, f, geom.oh, geom.ow],
            kernels::conv2d(iv.data(), kv.data(), &geom),
        )?;
        self.record(
            "conv2d",
            out,
            Op::Conv2d {
                input: input.index,
                kernel: kernel.index,
                geom,
            },
            &[input, kernel],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.record("relu", out, Op::Relu(x.index), &[x])
    }

    /// Elementwise clip to `[0, 1]`.
    pub fn clamp01(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v.clamp(0.0, 1.0)).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.record("clamp01", out, Op::Clamp01(x.index), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.node(x)?.value.clone().reshape(shape)?;
        self.record("reshape", out, Op::Reshape(x.index), &[x])
    }

    /// Collapses all trailing axes: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.node(x)?.value.shape().to_vec();
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, &[shape[0], rest])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f32 = self.node(x)?.value.data().iter().sum();
        self.record("sum", Tensor::scalar(total), Op::Sum(x.index), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.record("scale", out, Op::Scale(x.index, factor), &[x])
    }

    /// Batch mean of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = &self.node(logits)?.value;
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {:?} with {} labels", lv.shape(), labels.len()),
            ));
        }
        let k = lv.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let probs = softmax_rows(lv.data(), k);
        let mut total = 0.0f32;
        for (row, &label) in lv.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f32>().ln();
            total += lse - row[label];
        }
        let loss = Tensor::scalar(total / labels.len() as f32);
        self.record(
            "softmax_cross_entropy",
            loss,
            Op::SoftmaxCrossEntropy {
                logits: logits.index,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Splits each row of `x[N×n]` into contiguous blocks of `block` entries
    /// (the last one shorter when `block ∤ n`) and keeps each block's maximum.
    pub fn block_max(&mut self, x: Var, block: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if xv.rank() != 2 || block == 0 {
            return Err(Error::shape(
                "block_max",
                format!("input {:?}, block {block}", xv.shape()),
            ));
        }
        let (rows, width) = (xv.shape()[0], xv.shape()[1]);
        let m = width.div_ceil(block);
        let mut data = Vec::with_capacity(rows * m);
        let mut winners = Vec::with_capacity(rows * m);
        for row in xv.data().chunks(width) {
            for (j, chunk) in row.chunks(block).enumerate() {
                let w = argmax(chunk);
                data.push(chunk[w]);
                winners.push(j * block + w);
            }
        }
        let out = Tensor::new(&[rows, m], data)?;
        self.record(
            "block_max",
            out,
            Op::BlockReduce {
                x: x.index,
                width,
                winners,
            },
            &[x],
        )
    }

    /// `out[:, c] = x[:, columns[c]]`.
    pub fn select_columns(&mut self, x: Var, columns: &[usize]) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if xv.rank() != 2 || columns.is_empty() {
            return Err(Error::shape(
                "select_columns",
                format!("input {:?}, {} columns", xv.shape(), columns.len()),
            ));
        }
        let width = xv.shape()[1];
        if let Some(&bad) = columns.iter().find(|&&c| c >= width) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                limit: width,
            });
        }
        let data = xv
            .data()
            .chunks(width)
            .flat_map(|row| columns.iter().map(move |&c| row[c]))
            .collect();
        let out = Tensor::new(&[xv.shape()[0], columns.len()], data)?;
        self.record(
            "select_columns",
            out,
            Op::SelectColumns {
                x: x.index,
                width,
                columns: columns.to_vec(),
            },
            &[x],
        )
    }

    /// Places `image[N×C×h×w]` in the interior window of a canvas and fills
    /// the border from `border[C·border_len]`, shared across the batch.
    pub fn frame(&mut self, border: Var, image: Var, layout: FrameLayout) -> Result<Var> {
        let (bv, iv) = (&self.node(border)?.value, &self.node(image)?.value);
        let (ih, iw) = layout.interior();
        if bv.numel() != layout.param_count()
            || iv.rank() != 4
            || iv.shape()[1..] != [layout.channels, ih, iw]
        {
            return Err(Error::shape(
                "frame",
                format!(
                    "border {:?}, image {:?}, canvas {}x{}x{} pad {}",
                    bv.shape(),
                    iv.shape(),
                    layout.channels,
                    layout.height,
                    layout.width,
                    layout.pad
                ),
            ));
        }
        let n = iv.shape()[0];
        let (c, h, w, p) = (layout.channels, layout.height, layout.width, layout.pad);
        let mut data = Vec::with_capacity(n * c * h * w);
        for img in iv.data().chunks(c * ih * iw) {
            let mut k = 0;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        if layout.is_border(y, x) {
                            data.push(bv.data()[k]);
                            k += 1;
                        } else {
                            data.push(img[(ch * ih + y - p) * iw + x - p]);
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[n, c, h, w], data)?;
        self.record(
            "frame",
            out,
            Op::Frame {
                border: border.index,
                image: image.index,
                layout,
            },
            &[border, image],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.graph != self.id || loss.index >= self.nodes.len() {
            return Err(Error::Backward("loss is not recorded on this graph".into()));
        }
        if !self.nodes[loss.index].value.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.index].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        let mut live = 4usize;
        let mut peak = live;
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if let Op::Leaf { .. } = node.op {
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            live -= g.len() * 4;
            self.propagate(node, &g, &mut grads, &mut live)?;
            peak = peak.max(live + g.len() * 4);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let grad = match node.op {
                Op::Leaf { requires_grad: true } => {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    check_finite("backward", &data)?;
                    Some(Tensor::new(node.value.shape(), data)?)
                }
                _ => None,
            };
            out.push(grad);
        }
        Ok(Gradients {
            graph: self.id,
            grads: out,
            peak_bytes: peak,
        })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f32],
        grads: &mut [Option<Vec<f32>>],
        live: &mut usize,
    ) -> Result<()> {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(da) = slot(nodes, grads, live, *a) {
                    kernels::matmul_grad_a(g, bv.data(), da, m, k, n);
                }
                if let Some(db) = slot(nodes, grads, live, *b) {
                    kernels::matmul_grad_b(av.data(), g, db, m, k, n);
                }
            }
            Op::AddRowBias { x, bias } => {
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    add_into(dx, g);
                }
                if let Some(db) = slot(nodes, grads, live, *bias) {
                    let k = db.len();
                    for row in g.chunks(k) {
                        add_into(db, row);
                    }
                }
            }
            Op::AddChannelBias { x, bias } => {
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    add_into(dx, g);
                }
                let shape = nodes[*x].value.shape();
                let plane = shape[2] * shape[3];
                let f = shape[1];
                if let Some(db) = slot(nodes, grads, live, *bias) {
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        db[i % f] += chunk.iter().sum::<f32>();
                    }
                }
            }
            Op::Conv2d { input, kernel, geom } => {
                let (iv, kv) = (&nodes[*input].value, &nodes[*kernel].value);
                if let Some(di) = slot(nodes, grads, live, *input) {
                    kernels::conv2d_grad_input(g, kv.data(), di, geom);
                }
                if let Some(dk) = slot(nodes, grads, live, *kernel) {
                    kernels::conv2d_grad_kernel(g, iv.data(), dk, geom);
                }
            }
            Op::Relu(x) => {
                let xv = nodes[*x].value.data();
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Clamp01(x) => {
                let xv = nodes[*x].value.data();
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 && v < 1.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    add_into(dx, g);
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Scale(x, factor) => {
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv * factor;
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if let Some(dl) = slot(nodes, grads, live, *logits) {
                    let k = probs.len() / labels.len();
                    let scale = g[0] / labels.len() as f32;
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            dl[r * k + j] += (probs[r * k + j] - onehot) * scale;
                        }
                    }
                }
            }
            Op::BlockReduce { x, width, winners } => {
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    let m = winners.len() / (dx.len() / width);
                    for (o, (&gv, &w)) in g.iter().zip(winners).enumerate() {
                        let row = o / m;
                        dx[row * width + w] += gv;
                    }
                }
            }
            Op::SelectColumns { x, width, columns } => {
                if let Some(dx) = slot(nodes, grads, live, *x) {
                    let k = columns.len();
                    for (r, grow) in g.chunks(k).enumerate() {
                        for (&c, &gv) in columns.iter().zip(grow) {
                            dx[r * width + c] += gv;
                        }
                    }
                }
            }
            Op::Frame {
                border,
                image,
                layout,
            } => {
                let (c, h, w, p) = (layout.channels, layout.height, layout.width, layout.pad);
                let (ih, iw) = layout.interior();
                let canvas = c * h * w;
                if let Some(db) = slot(nodes, grads, live, *border) {
                    for img in g.chunks(canvas) {
                        let mut k = 0;
                        for ch in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    if layout.is_border(y, x) {
                                        db[k] += img[(ch * h + y) * w + x];
                                        k += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(di) = slot(nodes, grads, live, *image) {
                    for (gimg, dimg) in g.chunks(canvas).zip(di.chunks_mut(c * ih * iw)) {
                        for ch in 0..c {
                            for y in 0..ih {
                                for x in 0..iw {
                                    dimg[(ch * ih + y) * iw + x] += gimg[(ch * h + y + p) * w + x + p];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f32>>],
    live: &mut usize,
    idx: usize,
) -> Option<&'a mut Vec<f32>> {
    if !nodes[idx].needs_grad {
        return None;
    }
    let entry = &mut grads[idx];
    if entry.is_none() {
        let len = nodes[idx].value.numel();
        *live += len * 4;
        *entry = Some(vec![0.0; len]);
    }
    entry.as_mut()
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(data: &[f32], width: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(width) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let start = out.len();
        let mut denom = 0.0;
        for &z in row {
            let e = (z - max).exp();
            denom += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= denom);
    }
    out
}
