//! Independent oracles shared by the integration tests: plain `f64`
//! forward passes, central finite differences, and brute-force renditions
//! of block reduction and greedy label mapping.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vplab::autodiff::{FrameLayout, Graph, Var};
use vplab::Tensor;

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;
pub const INSTANCES: usize = 12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values at least `gap` away from every point in `kinks`.
pub fn away_from(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32, kinks: &[f32], gap: f32) -> Vec<f32> {
    (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() >= gap) {
                break v;
            }
        })
        .collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// ‖analytic − numeric‖ / ‖numeric‖, with an absolute floor for vanishing
/// gradients.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a as f64 - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-6)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---- f64 reference forwards -------------------------------------------

pub fn ref_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|t| a[i * k + t] * b[t * m + j]).sum();
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvDims {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h - self.kh) / self.stride + 1,
            (self.w - self.kw) / self.stride + 1,
        )
    }
}

pub fn ref_conv2d(x: &[f64], k: &[f64], d: ConvDims) -> Vec<f64> {
    let (oh, ow) = d.out_hw();
    let mut out = Vec::with_capacity(d.n * d.f * oh * ow);
    for n in 0..d.n {
        for f in 0..d.f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..d.c {
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let (y, xx) = (oy * d.stride + ky, ox * d.stride + kx);
                                acc += x[((n * d.c + c) * d.h + y) * d.w + xx]
                                    * k[((f * d.c + c) * d.kh + ky) * d.kw + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn ref_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn ref_clamp01(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.clamp(0.0, 1.0)).collect()
}

/// Mean cross-entropy of softmax rows.
pub fn ref_softmax_ce(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    let total: f64 = logits
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Explicit per-block maximum: block `b` covers columns `b·T .. min((b+1)·T, n)`.
pub fn ref_block_max(v: &[f64], n: usize, t: usize) -> Vec<f64> {
    let m = n.div_ceil(t);
    let mut out = Vec::new();
    for row in v.chunks(n) {
        for b in 0..m {
            let mut best = f64::NEG_INFINITY;
            let mut j = b * t;
            while j < n && j < (b + 1) * t {
                if row[j] > best {
                    best = row[j];
                }
                j += 1;
            }
            out.push(best);
        }
    }
    out
}

pub fn ref_select(v: &[f64], width: usize, cols: &[usize]) -> Vec<f64> {
    v.chunks(width)
        .flat_map(|row| cols.iter().map(move |&c| row[c]))
        .collect()
}

/// Canvas with `border` written around each image, border pixels in
/// channel-major, row-major order.
pub fn ref_frame(border: &[f64], images: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ih, iw) = (h - 2 * p, w - 2 * p);
    let mut out = Vec::new();
    for img in images.chunks(c * ih * iw) {
        let mut k = 0;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let inside = y >= p && y < h - p && x >= p && x < w - p;
                    if inside {
                        out.push(img[(ch * ih + (y - p)) * iw + (x - p)]);
                    } else {
                        out.push(border[k]);
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

// ---- brute-force greedy mapping ---------------------------------------

/// Sorts every (count, class, index) triple by count descending, then
/// class, then index, and keeps each one whose class and index are both
/// still free. Classes left over take the smallest unused index in class
/// order.
pub fn oracle_greedy(counts: &[Vec<u64>], m: usize) -> Vec<usize> {
    let k = counts.len();
    let mut triples = Vec::new();
    for (c, row) in counts.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            triples.push((v, c, j));
        }
    }
    triples.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut map: Vec<Option<usize>> = vec![None; k];
    let mut used = vec![false; m];
    for (v, c, j) in triples {
        if v > 0 && map[c].is_none() && !used[j] {
            map[c] = Some(j);
            used[j] = true;
        }
    }
    for slot in map.iter_mut().filter(|s| s.is_none()) {
        let j = used.iter().position(|u| !u).expect("m ≥ k");
        *slot = Some(j);
        used[j] = true;
    }
    map.into_iter().map(Option::unwrap).collect()
}

pub fn random_counts(rng: &mut ChaCha8Rng, k: usize, m: usize) -> Vec<Vec<u64>> {
    // small range so that ties and all-zero rows are common
    (0..k)
        .map(|_| {
            let sparse = rng.gen_bool(0.2);
            (0..m)
                .map(|_| if sparse { 0 } else { rng.gen_range(0..5) })
                .collect()
        })
        .collect()
}

// ---- gradient suite ---------------------------------------------------

/// Worst relative error per operation over [`INSTANCES`] random instances.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    vec![
        ("matmul", worst(|| check_matmul(&mut r))),
        ("conv2d", worst(|| check_conv2d(&mut r))),
        ("relu", worst(|| check_relu(&mut r))),
        ("clamp01", worst(|| check_clamp01(&mut r))),
        ("softmax_cross_entropy", worst(|| check_softmax_ce(&mut r))),
        ("block_reduce", worst(|| check_block_reduce(&mut r))),
        ("map_labels", worst(|| check_map_labels(&mut r))),
        ("apply_prompt", worst(|| check_apply_prompt(&mut r))),
    ]
}

fn worst(mut f: impl FnMut() -> f64) -> f64 {
    (0..INSTANCES).map(|_| f()).fold(0.0, f64::max)
}

/// Records `Σ w ⊙ y` for a fixed random `w`, returning the loss var.
fn project(g: &mut Graph, y: Var, w: &[f32]) -> Var {
    let flat = g.reshape(y, &[1, w.len()]).unwrap();
    let wv = g.constant(Tensor::new(&[w.len(), 1], w.to_vec()).unwrap());
    let s = g.matmul(flat, wv).unwrap();
    g.sum(s).unwrap()
}

fn analytic(g: &Graph, loss: Var, var: Var) -> Vec<f32> {
    g.backward(loss).unwrap().get(var).unwrap().data().to_vec()
}

fn check_matmul(r: &mut ChaCha8Rng) -> f64 {
    let (n, k, m) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..5));
    let a = uniform(r, n * k, -1.0, 1.0);
    let b = uniform(r, k * m, -1.0, 1.0);
    let w = uniform(r, n * m, -1.0, 1.0);
    let mut g = Graph::new();
    let av = g.param(Tensor::new(&[n, k], a.clone()).unwrap());
    let bv = g.param(Tensor::new(&[k, m], b.clone()).unwrap());
    let y = g.matmul(av, bv).unwrap();
    let loss = project(&mut g, y, &w);
    let (a64, b64, w64) = (to_f64(&a), to_f64(&b), to_f64(&w));
    let ga = numeric_grad(|x| dot(&ref_matmul(x, &b64, n, k, m), &w64), &a64);
    let gb = numeric_grad(|x| dot(&ref_matmul(&a64, x, n, k, m), &w64), &b64);
    rel_err(&analytic(&g, loss, av), &ga).max(rel_err(&analytic(&g, loss, bv), &gb))
}

fn check_conv2d(r: &mut ChaCha8Rng) -> f64 {
    let kh = r.gen_range(1..4);
    let kw = r.gen_range(1..4);
    let d = ConvDims {
        n: r.gen_range(1..3),
        c: r.gen_range(1..3),
        h: r.gen_range(kh..kh + 5),
        w: r.gen_range(kw..kw + 5),
        f: r.gen_range(1..4),
        kh,
        kw,
        stride: r.gen_range(1..3),
    };
    let (oh, ow) = d.out_hw();
    let x = uniform(r, d.n * d.c * d.h * d.w, -1.0, 1.0);
    let k = uniform(r, d.f * d.c * d.kh * d.kw, -1.0, 1.0);
    let w = uniform(r, d.n * d.f * oh * ow, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.param(Tensor::new(&[d.n, d.c, d.h, d.w], x.clone()).unwrap());
    let kv = g.param(Tensor::new(&[d.f, d.c, d.kh, d.kw], k.clone()).unwrap());
    let y = g.conv2d(xv, kv, d.stride).unwrap();
    let loss = project(&mut g, y, &w);
    let (x64, k64, w64) = (to_f64(&x), to_f64(&k), to_f64(&w));
    let gx = numeric_grad(|v| dot(&ref_conv2d(v, &k64, d), &w64), &x64);
    let gk = numeric_grad(|v| dot(&ref_conv2d(&x64, v, d), &w64), &k64);
    rel_err(&analytic(&g, loss, xv), &gx).max(rel_err(&analytic(&g, loss, kv), &gk))
}

fn check_relu(r: &mut ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..40);
    let x = away_from(r, n, -1.0, 1.0, &[0.0], 2.0 * FD_STEP as f32);
    let w = uniform(r, n, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.param(Tensor::new(&[n], x.clone()).unwrap());
    let y = g.relu(xv).unwrap();
    let loss = project(&mut g, y, &w);
    let w64 = to_f64(&w);
    let gx = numeric_grad(|v| dot(&ref_relu(v), &w64), &to_f64(&x));
    rel_err(&analytic(&g, loss, xv), &gx)
}

fn check_clamp01(r: &mut ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..40);
    let x = away_from(r, n, -0.5, 1.5, &[0.0, 1.0], 2.0 * FD_STEP as f32);
    let w = uniform(r, n, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.param(Tensor::new(&[n], x.clone()).unwrap());
    let y = g.clamp01(xv).unwrap();
    let loss = project(&mut g, y, &w);
    let w64 = to_f64(&w);
    let gx = numeric_grad(|v| dot(&ref_clamp01(v), &w64), &to_f64(&x));
    rel_err(&analytic(&g, loss, xv), &gx)
}

fn check_softmax_ce(r: &mut ChaCha8Rng) -> f64 {
    let (n, k) = (r.gen_range(1..6), r.gen_range(2..8));
    let x = uniform(r, n * k, -3.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let mut g = Graph::new();
    let xv = g.param(Tensor::new(&[n, k], x.clone()).unwrap());
    let loss = g.softmax_cross_entropy(xv, &labels).unwrap();
    let gx = numeric_grad(|v| ref_softmax_ce(v, &labels, k), &to_f64(&x));
    rel_err(&analytic(&g, loss, xv), &gx)
}

/// Rows whose entries are pairwise at least `gap` apart, so no block max
/// changes under a finite-difference probe.
fn separated_rows(r: &mut ChaCha8Rng, rows: usize, n: usize, gap: f32) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        let mut ranks: Vec<usize> = (0..n).collect();
        ranks.shuffle(r);
        out.extend(
            ranks
                .iter()
                .map(|&k| k as f32 * gap * 4.0 + r.gen_range(0.0..gap)),
        );
    }
    out
}

fn check_block_reduce(r: &mut ChaCha8Rng) -> f64 {
    let (rows, n): (usize, usize) = (r.gen_range(1..4), r.gen_range(2..25));
    let t = r.gen_range(1..=n);
    let m = n.div_ceil(t);
    let x = separated_rows(r, rows, n, 0.01);
    let w = uniform(r, rows * m, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.param(Tensor::new(&[rows, n], x.clone()).unwrap());
    let y = g.block_max(xv, t).unwrap();
    let loss = project(&mut g, y, &w);
    let w64 = to_f64(&w);
    let gx = numeric_grad(|v| dot(&ref_block_max(v, n, t), &w64), &to_f64(&x));
    rel_err(&analytic(&g, loss, xv), &gx)
}

fn check_map_labels(r: &mut ChaCha8Rng) -> f64 {
    let (rows, m) = (r.gen_range(1..4), r.gen_range(2..12));
    let k = r.gen_range(1..=m);
    let mut cols: Vec<usize> = (0..m).collect();
    cols.shuffle(r);
    cols.truncate(k);
    let x = uniform(r, rows * m, -1.0, 1.0);
    let w = uniform(r, rows * k, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.param(Tensor::new(&[rows, m], x.clone()).unwrap());
    let y = g.select_columns(xv, &cols).unwrap();
    let loss = project(&mut g, y, &w);
    let w64 = to_f64(&w);
    let gx = numeric_grad(|v| dot(&ref_select(v, m, &cols), &w64), &to_f64(&x));
    rel_err(&analytic(&g, loss, xv), &gx)
}

/// `frame(clamp01(border), images)`, checked in both arguments.
fn check_apply_prompt(r: &mut ChaCha8Rng) -> f64 {
    let c = r.gen_range(1..3);
    let p = r.gen_range(1..3);
    let (h, w) = (2 * p + r.gen_range(1..4), 2 * p + r.gen_range(1..4));
    let layout = FrameLayout {
        channels: c,
        height: h,
        width: w,
        pad: p,
    };
    let n = r.gen_range(1..3);
    let (ih, iw) = layout.interior();
    let border = away_from(
        r,
        layout.param_count(),
        -0.3,
        1.3,
        &[0.0, 1.0],
        2.0 * FD_STEP as f32,
    );
    let images = uniform(r, n * c * ih * iw, 0.0, 1.0);
    let wts = uniform(r, n * c * h * w, -1.0, 1.0);
    let mut g = Graph::new();
    let bv = g.param(Tensor::new(&[border.len()], border.clone()).unwrap());
    let iv = g.param(Tensor::new(&[n, c, ih, iw], images.clone()).unwrap());
    let cb = g.clamp01(bv).unwrap();
    let y = g.frame(cb, iv, layout).unwrap();
    let loss = project(&mut g, y, &wts);
    let (b64, i64_, w64) = (to_f64(&border), to_f64(&images), to_f64(&wts));
    let gb = numeric_grad(
        |v| dot(&ref_frame(&ref_clamp01(v), &i64_, c, h, w, p), &w64),
        &b64,
    );
    let gi = numeric_grad(
        |v| dot(&ref_frame(&ref_clamp01(&b64), v, c, h, w, p), &w64),
        &i64_,
    );
    rel_err(&analytic(&g, loss, bv), &gb).max(rel_err(&analytic(&g, loss, iv), &gi))
}

// ---- toy models and fixtures ------------------------------------------

use vplab::attack::{AttackConfig, Pipeline};
use vplab::data::{generate_synthetic, Dataset, Split, Style, SynthSpec};
use vplab::nets::{init_params, train_standard, ConvBlock, ConvNetSpec, ModelParams, Monitor, TrainHyper};

pub fn toy_spec(classes: usize) -> ConvNetSpec {
    ConvNetSpec {
        input_size: (1, 12, 12),
        conv_blocks: vec![ConvBlock {
            filters: 4,
            kernel: 3,
            stride: 2,
        }],
        hidden_width: 16,
        n_classes: classes,
    }
}

pub fn toy_data(
    classes: usize,
    per_class: usize,
    size: usize,
    style: Style,
    seed: u64,
    split: Split,
) -> Dataset {
    let spec = SynthSpec {
        n_classes: classes,
        samples_per_class: per_class,
        image_size: (1, size, size),
        style,
        noise_level: 0.2,
        seed,
    };
    generate_synthetic(&spec, split).unwrap()
}

pub fn toy_hyper(epochs: usize, seed: u64) -> TrainHyper {
    TrainHyper {
        epochs,
        batch_size: 16,
        learning_rate: 0.05,
        momentum: 0.9,
        seed,
        epsilon_warmup: 0,
    }
}

/// A 6-class 12×12 classifier trained with clean cross-entropy, plus its
/// held-out test split.
pub fn trained_toy(seed: u64) -> (ModelParams, Dataset) {
    let train = toy_data(6, 30, 12, Style::Source, seed, Split::Train);
    let test = toy_data(6, 20, 12, Style::Source, seed + 1, Split::Test);
    let mut params = init_params(&toy_spec(6), seed).unwrap();
    let monitor = Monitor {
        data: &test,
        attack: AttackConfig::new(0.0).unwrap(),
        timing: false,
    };
    train_standard(&mut params, &train, &toy_hyper(12, seed), &monitor).unwrap();
    params.freeze();
    (params, test)
}

/// Per-sample cross-entropy of `pipeline` on `x`, in f64.
pub fn per_sample_loss<P: Pipeline>(pipeline: &P, x: &Tensor, labels: &[usize]) -> Vec<f64> {
    let logits = vplab::attack::predict(pipeline, x).unwrap();
    let k = logits.shape()[1];
    to_f64(logits.data())
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| ref_softmax_ce(row, &[y], k))
        .collect()
}

/// One-pixel linear classifier: class 0 iff x > 0.5, via logits
/// `(x − 0.5, 0.5 − x)`.
pub struct Threshold;

impl Pipeline for Threshold {
    fn input_shape(&self) -> (usize, usize, usize) {
        (1, 1, 1)
    }

    fn logits(&self, g: &mut Graph, input: Var) -> vplab::Result<Var> {
        let flat = g.flatten(input)?;
        let w = g.constant(Tensor::new(&[1, 2], vec![1.0, -1.0])?);
        let b = g.constant(Tensor::new(&[2], vec![-0.5, 0.5])?);
        let z = g.matmul(flat, w)?;
        g.add_row_bias(z, b)
    }
}

pub fn pixel_dataset(points: &[(f32, usize)]) -> Dataset {
    let xs: Vec<f32> = points.iter().map(|p| p.0).collect();
    let ys: Vec<usize> = points.iter().map(|p| p.1).collect();
    Dataset::new(Tensor::new(&[xs.len(), 1, 1, 1], xs).unwrap(), ys, 2, Split::Test).unwrap()
}

/// Under ε = 0.1 against [`Threshold`]: eight points start correct, three
/// of them sit within ε of the boundary and flip, two start wrong.
pub const PROTOCOL_FIXTURE: [(f32, usize); 10] = [
    (0.55, 0),
    (0.57, 0),
    (0.59, 0),
    (0.75, 0),
    (0.85, 0),
    (0.95, 0),
    (0.30, 1),
    (0.10, 1),
    (0.20, 0),
    (0.90, 1),
];
