//! Raw slice kernels behind the graph operations. Shapes are validated by
//! the caller; these functions only index.

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `da[m×k] += g[m×n] · bᵀ`
pub(crate) fn matmul_grad_a(g: &[f32], b: &[f32], da: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f32 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            da[i * k + p] += dot;
        }
    }
}

/// `db[k×n] += aᵀ · g[m×n]`
pub(crate) fn matmul_grad_b(a: &[f32], g: &[f32], db: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let drow = &mut db[p * n..(p + 1) * n];
            for (d, &gv) in drow.iter_mut().zip(grow) {
                *d += av * gv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn in_idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
    fn out_idx(&self, n: usize, f: usize, y: usize, x: usize) -> usize {
        ((n * self.f + f) * self.oh + y) * self.ow + x
    }
    fn k_idx(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        ((f * self.c + c) * self.kh + y) * self.kw + x
    }
}

/// Valid cross-correlation.
pub(crate) fn conv2d(input: &[f32], kernel: &[f32], g: &ConvGeom) -> Vec<f32> {
    let mut out = vec![0.0; g.n * g.f * g.oh * g.ow];
    let s = g.stride;
    for n in 0..g.n {
        for f in 0..g.f {
            for c in 0..g.c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = kernel[g.k_idx(f, c, ky, kx)];
                        for oy in 0..g.oh {
                            let ibase = g.in_idx(n, c, oy * s + ky, kx);
                            let obase = g.out_idx(n, f, oy, 0);
                            for ox in 0..g.ow {
                                out[obase + ox] += wv * input[ibase + ox * s];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_grad_input(grad: &[f32], kernel: &[f32], din: &mut [f32], g: &ConvGeom) {
    let s = g.stride;
    for n in 0..g.n {
        for f in 0..g.f {
            for c in 0..g.c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = kernel[g.k_idx(f, c, ky, kx)];
                        for oy in 0..g.oh {
                            let ibase = g.in_idx(n, c, oy * s + ky, kx);
                            let obase = g.out_idx(n, f, oy, 0);
                            for ox in 0..g.ow {
                                din[ibase + ox * s] += wv * grad[obase + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_grad_kernel(grad: &[f32], input: &[f32], dk: &mut [f32], g: &ConvGeom) {
    let s = g.stride;
    for n in 0..g.n {
        for f in 0..g.f {
            for c in 0..g.c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let mut acc = 0.0;
                        for oy in 0..g.oh {
                            let ibase = g.in_idx(n, c, oy * s + ky, kx);
                            let obase = g.out_idx(n, f, oy, 0);
                            for ox in 0..g.ow {
                                acc += grad[obase + ox] * input[ibase + ox * s];
                            }
                        }
                        dk[g.k_idx(f, c, ky, kx)] += acc;
                    }
                }
            }
        }
    }
}
