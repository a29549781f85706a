//! Hand-rolled layers with explicit forward caches and backward passes.
//!
//! Layouts: dense activations are `Mat` (batch × dim); spatial activations are
//! [`Feat4`] in NHWC order so that im2col rows line up with matmul rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::mat::Mat;
use crate::rng::SeedRng;

/// Trainable tensor with gradient and AdamW moment buffers.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Mat,
    pub grad: Mat,
    pub m: Mat,
    pub v: Mat,
    /// Whether decoupled weight decay applies (off for biases and scalars).
    pub decay: bool,
}

impl Param {
    pub fn new(value: Mat, decay: bool) -> Self {
        let (r, c) = (value.rows, value.cols);
        Param {
            value,
            grad: Mat::zeros(r, c),
            m: Mat::zeros(r, c),
            v: Mat::zeros(r, c),
            decay,
        }
    }

    pub fn scalar(x: f64, decay: bool) -> Self {
        Param::new(Mat::from_vec(1, 1, vec![x]).unwrap(), decay)
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn kaiming_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut SeedRng) -> Mat {
    let bound = libm::sqrt(1.0 / fan_in.max(1) as f64);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Mat::from_vec(rows, cols, data).unwrap()
}

/// Fully connected layer, `y = x·Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    /// out_dim × in_dim
    pub w: Param,
    /// 1 × out_dim
    pub b: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SeedRng) -> Self {
        Linear {
            w: Param::new(kaiming_uniform(out_dim, in_dim, in_dim, rng), true),
            b: Param::new(Mat::zeros(1, out_dim), false),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.rows
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul_nt(&self.w.value);
        for i in 0..y.rows {
            let row = y.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.b.value.data[j];
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns d_x.
    pub fn backward(&mut self, x: &Mat, d_out: &Mat) -> Mat {
        self.w.grad.add_scaled(&d_out.matmul_tn(x), 1.0);
        for i in 0..d_out.rows {
            for j in 0..d_out.cols {
                self.b.grad.data[j] += d_out.at(i, j);
            }
        }
        d_out.matmul(&self.w.value)
    }
}

/// NHWC activation tensor.
#[derive(Debug, Clone)]
pub struct Feat4 {
    pub data: Vec<f64>,
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Feat4 {
    pub fn zeros(b: usize, h: usize, w: usize, c: usize) -> Self {
        Feat4 {
            data: vec![0.0; b * h * w * c],
            b,
            h,
            w,
            c,
        }
    }

    #[inline]
    pub fn idx(&self, bi: usize, y: usize, x: usize, ci: usize) -> usize {
        ((bi * self.h + y) * self.w + x) * self.c + ci
    }
}

/// 3×3-style convolution via im2col; stride and same-padding configurable.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// out_c × (k·k·in_c)
    pub w: Param,
    /// 1 × out_c
    pub b: Param,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut SeedRng) -> Self {
        let fan_in = in_c * k * k;
        Conv2d {
            w: Param::new(kaiming_uniform(out_c, fan_in, fan_in, rng), true),
            b: Param::new(Mat::zeros(1, out_c), false),
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Patch matrix of shape (b·oh·ow) × (k·k·in_c).
    pub fn im2col(&self, x: &Feat4) -> Mat {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let cols = self.k * self.k * self.in_c;
        let mut out = Mat::zeros(x.b * oh * ow, cols);
        for bi in 0..x.b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (bi * oh + oy) * ow + ox;
                    let dst = out.row_mut(row);
                    let mut d = 0;
                    for ky in 0..self.k {
                        let y = (oy * self.stride + ky) as isize - self.pad as isize;
                        for kx in 0..self.k {
                            let xx = (ox * self.stride + kx) as isize - self.pad as isize;
                            if y >= 0 && (y as usize) < x.h && xx >= 0 && (xx as usize) < x.w {
                                let src = x.idx(bi, y as usize, xx as usize, 0);
                                dst[d..d + self.in_c]
                                    .copy_from_slice(&x.data[src..src + self.in_c]);
                            }
                            d += self.in_c;
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns (pre-activation output, cached patch matrix).
    pub fn forward(&self, x: &Feat4) -> (Feat4, Mat) {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let cols = self.im2col(x);
        let mut y = cols.matmul_nt(&self.w.value);
        for i in 0..y.rows {
            let row = y.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.b.value.data[j];
            }
        }
        let out = Feat4 {
            data: y.data,
            b: x.b,
            h: oh,
            w: ow,
            c: self.out_c,
        };
        (out, cols)
    }

    /// Accumulates parameter gradients and returns d_x (NHWC, input shape).
    pub fn backward(&mut self, x_shape: (usize, usize, usize), cols: &Mat, d_out: &Feat4) -> Feat4 {
        let (b, h, w) = x_shape;
        let d_mat = Mat {
            rows: d_out.b * d_out.h * d_out.w,
            cols: d_out.c,
            data: d_out.data.clone(),
        };
        self.w.grad.add_scaled(&d_mat.matmul_tn(cols), 1.0);
        for i in 0..d_mat.rows {
            for j in 0..d_mat.cols {
                self.b.grad.data[j] += d_mat.at(i, j);
            }
        }
        let d_cols = d_mat.matmul(&self.w.value);
        // col2im scatter-add
        let mut d_x = Feat4::zeros(b, h, w, self.in_c);
        let (oh, ow) = (d_out.h, d_out.w);
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (bi * oh + oy) * ow + ox;
                    let src = d_cols.row(row);
                    let mut s = 0;
                    for ky in 0..self.k {
                        let y = (oy * self.stride + ky) as isize - self.pad as isize;
                        for kx in 0..self.k {
                            let xx = (ox * self.stride + kx) as isize - self.pad as isize;
                            if y >= 0 && (y as usize) < h && xx >= 0 && (xx as usize) < w {
                                let dst = d_x.idx(bi, y as usize, xx as usize, 0);
                                for ci in 0..self.in_c {
                                    d_x.data[dst + ci] += src[s + ci];
                                }
                            }
                            s += self.in_c;
                        }
                    }
                }
            }
        }
        d_x
    }
}

pub fn relu_inplace(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Backward of ReLU given the post-activation output.
pub fn relu_backward_inplace(d: &mut [f64], out: &[f64]) {
    for (g, &o) in d.iter_mut().zip(out.iter()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn tanh_inplace(xs: &mut [f64]) {
    for x in xs {
        *x = libm::tanh(*x);
    }
}

/// Backward of tanh given the post-activation output.
pub fn tanh_backward_inplace(d: &mut [f64], out: &[f64]) {
    for (g, &o) in d.iter_mut().zip(out.iter()) {
        *g *= 1.0 - o * o;
    }
}

/// Global average pool NHWC → batch × channels.
pub fn global_avg_pool(x: &Feat4) -> Mat {
    let mut out = Mat::zeros(x.b, x.c);
    let area = (x.h * x.w) as f64;
    for bi in 0..x.b {
        for y in 0..x.h {
            for xx in 0..x.w {
                let src = x.idx(bi, y, xx, 0);
                let dst = &mut out.data[bi * x.c..(bi + 1) * x.c];
                for ci in 0..x.c {
                    dst[ci] += x.data[src + ci];
                }
            }
        }
    }
    out.scale(1.0 / area);
    out
}

pub fn global_avg_pool_backward(d_out: &Mat, h: usize, w: usize) -> Feat4 {
    let mut d_x = Feat4::zeros(d_out.rows, h, w, d_out.cols);
    let inv_area = 1.0 / (h * w) as f64;
    for bi in 0..d_out.rows {
        for y in 0..h {
            for xx in 0..w {
                let dst = d_x.idx(bi, y, xx, 0);
                for ci in 0..d_out.cols {
                    d_x.data[dst + ci] = d_out.at(bi, ci) * inv_area;
                }
            }
        }
    }
    d_x
}
