use std::ops::{Add, Mul, Neg, Sub};

use super::{grad_enabled, Var};
use crate::tensor::{self, numel, ConvGeom, Tensor};

fn unary(
    x: &Var,
    value: Tensor,
    backward: impl Fn(&Var, &Var) -> Var + 'static,
) -> Var {
    Var::from_op(value, vec![x.clone()], move |g, p, _| {
        vec![Some(backward(g, &p[0]))]
    })
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().add(other.value()),
            vec![self.clone(), other.clone()],
            |g, _, n| vec![n[0].then(|| g.clone()), n[1].then(|| g.clone())],
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().sub(other.value()),
            vec![self.clone(), other.clone()],
            |g, _, n| vec![n[0].then(|| g.clone()), n[1].then(|| g.neg())],
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().mul(other.value()),
            vec![self.clone(), other.clone()],
            |g, p, n| vec![n[0].then(|| g.mul(&p[1])), n[1].then(|| g.mul(&p[0]))],
        )
    }

    pub fn div(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a / b),
            vec![self.clone(), other.clone()],
            |g, p, n| {
                vec![
                    n[0].then(|| g.div(&p[1])),
                    n[1].then(|| g.mul(&p[0]).div(&p[1].mul(&p[1])).neg()),
                ]
            },
        )
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&self, c: &Tensor) -> Var {
        let c2 = c.clone();
        unary(self, self.value().mul(c), move |g, _| g.mul_const(&c2))
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var {
        unary(self, self.value().scale(c), move |g, _| g.scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        unary(self, self.value().map(|v| v + c), |g, _| g.clone())
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn sqrt(&self) -> Var {
        let y = self.value().map(f64::sqrt);
        let y2 = y.clone();
        unary(self, y, move |g, x| {
            if grad_enabled() {
                g.div(&x.sqrt().scale(2.0))
            } else {
                g.mul_const(&y2.map(|v| 0.5 / v))
            }
        })
    }

    pub fn tanh(&self) -> Var {
        let y = self.value().map(f64::tanh);
        let y2 = y.clone();
        unary(self, y, move |g, x| {
            if grad_enabled() {
                let t = x.tanh();
                g.mul(&t.mul(&t).neg().add_scalar(1.0))
            } else {
                g.mul_const(&y2.map(|t| 1.0 - t * t))
            }
        })
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().map(|v| if v > 0.0 { 1.0 } else { slope });
        let y = self.value().mul(&mask);
        unary(self, y, move |g, _| g.mul_const(&mask))
    }

    pub fn abs(&self) -> Var {
        let sign = self.value().map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        let y = self.value().map(f64::abs);
        unary(self, y, move |g, _| g.mul_const(&sign))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var {
        let shape = self.shape().to_vec();
        unary(self, Tensor::scalar(self.value().sum()), move |g, _| {
            g.reshape(&vec![1; shape.len()]).broadcast_to(&shape)
        })
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let orig = self.shape().to_vec();
        unary(self, self.value().reshape(shape), move |g, _| g.reshape(&orig))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let orig = self.shape().to_vec();
        unary(self, tensor::broadcast_to(self.value(), shape), move |g, _| {
            g.sum_to(&orig)
        })
    }

    /// Sums down to a broadcast-compatible shape of equal rank.
    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let orig = self.shape().to_vec();
        unary(self, tensor::sum_to(self.value(), shape), move |g, _| {
            g.broadcast_to(&orig)
        })
    }

    /// Adds a per-channel bias of shape [C] to an NCHW tensor.
    pub fn add_channel_bias(&self, bias: &Var) -> Var {
        let c = bias.shape()[0];
        self.add(&bias.reshape(&[1, c, 1, 1]).broadcast_to(self.shape()))
    }

    pub fn conv2d(&self, weight: &Var, geom: ConvGeom) -> Var {
        let x_hw = (self.shape()[2], self.shape()[3]);
        let k_hw = (weight.shape()[2], weight.shape()[3]);
        Var::from_op(
            tensor::conv2d(self.value(), weight.value(), geom),
            vec![self.clone(), weight.clone()],
            move |g, p, n| {
                vec![
                    n[0].then(|| g.conv2d_input_grad(&p[1], geom, x_hw)),
                    n[1].then(|| p[0].conv2d_weight_grad(g, geom, k_hw)),
                ]
            },
        )
    }

    /// Transposed convolution of `self` (the output-gradient role) with
    /// `weight` [Cin, Cout, kh, kw], producing spatial size `out_hw`.
    pub fn conv2d_input_grad(&self, weight: &Var, geom: ConvGeom, out_hw: (usize, usize)) -> Var {
        let k_hw = (weight.shape()[2], weight.shape()[3]);
        Var::from_op(
            tensor::conv2d_input_grad(self.value(), weight.value(), geom, out_hw),
            vec![self.clone(), weight.clone()],
            move |g, p, n| {
                vec![
                    n[0].then(|| g.conv2d(&p[1], geom)),
                    n[1].then(|| g.conv2d_weight_grad(&p[0], geom, k_hw)),
                ]
            },
        )
    }

    /// Kernel gradient of a convolution of `self` that produced output
    /// gradient `gy`.
    pub fn conv2d_weight_grad(&self, gy: &Var, geom: ConvGeom, k_hw: (usize, usize)) -> Var {
        let x_hw = (self.shape()[2], self.shape()[3]);
        Var::from_op(
            tensor::conv2d_weight_grad(self.value(), gy.value(), geom, k_hw),
            vec![self.clone(), gy.clone()],
            move |g, p, n| {
                vec![
                    n[0].then(|| p[1].conv2d_input_grad(g, geom, x_hw)),
                    n[1].then(|| p[0].conv2d(g, geom)),
                ]
            },
        )
    }

    /// Transposed convolution with PyTorch kernel layout [Cin, Cout, k, k].
    pub fn conv_transpose2d(&self, weight: &Var, geom: ConvGeom) -> Var {
        let (h, w) = (self.shape()[2], self.shape()[3]);
        let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
        let out_h = (h - 1) * geom.stride + kh - 2 * geom.pad;
        let out_w = (w - 1) * geom.stride + kw - 2 * geom.pad;
        self.conv2d_input_grad(weight, geom, (out_h, out_w))
    }

    pub fn bmm(&self, other: &Var, ta: bool, tb: bool) -> Var {
        Var::from_op(
            tensor::bmm(self.value(), other.value(), ta, tb),
            vec![self.clone(), other.clone()],
            move |g, p, n| {
                let (a, b) = (&p[0], &p[1]);
                let (ga, gb) = match (ta, tb) {
                    (false, false) => (g.bmm(b, false, true), a.bmm(g, true, false)),
                    (true, false) => (b.bmm(g, false, true), a.bmm(g, false, false)),
                    (false, true) => (g.bmm(b, false, false), g.bmm(a, true, false)),
                    (true, true) => (b.bmm(g, true, true), g.bmm(a, true, true)),
                };
                vec![n[0].then_some(ga), n[1].then_some(gb)]
            },
        )
    }

    pub fn max_pool2d(&self, kernel: usize, stride: usize) -> Var {
        let (idx, shape) = tensor::max_pool2d_indices(self.value(), kernel, stride);
        self.gather(std::rc::Rc::new(idx), &shape)
    }

    fn gather(&self, idx: std::rc::Rc<Vec<usize>>, shape: &[usize]) -> Var {
        let in_shape = self.shape().to_vec();
        let value = tensor::gather(self.value(), &idx, shape);
        unary(self, value, move |g, _| g.scatter_add(idx.clone(), &in_shape))
    }

    fn scatter_add(&self, idx: std::rc::Rc<Vec<usize>>, shape: &[usize]) -> Var {
        let g_shape = self.shape().to_vec();
        let value = tensor::scatter_add(self.value(), &idx, shape);
        unary(self, value, move |g, _| g.gather(idx.clone(), &g_shape))
    }

    pub fn cat(items: &[&Var], axis: usize) -> Var {
        let values: Vec<&Tensor> = items.iter().map(|v| v.value()).collect();
        let lens: Vec<usize> = items.iter().map(|v| v.shape()[axis]).collect();
        Var::from_op(
            tensor::concat(&values, axis),
            items.iter().map(|&v| v.clone()).collect(),
            move |g, _, n| {
                let mut start = 0;
                lens.iter()
                    .zip(n)
                    .map(|(&len, &need)| {
                        let out = need.then(|| g.narrow(axis, start, len));
                        start += len;
                        out
                    })
                    .collect()
            },
        )
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let total = self.shape()[axis];
        unary(
            self,
            tensor::narrow(self.value(), axis, start, len),
            move |g, _| g.pad_axis(axis, start, total),
        )
    }

    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Var {
        let len = self.shape()[axis];
        unary(
            self,
            tensor::pad_axis(self.value(), axis, start, total),
            move |g, _| g.narrow(axis, start, len),
        )
    }

    /// Per-sample sum over all non-leading axes: [N, ...] → [N].
    pub fn sum_per_sample(&self) -> Var {
        let n = self.shape()[0];
        let inner = numel(&self.shape()[1..]);
        self.reshape(&[n, inner]).sum_to(&[n, 1]).reshape(&[n])
    }

    /// Fused instance normalization over NCHW with per-channel affine
    /// parameters. Its input gradient is a constant under `create_graph`.
    pub fn instance_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let (n, c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let hw = h * w;
        let x = self.value().data();
        let gm = gamma.value().data();
        let bt = beta.value().data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; n * c];
        for plane in 0..n * c {
            let ch = plane % c;
            let xs = &x[plane * hw..(plane + 1) * hw];
            let mean = xs.iter().sum::<f64>() / hw as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[plane] = is;
            for i in 0..hw {
                let xh = (xs[i] - mean) * is;
                xhat[plane * hw + i] = xh;
                out[plane * hw + i] = gm[ch] * xh + bt[ch];
            }
        }
        let shape = self.shape().to_vec();
        let xhat = Tensor::from_vec(shape.clone(), xhat);
        Var::from_op(
            Tensor::from_vec(shape.clone(), out),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, p, need| {
                let gd = g.value().data();
                let xh = xhat.data();
                let gm = p[1].value().data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; gd.len()];
                for plane in 0..n * c {
                    let ch = plane % c;
                    let gs = &gd[plane * hw..(plane + 1) * hw];
                    let xs = &xh[plane * hw..(plane + 1) * hw];
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for i in 0..hw {
                        sum_g += gs[i];
                        sum_gx += gs[i] * xs[i];
                    }
                    dbeta[ch] += sum_g;
                    dgamma[ch] += sum_gx;
                    if need[0] {
                        let k = gm[ch] * inv_std[plane];
                        let mg = sum_g / hw as f64;
                        let mgx = sum_gx / hw as f64;
                        for i in 0..hw {
                            dx[plane * hw + i] = k * (gs[i] - mg - xs[i] * mgx);
                        }
                    }
                }
                vec![
                    need[0].then(|| Var::constant(Tensor::from_vec(shape.clone(), dx))),
                    need[1].then(|| Var::constant(Tensor::from_vec(vec![c], dgamma))),
                    need[2].then(|| Var::constant(Tensor::from_vec(vec![c], dbeta))),
                ]
            },
        )
    }
}

impl Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        Var::add(self, rhs)
    }
}

impl Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        Var::sub(self, rhs)
    }
}

impl Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        Var::mul(self, rhs)
    }
}

impl Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(self)
    }
}
