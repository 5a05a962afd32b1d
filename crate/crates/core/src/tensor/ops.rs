//! Elementwise, reduction and shape operations with their backprop rules.

use super::{strides, Tensor};
use crate::error::{Error, Result};

/// Inputs to `log` are clamped to this floor in both the forward pass and
/// the gradient denominator, so saturated sigmoid outputs never produce
/// infinities.
pub const LOG_CLAMP: f64 = 1e-12;

impl Tensor {
    fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("add", other)?;
        let values = self.with_values(|a| {
            other.with_values(|b| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>())
        });
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                pb.accumulate_grad(g);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("sub", other)?;
        let values = self.with_values(|a| {
            other.with_values(|b| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
        });
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                pb.accumulate_grad(&neg);
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("mul", other)?;
        let values = self.with_values(|a| {
            other.with_values(|b| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
        });
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = pb.with_values(|b| g.iter().zip(b).map(|(gi, bi)| gi * bi).collect::<Vec<_>>());
                let gb = pa.with_values(|a| g.iter().zip(a).map(|(gi, ai)| gi * ai).collect::<Vec<_>>());
                pa.accumulate_grad(&ga);
                pb.accumulate_grad(&gb);
            }),
        ))
    }

    /// scale * x + offset, elementwise against constants.
    pub fn affine(&self, scale: f64, offset: f64) -> Tensor {
        let values = self.with_values(|a| a.iter().map(|x| scale * x + offset).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let gp: Vec<f64> = g.iter().map(|gi| gi * scale).collect();
                p.accumulate_grad(&gp);
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.affine(1.0, c)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.affine(c, 0.0)
    }

    /// 1 - x.
    pub fn one_minus(&self) -> Tensor {
        self.affine(-1.0, 1.0)
    }

    pub fn abs(&self) -> Tensor {
        let values = self.with_values(|a| a.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let gp = p.with_values(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, x)| gi * if *x > 0.0 { 1.0 } else if *x < 0.0 { -1.0 } else { 0.0 })
                        .collect::<Vec<_>>()
                });
                p.accumulate_grad(&gp);
            }),
        )
    }

    /// Natural log with the input clamped to `LOG_CLAMP` in forward and in
    /// the gradient denominator.
    pub fn log_clamped(&self) -> Tensor {
        let values =
            self.with_values(|a| a.iter().map(|x| x.max(LOG_CLAMP).ln()).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let gp = p.with_values(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, x)| gi / x.max(LOG_CLAMP))
                        .collect::<Vec<_>>()
                });
                p.accumulate_grad(&gp);
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let values = self.with_values(|a| a.iter().map(|x| x.tanh()).collect::<Vec<_>>());
        let out = values.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let gp: Vec<f64> = g
                    .iter()
                    .zip(&out)
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                p.accumulate_grad(&gp);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let values = self.with_values(|a| {
            a.iter()
                .map(|x| 1.0 / (1.0 + (-x).exp()))
                .collect::<Vec<_>>()
        });
        let out = values.clone();
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let gp: Vec<f64> = g
                    .iter()
                    .zip(&out)
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                p.accumulate_grad(&gp);
            }),
        )
    }

    /// max(x, slope*x) for slope in (0,1); the gradient at exactly 0 takes
    /// the negative branch.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let values = self.with_values(|a| {
            a.iter()
                .map(|x| if *x > 0.0 { *x } else { slope * x })
                .collect::<Vec<_>>()
        });
        let p = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let gp = p.with_values(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, x)| gi * if *x > 0.0 { 1.0 } else { slope })
                        .collect::<Vec<_>>()
                });
                p.accumulate_grad(&gp);
            }),
        )
    }

    fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if self.is_empty() {
            return Err(Error::invalid("reduce", "empty reduction"));
        }
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        for &a in &axes {
            if a >= shape.len() {
                return Err(Error::invalid(
                    "reduce",
                    format!("axis {} out of range for shape {:?}", a, shape),
                ));
            }
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let scale = match op {
            ReduceOp::Sum => 1.0,
            ReduceOp::Mean => 1.0 / count as f64,
        };

        // Map each input element to its output slot: stride 0 on reduced axes.
        let in_strides = strides(&shape);
        let out_strides_full = {
            let kept: Vec<usize> = (0..shape.len()).filter(|i| !axes.contains(i)).collect();
            let os = strides(
                &kept
                    .iter()
                    .map(|&i| shape[i])
                    .collect::<Vec<_>>(),
            );
            let mut full = vec![0usize; shape.len()];
            for (k, &dim) in kept.iter().enumerate() {
                full[dim] = os[k];
            }
            full
        };

        let out_len: usize = out_shape.iter().product();
        let map_index = move |flat: usize| -> usize {
            let mut rem = flat;
            let mut out = 0usize;
            for d in 0..in_strides.len() {
                let idx = rem / in_strides[d];
                rem %= in_strides[d];
                out += idx * out_strides_full[d];
            }
            out
        };

        let mut values = vec![0.0; out_len];
        self.with_values(|a| {
            for (flat, &x) in a.iter().enumerate() {
                values[map_index(flat)] += x;
            }
        });
        if let ReduceOp::Mean = op {
            for v in &mut values {
                *v *= scale;
            }
        }

        let p = self.clone();
        let in_len = self.len();
        Ok(Tensor::from_op(
            out_shape,
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gp = vec![0.0; in_len];
                for (flat, slot) in gp.iter_mut().enumerate() {
                    *slot = g[map_index(flat)] * scale;
                }
                p.accumulate_grad(&gp);
            }),
        ))
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(ReduceOp::Sum, axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(ReduceOp::Mean, axes)
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceOp::Sum, &all)
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceOp::Mean, &all)
    }

    /// Nearest-neighbor 2x upsampling of the two trailing axes of an NCHW
    /// tensor. The gradient of each source pixel is the sum over its 2x2
    /// output block.
    pub fn upsample2x(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("upsample2x", format!("expected NCHW, got {:?}", s)));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h == 0 || w == 0 {
            return Err(Error::shape("upsample2x", "spatial dims must be >= 1".to_string()));
        }
        let (oh, ow) = (2 * h, 2 * w);
        let mut values = vec![0.0; n * c * oh * ow];
        self.with_values(|a| {
            for nc in 0..n * c {
                let src = &a[nc * h * w..(nc + 1) * h * w];
                let dst = &mut values[nc * oh * ow..(nc + 1) * oh * ow];
                for y in 0..oh {
                    for x in 0..ow {
                        dst[y * ow + x] = src[(y / 2) * w + x / 2];
                    }
                }
            }
        });
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gp = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    let src = &mut gp[nc * h * w..(nc + 1) * h * w];
                    let dst = &g[nc * oh * ow..(nc + 1) * oh * ow];
                    for y in 0..oh {
                        for x in 0..ow {
                            src[(y / 2) * w + x / 2] += dst[y * ow + x];
                        }
                    }
                }
                p.accumulate_grad(&gp);
            }),
        ))
    }

    /// Zero-pad the bottom/right of the two trailing axes of an NCHW tensor.
    pub fn pad2d(&self, extra_h: usize, extra_w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("pad2d", format!("expected NCHW, got {:?}", s)));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h + extra_h, w + extra_w);
        let mut values = vec![0.0; n * c * oh * ow];
        self.with_values(|a| {
            for nc in 0..n * c {
                for y in 0..h {
                    let src = &a[nc * h * w + y * w..nc * h * w + (y + 1) * w];
                    values[nc * oh * ow + y * ow..nc * oh * ow + y * ow + w].copy_from_slice(src);
                }
            }
        });
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gp = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    for y in 0..h {
                        for x in 0..w {
                            gp[nc * h * w + y * w + x] = g[nc * oh * ow + y * ow + x];
                        }
                    }
                }
                p.accumulate_grad(&gp);
            }),
        ))
    }

    /// Crop a window out of the two trailing axes of an NCHW tensor.
    pub fn crop2d(&self, y0: usize, x0: usize, out_h: usize, out_w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("crop2d", format!("expected NCHW, got {:?}", s)));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if out_h == 0 || out_w == 0 || y0 + out_h > h || x0 + out_w > w {
            return Err(Error::invalid(
                "crop2d",
                format!("window {}x{}+{}+{} outside {}x{}", out_w, out_h, x0, y0, w, h),
            ));
        }
        let mut values = vec![0.0; n * c * out_h * out_w];
        self.with_values(|a| {
            for nc in 0..n * c {
                for y in 0..out_h {
                    for x in 0..out_w {
                        values[nc * out_h * out_w + y * out_w + x] =
                            a[nc * h * w + (y0 + y) * w + x0 + x];
                    }
                }
            }
        });
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![n, c, out_h, out_w],
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gp = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    for y in 0..out_h {
                        for x in 0..out_w {
                            gp[nc * h * w + (y0 + y) * w + x0 + x] =
                                g[nc * out_h * out_w + y * out_w + x];
                        }
                    }
                }
                p.accumulate_grad(&gp);
            }),
        ))
    }

    /// Select channels [from, to) of an NCHW tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "slice_channels",
                format!("expected NCHW, got {:?}", s),
            ));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if from >= to || to > c {
            return Err(Error::invalid(
                "slice_channels",
                format!("range {from}..{to} invalid for {c} channels"),
            ));
        }
        let oc = to - from;
        let hw = h * w;
        let mut values = vec![0.0; n * oc * hw];
        self.with_values(|a| {
            for ni in 0..n {
                for ci in 0..oc {
                    let src = (ni * c + from + ci) * hw;
                    let dst = (ni * oc + ci) * hw;
                    values[dst..dst + hw].copy_from_slice(&a[src..src + hw]);
                }
            }
        });
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![n, oc, h, w],
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gp = vec![0.0; n * c * hw];
                for ni in 0..n {
                    for ci in 0..oc {
                        let dst = (ni * c + from + ci) * hw;
                        let src = (ni * oc + ci) * hw;
                        gp[dst..dst + hw].copy_from_slice(&g[src..src + hw]);
                    }
                }
                p.accumulate_grad(&gp);
            }),
        ))
    }

    /// Softmax across the channel axis of an NCHW tensor.
    pub fn softmax_channels(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "softmax_channels",
                format!("expected NCHW, got {:?}", s),
            ));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let mut values = vec![0.0; self.len()];
        self.with_values(|a| {
            for ni in 0..n {
                for p in 0..hw {
                    let base = ni * c * hw + p;
                    let mut max = f64::NEG_INFINITY;
                    for ci in 0..c {
                        max = max.max(a[base + ci * hw]);
                    }
                    let mut total = 0.0;
                    for ci in 0..c {
                        let e = (a[base + ci * hw] - max).exp();
                        values[base + ci * hw] = e;
                        total += e;
                    }
                    for ci in 0..c {
                        values[base + ci * hw] /= total;
                    }
                }
            }
        });
        let probs = values.clone();
        let p = self.clone();
        Ok(Tensor::from_op(
            s.to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gp = vec![0.0; g.len()];
                for ni in 0..n {
                    for pix in 0..hw {
                        let base = ni * c * hw + pix;
                        let mut dot = 0.0;
                        for ci in 0..c {
                            dot += g[base + ci * hw] * probs[base + ci * hw];
                        }
                        for ci in 0..c {
                            let idx = base + ci * hw;
                            gp[idx] = probs[idx] * (g[idx] - dot);
                        }
                    }
                }
                p.accumulate_grad(&gp);
            }),
        ))
    }

    /// Per-channel instance normalization over the spatial axes of an NCHW
    /// tensor: (x - mean) / sqrt(var + eps), biased variance.
    pub fn instance_norm(&self, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "instance_norm",
                format!("expected NCHW, got {:?}", s),
            ));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        if hw == 0 {
            return Err(Error::shape("instance_norm", "empty spatial dims".to_string()));
        }
        let mut values = vec![0.0; self.len()];
        let mut inv_std = vec![0.0; n * c];
        self.with_values(|a| {
            for nc in 0..n * c {
                let src = &a[nc * hw..(nc + 1) * hw];
                let mean = src.iter().sum::<f64>() / hw as f64;
                let var = src.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / hw as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[nc] = is;
                for (o, &x) in values[nc * hw..(nc + 1) * hw].iter_mut().zip(src) {
                    *o = (x - mean) * is;
                }
            }
        });
        let normed = values.clone();
        let p = self.clone();
        Ok(Tensor::from_op(
            s.to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gp = vec![0.0; g.len()];
                for nc in 0..n * c {
                    let gs = &g[nc * hw..(nc + 1) * hw];
                    let ys = &normed[nc * hw..(nc + 1) * hw];
                    let g_mean = gs.iter().sum::<f64>() / hw as f64;
                    let gy_mean = gs.iter().zip(ys).map(|(gi, yi)| gi * yi).sum::<f64>() / hw as f64;
                    let is = inv_std[nc];
                    for ((o, &gi), &yi) in gp[nc * hw..(nc + 1) * hw].iter_mut().zip(gs).zip(ys) {
                        *o = (gi - g_mean - yi * gy_mean) * is;
                    }
                }
                p.accumulate_grad(&gp);
            }),
        ))
    }
}

#[derive(Clone, Copy)]
enum ReduceOp {
    Sum,
    Mean,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec(), true).unwrap()
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[3], &[1.0, 2.0, 3.0]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let x = t(&[1], &[-1.0]);
        let y = x.leaky_relu(0.2);
        assert_eq!(y.to_vec(), vec![-0.2]);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let x = t(&[1], &[0.0]);
        assert_eq!(x.tanh().to_vec(), vec![0.0]);
    }

    #[test]
    fn mean_of_four_values() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.mean_all().unwrap().item(), 2.5);
    }

    #[test]
    fn empty_reduction_is_an_error() {
        let x = Tensor::from_vec(&[0], vec![], false).unwrap();
        assert!(x.sum_all().is_err());
        assert!(x.mean_all().is_err());
    }

    #[test]
    fn invalid_axis_rejected() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert!(x.sum_axes(&[2]).is_err());
    }

    #[test]
    fn mean_gradient_distributes_equally() {
        let x = t(&[2], &[1.0, 5.0]);
        x.mean_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn sum_over_middle_axis() {
        // shape [2,2]: rows [1,2] and [3,4]; summing axis 0 -> [4,6]
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = x.sum_axes(&[0]).unwrap();
        assert_eq!(s.shape(), &[2]);
        assert_eq!(s.to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn upsample_single_pixel() {
        let x = t(&[1, 1, 1, 1], &[1.0]);
        let y = x.upsample2x().unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![1.0; 4]);
    }

    #[test]
    fn upsample_gradient_accumulates_block() {
        let x = t(&[1, 1, 1, 1], &[2.0]);
        let y = x.upsample2x().unwrap();
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn upsample_then_mean_pool_is_identity() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let up = x.upsample2x().unwrap();
        let v = up.to_vec();
        // manual 2x2 mean pool
        for y in 0..2 {
            for xx in 0..2 {
                let s = v[(2 * y) * 4 + 2 * xx]
                    + v[(2 * y) * 4 + 2 * xx + 1]
                    + v[(2 * y + 1) * 4 + 2 * xx]
                    + v[(2 * y + 1) * 4 + 2 * xx + 1];
                assert_eq!(s / 4.0, x.to_vec()[y * 2 + xx]);
            }
        }
    }

    #[test]
    fn crop_of_pad_restores_input() {
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let padded = x.pad2d(2, 1).unwrap();
        assert_eq!(padded.shape(), &[1, 1, 4, 4]);
        let back = padded.crop2d(0, 0, 2, 3).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        back.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn crop_out_of_bounds_rejected() {
        let x = t(&[1, 1, 2, 2], &[1.0; 4]);
        assert!(x.crop2d(1, 1, 2, 2).is_err());
    }

    #[test]
    fn softmax_channels_sums_to_one() {
        let x = t(&[1, 3, 1, 2], &[1.0, -2.0, 0.5, 0.1, 3.0, -1.0]);
        let p = x.softmax_channels().unwrap();
        let v = p.to_vec();
        for pix in 0..2 {
            let s: f64 = (0..3).map(|c| v[c * 2 + pix]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_clamp_survives_zero() {
        let x = t(&[1], &[0.0]);
        let y = x.log_clamped();
        assert_eq!(y.item(), LOG_CLAMP.ln());
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0 / LOG_CLAMP]);
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = x.instance_norm(1e-5).unwrap();
        let v = y.to_vec();
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
