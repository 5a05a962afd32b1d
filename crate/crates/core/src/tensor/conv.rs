//! 2D convolution (cross-correlation) with zero padding.

use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// input [N,Cin,H,W] * kernel [Cout,Cin,kh,kw] + bias [Cout]
    /// -> [N,Cout,(H+2p-kh)/s+1,(W+2p-kw)/s+1].
    pub fn conv2d(&self, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let is = self.shape();
        let ks = kernel.shape();
        if is.len() != 4 {
            return Err(Error::shape("conv2d", format!("input must be NCHW, got {:?}", is)));
        }
        if ks.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be [Cout,Cin,kh,kw], got {:?}", ks),
            ));
        }
        let (n, cin, h, w) = (is[0], is[1], is[2], is[3]);
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if cin != kcin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", cin, kcin),
            ));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", bias.shape(), cout),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    kh,
                    kw,
                    h + 2 * pad,
                    w + 2 * pad
                ),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let mut values = vec![0.0; n * cout * oh * ow];
        self.with_values(|inp| {
            kernel.with_values(|ker| {
                bias.with_values(|b| {
                    for ni in 0..n {
                        for co in 0..cout {
                            let kbase = co * cin * kh * kw;
                            let obase = (ni * cout + co) * oh * ow;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut acc = b[co];
                                    for ci in 0..cin {
                                        let ibase = (ni * cin + ci) * h * w;
                                        let kcbase = kbase + ci * kh * kw;
                                        for ky in 0..kh {
                                            let iy = (oy * stride + ky) as isize - pad as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            let irow = ibase + iy as usize * w;
                                            let krow = kcbase + ky * kw;
                                            for kx in 0..kw {
                                                let ix = (ox * stride + kx) as isize - pad as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                acc += inp[irow + ix as usize] * ker[krow + kx];
                                            }
                                        }
                                    }
                                    values[obase + oy * ow + ox] = acc;
                                }
                            }
                        }
                    }
                })
            })
        });

        let (p_in, p_ker, p_bias) = (self.clone(), kernel.clone(), bias.clone());
        Ok(Tensor::from_op(
            vec![n, cout, oh, ow],
            values,
            vec![self.clone(), kernel.clone(), bias.clone()],
            Box::new(move |g| {
                let mut g_in = vec![0.0; n * cin * h * w];
                let mut g_ker = vec![0.0; cout * cin * kh * kw];
                let mut g_bias = vec![0.0; cout];
                p_in.with_values(|inp| {
                    p_ker.with_values(|ker| {
                        for ni in 0..n {
                            for co in 0..cout {
                                let kbase = co * cin * kh * kw;
                                let obase = (ni * cout + co) * oh * ow;
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let go = g[obase + oy * ow + ox];
                                        if go == 0.0 {
                                            continue;
                                        }
                                        g_bias[co] += go;
                                        for ci in 0..cin {
                                            let ibase = (ni * cin + ci) * h * w;
                                            let kcbase = kbase + ci * kh * kw;
                                            for ky in 0..kh {
                                                let iy = (oy * stride + ky) as isize - pad as isize;
                                                if iy < 0 || iy >= h as isize {
                                                    continue;
                                                }
                                                let irow = ibase + iy as usize * w;
                                                let krow = kcbase + ky * kw;
                                                for kx in 0..kw {
                                                    let ix =
                                                        (ox * stride + kx) as isize - pad as isize;
                                                    if ix < 0 || ix >= w as isize {
                                                        continue;
                                                    }
                                                    g_in[irow + ix as usize] += go * ker[krow + kx];
                                                    g_ker[krow + kx] += go * inp[irow + ix as usize];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    })
                });
                p_in.accumulate_grad(&g_in);
                p_ker.accumulate_grad(&g_ker);
                p_bias.accumulate_grad(&g_bias);
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec(), true).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = x.conv2d(&k, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let x = t(&[1, 1, 2, 2], &[1.0; 4]);
        let k = t(&[1, 1, 2, 2], &[1.0; 4]);
        let b = t(&[1], &[0.0]);
        let y = x.conv2d(&k, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![4.0]);
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::zeros(&[1, 1, 7, 9]);
        let k = Tensor::zeros(&[2, 1, 3, 3]);
        let b = Tensor::zeros(&[2]);
        let y = x.conv2d(&k, &b, 2, 1).unwrap();
        // (7+2-3)/2+1 = 4, (9+2-3)/2+1 = 5
        assert_eq!(y.shape(), &[1, 2, 4, 5]);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(x.conv2d(&k, &b, 1, 1).is_err());
    }

    #[test]
    fn rejects_zero_stride() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(x.conv2d(&k, &b, 0, 1).is_err());
    }

    #[test]
    fn rejects_kernel_larger_than_padded_input() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        let b = Tensor::zeros(&[1]);
        assert!(x.conv2d(&k, &b, 1, 1).is_err());
    }

    #[test]
    fn bias_reaches_every_output() {
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        let k = Tensor::zeros(&[2, 1, 3, 3]);
        let b = t(&[2], &[0.5, -1.5]);
        let y = x.conv2d(&k, &b, 1, 1).unwrap();
        let v = y.to_vec();
        assert!(v[..9].iter().all(|&a| a == 0.5));
        assert!(v[9..].iter().all(|&a| a == -1.5));
    }
}
