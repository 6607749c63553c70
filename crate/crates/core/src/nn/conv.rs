use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamMap;
use crate::tensor::{gemm, Tensor};

/// 2-D convolution over NCHW tensors, lowered to im2col + GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: String,
    pub bias: Option<String>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvCache {
    cols: Vec<Vec<f64>>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Conv2d {
            weight: format!("{prefix}.weight"),
            bias: bias.then(|| format!("{prefix}.bias")),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamMap, rng: &mut R) {
        let std = (2.0 / self.patch_len() as f64).sqrt();
        params.insert(
            self.weight.clone(),
            Tensor::randn(
                &[self.out_channels, self.in_channels, self.kernel, self.kernel],
                std,
                rng,
            ),
        );
        if let Some(b) = &self.bias {
            params.insert(b.clone(), Tensor::zeros(&[self.out_channels]));
        }
    }

    fn im2col(&self, img: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
        let k = self.kernel;
        let plane = ho * wo;
        let mut cols = vec![0.0; self.patch_len() * plane];
        for c in 0..self.in_channels {
            let src = &img[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, ho: usize, wo: usize, img: &mut [f64]) {
        let k = self.kernel;
        let plane = ho * wo;
        for c in 0..self.in_channels {
            let dst = &mut img[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, params: &ParamMap, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::Config(format!(
                "conv `{}` expects N x {} x H x W input, got {shape:?}",
                self.weight, self.in_channels
            )));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Config(format!(
                "conv `{}` input {h}x{w} smaller than kernel",
                self.weight
            )));
        }
        let (ho, wo) = (self.output_size(h), self.output_size(w));
        let weight = params.get(&self.weight)?;
        let bias = match &self.bias {
            Some(b) => Some(params.get(b)?),
            None => None,
        };
        let plane = ho * wo;
        let in_plane = self.in_channels * h * w;
        let mut out = Tensor::zeros(&[n, self.out_channels, ho, wo]);
        let mut cols_all = Vec::with_capacity(n);
        for i in 0..n {
            let cols = self.im2col(&x.data()[i * in_plane..(i + 1) * in_plane], h, w, ho, wo);
            let y = &mut out.data_mut()[i * self.out_channels * plane..(i + 1) * self.out_channels * plane];
            if let Some(b) = bias {
                for (co, bv) in b.data().iter().enumerate() {
                    y[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v = *bv);
                }
            }
            gemm(
                self.out_channels,
                self.patch_len(),
                plane,
                1.0,
                weight.data(),
                false,
                &cols,
                false,
                if bias.is_some() { 1.0 } else { 0.0 },
                y,
            );
            cols_all.push(cols);
        }
        Ok((
            out,
            ConvCache {
                cols: cols_all,
                in_shape: [n, self.in_channels, h, w],
                out_hw: (ho, wo),
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient
    /// when `input_grad` is set.
    pub fn backward(
        &self,
        params: &ParamMap,
        cache: &ConvCache,
        dy: &Tensor,
        grads: &mut ParamMap,
        input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let [n, _, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let plane = ho * wo;
        let weight = params.get(&self.weight)?;
        let out_plane = self.out_channels * plane;
        {
            let dw = grads.get_mut(&self.weight)?;
            for i in 0..n {
                gemm(
                    self.out_channels,
                    plane,
                    self.patch_len(),
                    1.0,
                    &dy.data()[i * out_plane..(i + 1) * out_plane],
                    false,
                    &cache.cols[i],
                    true,
                    1.0,
                    dw.data_mut(),
                );
            }
        }
        if let Some(b) = &self.bias {
            let db = grads.get_mut(b)?;
            for i in 0..n {
                let g = &dy.data()[i * out_plane..(i + 1) * out_plane];
                for (co, d) in db.data_mut().iter_mut().enumerate() {
                    *d += g[co * plane..(co + 1) * plane].iter().sum::<f64>();
                }
            }
        }
        if !input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(&cache.in_shape);
        let in_plane = self.in_channels * h * w;
        let mut dcols = vec![0.0; self.patch_len() * plane];
        for i in 0..n {
            gemm(
                self.patch_len(),
                self.out_channels,
                plane,
                1.0,
                weight.data(),
                true,
                &dy.data()[i * out_plane..(i + 1) * out_plane],
                false,
                0.0,
                &mut dcols,
            );
            self.col2im(
                &dcols,
                h,
                w,
                ho,
                wo,
                &mut dx.data_mut()[i * in_plane..(i + 1) * in_plane],
            );
        }
        Ok(Some(dx))
    }
}
