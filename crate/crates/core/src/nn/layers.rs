use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamMap;
use crate::tensor::{gemm, Tensor};

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// `y` is the forward output; the mask is `y > 0`.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Per-channel learnable scale and shift on NCHW input.
///
/// Stands in for inference-mode batch norm in the ResNet-shaped backbone.
#[derive(Clone, Debug)]
pub struct ChannelAffine {
    pub scale: String,
    pub shift: String,
    pub channels: usize,
}

impl ChannelAffine {
    pub fn new(prefix: &str, channels: usize) -> Self {
        ChannelAffine {
            scale: format!("{prefix}.scale"),
            shift: format!("{prefix}.shift"),
            channels,
        }
    }

    pub fn init(&self, params: &mut ParamMap, scale: f64) {
        let mut s = Tensor::zeros(&[self.channels]);
        s.fill(scale);
        params.insert(self.scale.clone(), s);
        params.insert(self.shift.clone(), Tensor::zeros(&[self.channels]));
    }

    pub fn forward(&self, params: &ParamMap, x: &Tensor) -> Result<Tensor> {
        let (n, c, plane) = nchw(x)?;
        if c != self.channels {
            return Err(Error::Config(format!(
                "affine `{}` expects {} channels, got {c}",
                self.scale, self.channels
            )));
        }
        let s = params.get(&self.scale)?.data();
        let b = params.get(&self.shift)?.data();
        let mut y = x.clone();
        for (idx, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let ch = idx % c;
            chunk.iter_mut().for_each(|v| *v = *v * s[ch] + b[ch]);
        }
        debug_assert_eq!(y.numel(), n * c * plane);
        Ok(y)
    }

    pub fn backward(
        &self,
        params: &ParamMap,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut ParamMap,
    ) -> Result<Tensor> {
        let (_, c, plane) = nchw(x)?;
        let s = params.get(&self.scale)?.data().to_vec();
        let mut ds = vec![0.0; c];
        let mut db = vec![0.0; c];
        let mut dx = dy.clone();
        for (idx, (gchunk, xchunk)) in dx
            .data_mut()
            .chunks_mut(plane)
            .zip(x.data().chunks(plane))
            .enumerate()
        {
            let ch = idx % c;
            for (g, xv) in gchunk.iter_mut().zip(xchunk) {
                ds[ch] += *g * xv;
                db[ch] += *g;
                *g *= s[ch];
            }
        }
        accumulate(grads.get_mut(&self.scale)?, &ds);
        accumulate(grads.get_mut(&self.shift)?, &db);
        Ok(dx)
    }
}

fn accumulate(t: &mut Tensor, g: &[f64]) {
    t.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

fn nchw(x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Config(format!("expected NCHW tensor, got {s:?}")));
    }
    Ok((s[0], s[1], s[2] * s[3]))
}

/// Max pooling with square window; ties resolve to the first position.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
        let (n, c, _) = nchw(x)?;
        let (h, w) = (x.dim(2), x.dim(3));
        let (ho, wo) = (self.output_size(h), self.output_size(w));
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut argmax = vec![0; n * c * ho * wo];
        for nc in 0..n * c {
            let src = &x.data()[nc * h * w..(nc + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = nc * ho * wo + oy * wo + ox;
                    out.data_mut()[o] = best;
                    argmax[o] = nc * h * w + best_idx;
                }
            }
        }
        Ok((
            out,
            MaxPoolCache {
                argmax,
                in_shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn backward(&self, cache: &MaxPoolCache, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(&cache.in_shape);
        for (g, &src) in dy.data().iter().zip(&cache.argmax) {
            dx.data_mut()[src] += g;
        }
        dx
    }
}

/// Fully connected layer on row-major `N x in` matrices.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_features,
            out_features,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamMap, rng: &mut R) {
        let std = (2.0 / self.in_features as f64).sqrt();
        params.insert(
            self.weight.clone(),
            Tensor::randn(&[self.out_features, self.in_features], std, rng),
        );
        params.insert(self.bias.clone(), Tensor::zeros(&[self.out_features]));
    }

    pub fn forward(&self, params: &ParamMap, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        if x.len() != rows * self.in_features {
            return Err(Error::Config(format!(
                "linear `{}` expects {} inputs per row",
                self.weight, self.in_features
            )));
        }
        let w = params.get(&self.weight)?;
        let b = params.get(&self.bias)?;
        let mut y = Vec::with_capacity(rows * self.out_features);
        for _ in 0..rows {
            y.extend_from_slice(b.data());
        }
        gemm(
            rows,
            self.in_features,
            self.out_features,
            1.0,
            x,
            false,
            w.data(),
            true,
            1.0,
            &mut y,
        );
        Ok(y)
    }

    pub fn backward(
        &self,
        params: &ParamMap,
        x: &[f64],
        dy: &[f64],
        rows: usize,
        grads: &mut ParamMap,
    ) -> Result<Vec<f64>> {
        let w = params.get(&self.weight)?;
        gemm(
            self.out_features,
            rows,
            self.in_features,
            1.0,
            dy,
            true,
            x,
            false,
            1.0,
            grads.get_mut(&self.weight)?.data_mut(),
        );
        let db = grads.get_mut(&self.bias)?;
        for row in dy.chunks(self.out_features) {
            accumulate(db, row);
        }
        let mut dx = vec![0.0; rows * self.in_features];
        gemm(
            rows,
            self.out_features,
            self.in_features,
            1.0,
            dy,
            false,
            w.data(),
            false,
            0.0,
            &mut dx,
        );
        Ok(dx)
    }
}
