use rand::Rng;

use super::conv::{Conv2d, ConvCache};
use super::layers::{relu_backward, relu_forward, ChannelAffine, MaxPool2d, MaxPoolCache};
use crate::error::{ensure_finite, Error, Result};
use crate::model::config::{tiny_stride, Backbone, EncoderConfig};
use crate::params::ParamMap;
use crate::tensor::Tensor;

/// Convolutional trunk producing the last-stage feature map in NCHW layout.
///
/// Parameters live under the `encoder.` prefix.
#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<Layer>,
    out_channels: usize,
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(Conv2d),
    Affine(ChannelAffine),
    Relu,
    MaxPool(MaxPool2d),
    Bottleneck(Box<Bottleneck>),
}

enum LayerCache {
    Conv(ConvCache),
    Affine(Tensor),
    Relu(Tensor),
    MaxPool(MaxPoolCache),
    Bottleneck(Box<BottleneckCache>),
}

pub struct EncoderCache {
    caches: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
struct Bottleneck {
    conv1: Conv2d,
    aff1: ChannelAffine,
    conv2: Conv2d,
    aff2: ChannelAffine,
    conv3: Conv2d,
    aff3: ChannelAffine,
    shortcut: Option<(Conv2d, ChannelAffine)>,
}

struct BottleneckCache {
    c1: ConvCache,
    a1_in: Tensor,
    r1: Tensor,
    c2: ConvCache,
    a2_in: Tensor,
    r2: Tensor,
    c3: ConvCache,
    a3_in: Tensor,
    shortcut: Option<(ConvCache, Tensor)>,
    out: Tensor,
}

impl Bottleneck {
    fn new(prefix: &str, cin: usize, mid: usize, stride: usize) -> Self {
        let cout = mid * 4;
        let shortcut = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(&format!("{prefix}.down"), cin, cout, 1, stride, 0, false),
                ChannelAffine::new(&format!("{prefix}.down_aff"), cout),
            )
        });
        Bottleneck {
            conv1: Conv2d::new(&format!("{prefix}.conv1"), cin, mid, 1, 1, 0, false),
            aff1: ChannelAffine::new(&format!("{prefix}.aff1"), mid),
            conv2: Conv2d::new(&format!("{prefix}.conv2"), mid, mid, 3, stride, 1, false),
            aff2: ChannelAffine::new(&format!("{prefix}.aff2"), mid),
            conv3: Conv2d::new(&format!("{prefix}.conv3"), mid, cout, 1, 1, 0, false),
            aff3: ChannelAffine::new(&format!("{prefix}.aff3"), cout),
            shortcut,
        }
    }

    fn init<R: Rng + ?Sized>(&self, params: &mut ParamMap, rng: &mut R) {
        self.conv1.init(params, rng);
        self.aff1.init(params, 1.0);
        self.conv2.init(params, rng);
        self.aff2.init(params, 1.0);
        self.conv3.init(params, rng);
        // Zero-initialised residual branch: each block starts as its shortcut.
        self.aff3.init(params, 0.0);
        if let Some((conv, aff)) = &self.shortcut {
            conv.init(params, rng);
            aff.init(params, 1.0);
        }
    }

    fn forward(&self, params: &ParamMap, x: &Tensor) -> Result<(Tensor, BottleneckCache)> {
        let (h1, c1) = self.conv1.forward(params, x)?;
        let r1 = relu_forward(&self.aff1.forward(params, &h1)?);
        let (h2, c2) = self.conv2.forward(params, &r1)?;
        let r2 = relu_forward(&self.aff2.forward(params, &h2)?);
        let (h3, c3) = self.conv3.forward(params, &r2)?;
        let mut sum = self.aff3.forward(params, &h3)?;
        let shortcut = match &self.shortcut {
            Some((conv, aff)) => {
                let (hs, cs) = conv.forward(params, x)?;
                let s = aff.forward(params, &hs)?;
                add_into(&mut sum, &s);
                Some((cs, hs))
            }
            None => {
                add_into(&mut sum, x);
                None
            }
        };
        let out = relu_forward(&sum);
        Ok((
            out.clone(),
            BottleneckCache {
                c1,
                a1_in: h1,
                r1,
                c2,
                a2_in: h2,
                r2,
                c3,
                a3_in: h3,
                shortcut,
                out,
            },
        ))
    }

    fn backward(
        &self,
        params: &ParamMap,
        cache: &BottleneckCache,
        dy: &Tensor,
        grads: &mut ParamMap,
    ) -> Result<Tensor> {
        let dsum = relu_backward(&cache.out, dy);
        let dh3 = self.aff3.backward(params, &cache.a3_in, &dsum, grads)?;
        let dr2 = self.conv3.backward(params, &cache.c3, &dh3, grads, true)?.unwrap();
        let dh2 = self
            .aff2
            .backward(params, &cache.a2_in, &relu_backward(&cache.r2, &dr2), grads)?;
        let dr1 = self.conv2.backward(params, &cache.c2, &dh2, grads, true)?.unwrap();
        let dh1 = self
            .aff1
            .backward(params, &cache.a1_in, &relu_backward(&cache.r1, &dr1), grads)?;
        let mut dx = self.conv1.backward(params, &cache.c1, &dh1, grads, true)?.unwrap();
        match (&self.shortcut, &cache.shortcut) {
            (Some((conv, aff)), Some((cs, hs))) => {
                let dhs = aff.backward(params, hs, &dsum, grads)?;
                let dxs = conv.backward(params, cs, &dhs, grads, true)?.unwrap();
                add_into(&mut dx, &dxs);
            }
            _ => add_into(&mut dx, &dsum),
        }
        Ok(dx)
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    dst.data_mut()
        .iter_mut()
        .zip(src.data())
        .for_each(|(a, b)| *a += b);
}

impl Encoder {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let out_channels = match &config.backbone {
            Backbone::TinyConv { stage_channels, stage_strides } => {
                let mut cin = 3;
                for (i, &cout) in stage_channels.iter().enumerate() {
                    layers.push(Layer::Conv(Conv2d::new(
                        &format!("encoder.{i}"),
                        cin,
                        cout,
                        3,
                        tiny_stride(stage_strides, i),
                        1,
                        true,
                    )));
                    layers.push(Layer::Relu);
                    cin = cout;
                }
                cin
            }
            Backbone::Resnet50Like { base_width } => {
                let w = *base_width;
                layers.push(Layer::Conv(Conv2d::new("encoder.stem", 3, w, 7, 2, 3, false)));
                layers.push(Layer::Affine(ChannelAffine::new("encoder.stem_aff", w)));
                layers.push(Layer::Relu);
                layers.push(Layer::MaxPool(MaxPool2d {
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                }));
                let mut cin = w;
                for (stage, &blocks) in [3usize, 4, 6, 3].iter().enumerate() {
                    let mid = w << stage;
                    for b in 0..blocks {
                        let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                        layers.push(Layer::Bottleneck(Box::new(Bottleneck::new(
                            &format!("encoder.layer{}.{b}", stage + 1),
                            cin,
                            mid,
                            stride,
                        ))));
                        cin = mid * 4;
                    }
                }
                cin
            }
        };
        Ok(Encoder {
            layers,
            out_channels,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamMap, rng: &mut R) {
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => c.init(params, rng),
                Layer::Affine(a) => a.init(params, 1.0),
                Layer::Bottleneck(b) => b.init(params, rng),
                Layer::Relu | Layer::MaxPool(_) => {}
            }
        }
    }

    pub fn forward(&self, params: &ParamMap, x: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv(c) => {
                    let (y, cc) = c.forward(params, &cur)?;
                    (y, LayerCache::Conv(cc))
                }
                Layer::Affine(a) => {
                    let y = a.forward(params, &cur)?;
                    (y, LayerCache::Affine(cur))
                }
                Layer::Relu => {
                    let y = relu_forward(&cur);
                    (y.clone(), LayerCache::Relu(y))
                }
                Layer::MaxPool(p) => {
                    let (y, pc) = p.forward(&cur)?;
                    (y, LayerCache::MaxPool(pc))
                }
                Layer::Bottleneck(b) => {
                    let (y, bc) = b.forward(params, &cur)?;
                    (y, LayerCache::Bottleneck(Box::new(bc)))
                }
            };
            caches.push(cache);
            cur = next;
        }
        ensure_finite(cur.data(), "encoder activations")?;
        Ok((cur, EncoderCache { caches }))
    }

    /// Backpropagates `dy` (gradient w.r.t. the output feature map) into `grads`.
    pub fn backward(
        &self,
        params: &ParamMap,
        cache: &EncoderCache,
        dy: &Tensor,
        grads: &mut ParamMap,
    ) -> Result<()> {
        if cache.caches.len() != self.layers.len() {
            return Err(Error::State("encoder cache does not match layers".into()));
        }
        let mut grad = dy.clone();
        for (idx, (layer, lc)) in self.layers.iter().zip(&cache.caches).enumerate().rev() {
            let need_input = idx > 0;
            grad = match (layer, lc) {
                (Layer::Conv(c), LayerCache::Conv(cc)) => {
                    match c.backward(params, cc, &grad, grads, need_input)? {
                        Some(g) => g,
                        None => return Ok(()),
                    }
                }
                (Layer::Affine(a), LayerCache::Affine(x)) => a.backward(params, x, &grad, grads)?,
                (Layer::Relu, LayerCache::Relu(y)) => relu_backward(y, &grad),
                (Layer::MaxPool(p), LayerCache::MaxPool(pc)) => p.backward(pc, &grad),
                (Layer::Bottleneck(b), LayerCache::Bottleneck(bc)) => {
                    b.backward(params, bc, &grad, grads)?
                }
                _ => return Err(Error::State("encoder cache layer mismatch".into())),
            };
        }
        Ok(())
    }
}
