use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

/// One stochastic transform. Applied in list order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    /// Crop a random area fraction with random aspect ratio, resample to the output size.
    RandomResizedCrop { scale: (f64, f64), ratio: (f64, f64) },
    HorizontalFlip { p: f64 },
    ColorJitter {
        p: f64,
        brightness: f64,
        contrast: f64,
        saturation: f64,
    },
    Grayscale { p: f64 },
    Blur { p: f64, sigma: (f64, f64) },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub transforms: Vec<Transform>,
    pub output_size: usize,
}

impl AugmentationPolicy {
    /// No randomness: every view is the image resized to `size`.
    pub fn identity(size: usize) -> Self {
        AugmentationPolicy {
            transforms: Vec::new(),
            output_size: size,
        }
    }

    /// The usual two-view contrastive recipe.
    pub fn standard(size: usize) -> Self {
        AugmentationPolicy {
            transforms: vec![
                Transform::RandomResizedCrop {
                    scale: (0.2, 1.0),
                    ratio: (3.0 / 4.0, 4.0 / 3.0),
                },
                Transform::ColorJitter {
                    p: 0.8,
                    brightness: 0.4,
                    contrast: 0.4,
                    saturation: 0.4,
                },
                Transform::Grayscale { p: 0.2 },
                Transform::Blur {
                    p: 0.5,
                    sigma: (0.1, 2.0),
                },
                Transform::HorizontalFlip { p: 0.5 },
            ],
            output_size: size,
        }
    }

    /// Milder crops so a small glyph usually survives.
    pub fn desk(size: usize) -> Self {
        AugmentationPolicy {
            transforms: vec![
                Transform::RandomResizedCrop {
                    scale: (0.6, 1.0),
                    ratio: (3.0 / 4.0, 4.0 / 3.0),
                },
                Transform::ColorJitter {
                    p: 0.8,
                    brightness: 0.3,
                    contrast: 0.3,
                    saturation: 0.3,
                },
                Transform::Grayscale { p: 0.2 },
                Transform::HorizontalFlip { p: 0.5 },
            ],
            output_size: size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.output_size == 0 {
            return bad("augmentation output size must be > 0".into());
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        for t in &self.transforms {
            let ok = match t {
                Transform::RandomResizedCrop { scale, ratio } => {
                    0.0 < scale.0 && scale.0 <= scale.1 && scale.1 <= 1.0 && 0.0 < ratio.0 && ratio.0 <= ratio.1
                }
                Transform::HorizontalFlip { p } | Transform::Grayscale { p } => prob(*p),
                Transform::ColorJitter {
                    p,
                    brightness,
                    contrast,
                    saturation,
                } => prob(*p) && [brightness, contrast, saturation].iter().all(|v| (0.0..1.0).contains(*v)),
                Transform::Blur { p, sigma } => prob(*p) && 0.0 < sigma.0 && sigma.0 <= sigma.1,
            };
            if !ok {
                return bad(format!("invalid transform {t:?}"));
            }
        }
        Ok(())
    }

    /// One random view.
    pub fn apply<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Image {
        let s = self.output_size;
        let mut img = image.clone();
        let mut sized = false;
        for t in &self.transforms {
            match *t {
                Transform::RandomResizedCrop { scale, ratio } => {
                    img = random_resized_crop(&img, scale, ratio, s, rng);
                    sized = true;
                }
                Transform::HorizontalFlip { p } => {
                    if rng.gen::<f64>() < p {
                        img = flip(&img);
                    }
                }
                Transform::ColorJitter {
                    p,
                    brightness,
                    contrast,
                    saturation,
                } => {
                    if rng.gen::<f64>() < p {
                        let b = 1.0 + rng.gen_range(-brightness..=brightness);
                        let c = 1.0 + rng.gen_range(-contrast..=contrast);
                        let sat = 1.0 + rng.gen_range(-saturation..=saturation);
                        color_jitter(&mut img, b as f32, c as f32, sat as f32);
                    }
                }
                Transform::Grayscale { p } => {
                    if rng.gen::<f64>() < p {
                        grayscale(&mut img);
                    }
                }
                Transform::Blur { p, sigma } => {
                    if rng.gen::<f64>() < p {
                        img = gaussian_blur(&img, rng.gen_range(sigma.0..=sigma.1));
                    }
                }
            }
        }
        if !sized || img.width() != s || img.height() != s {
            img = img.resize(s, s);
        }
        img
    }
}

/// Two independent draws `(x, x')` of the policy.
pub fn make_views<R: Rng + ?Sized>(
    image: &Image,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> (Image, Image) {
    let x = policy.apply(image, rng);
    let x2 = policy.apply(image, rng);
    (x, x2)
}

fn random_resized_crop<R: Rng + ?Sized>(
    img: &Image,
    scale: (f64, f64),
    ratio: (f64, f64),
    out: usize,
    rng: &mut R,
) -> Image {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let area = w * h;
    for _ in 0..10 {
        let target = area * rng.gen_range(scale.0..=scale.1);
        let log_r = rng.gen_range(ratio.0.ln()..=ratio.1.ln());
        let r = log_r.exp();
        let cw = (target * r).sqrt();
        let ch = (target / r).sqrt();
        if cw <= w && ch <= h {
            let x0 = rng.gen_range(0.0..=w - cw);
            let y0 = rng.gen_range(0.0..=h - ch);
            return img.resample(x0, y0, cw, ch, out, out);
        }
    }
    let side = w.min(h);
    img.resample((w - side) / 2.0, (h - side) / 2.0, side, side, out, out)
}

fn flip(img: &Image) -> Image {
    let mut out = img.clone();
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            out.set(x, y, img.get(w - 1 - x, y));
        }
    }
    out
}

fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn color_jitter(img: &mut Image, brightness: f32, contrast: f32, saturation: f32) {
    let px = img.pixels_mut();
    px.iter_mut().for_each(|v| *v = (*v * brightness).clamp(0.0, 1.0));
    let mean = px.chunks(3).map(luma).sum::<f32>() / (px.len() / 3) as f32;
    px.iter_mut()
        .for_each(|v| *v = (mean + (*v - mean) * contrast).clamp(0.0, 1.0));
    for p in px.chunks_mut(3) {
        let l = luma(p);
        p.iter_mut()
            .for_each(|v| *v = (l + (*v - l) * saturation).clamp(0.0, 1.0));
    }
}

fn grayscale(img: &mut Image) {
    for p in img.pixels_mut().chunks_mut(3) {
        let l = luma(p);
        p.iter_mut().for_each(|v| *v = l);
    }
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (2.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let norm: f32 = kernel.iter().sum();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &Image, horizontal: bool| {
        let mut out = src.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for (t, k) in (-radius..=radius).zip(&kernel) {
                    let (sx, sy) = if horizontal {
                        ((x + t).clamp(0, w - 1), y)
                    } else {
                        (x, (y + t).clamp(0, h - 1))
                    };
                    let p = src.get(sx as usize, sy as usize);
                    (0..3).for_each(|c| acc[c] += k * p[c]);
                }
                out.set(x as usize, y as usize, acc.map(|v| v / norm));
            }
        }
        out
    };
    pass(&pass(img, true), false)
}
