use crate::error::{Error, Result};
use super::FrozenModel;
use crate::model::{FeatureMap, GridMap};

/// Pixel box `[x, y, w, h]` after resizing a square `source`-pixel image to
/// `resize` and center cropping to `crop`, clipped to the crop.
pub fn transform_box(bbox: [usize; 4], source: usize, resize: usize, crop: usize) -> [f64; 4] {
    let s = resize as f64 / source as f64;
    let off = (resize as f64 - crop as f64) / 2.0;
    let x0 = (bbox[0] as f64 * s - off).clamp(0.0, crop as f64);
    let y0 = (bbox[1] as f64 * s - off).clamp(0.0, crop as f64);
    let x1 = ((bbox[0] + bbox[2]) as f64 * s - off).clamp(0.0, crop as f64);
    let y1 = ((bbox[1] + bbox[3]) as f64 * s - off).clamp(0.0, crop as f64);
    [x0, y0, x1 - x0, y1 - y0]
}

/// Share of the total mask weight that falls inside `bbox`, spreading each
/// grid cell's weight uniformly over the pixels it covers.
pub fn attention_mass_in_box(weights: &GridMap, bbox: [f64; 4], image_size: usize) -> Result<f64> {
    let total = weights.sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("attention mask has no positive mass".into()));
    }
    let (h, w) = (weights.height(), weights.width());
    let (ch, cw) = (image_size as f64 / h as f64, image_size as f64 / w as f64);
    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
    let mut inside = 0.0;
    for i in 0..h {
        for j in 0..w {
            let oy = overlap(i as f64 * ch, (i + 1) as f64 * ch, bbox[1], bbox[1] + bbox[3]);
            let ox = overlap(j as f64 * cw, (j + 1) as f64 * cw, bbox[0], bbox[0] + bbox[2]);
            inside += weights.get(i, j) * (ox * oy) / (ch * cw);
        }
    }
    Ok(inside / total)
}

/// Share a uniform mask would put inside `bbox`.
pub fn uniform_share(bbox: [f64; 4], image_size: usize) -> f64 {
    bbox[2] * bbox[3] / (image_size * image_size) as f64
}

/// Mean attention mass and uniform share over `maps` (already computed from
/// preprocessed images) with boxes given in `source`-pixel coordinates.
/// A mask without positive mass localizes nothing and counts as 0.
pub fn mean_box_attention(
    model: &FrozenModel,
    maps: &[FeatureMap],
    boxes: &[[usize; 4]],
    source: usize,
) -> Result<(f64, f64)> {
    if maps.len() != boxes.len() {
        return Err(Error::Argument(format!("{} maps but {} boxes", maps.len(), boxes.len())));
    }
    let s = model.input_size();
    let (mut mass, mut share) = (0.0, 0.0);
    for (phi, b) in maps.iter().zip(boxes) {
        let bbox = transform_box(*b, source, model.eval.resize, s);
        mass += attention_mass_in_box(&model.attention(phi)?, bbox, s).unwrap_or(0.0);
        share += uniform_share(bbox, s);
    }
    let n = maps.len().max(1) as f64;
    Ok((mass / n, share / n))
}
