use std::path::{Path, PathBuf};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::GridMap;

const OVERLAY_ALPHA: f32 = 0.5;

/// Min-max scaling to [0, 1]; a constant map becomes all zeros.
pub fn minmax_scale(map: &GridMap) -> Vec<f64> {
    let (lo, hi) = (map.min(), map.max());
    if hi - lo <= 0.0 {
        return vec![0.0; map.len()];
    }
    map.values().iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Piecewise-linear jet colormap.
pub fn jet(t: f64) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    let c = |x: f64| (1.5 - (4.0 * t - x).abs()).clamp(0.0, 1.0) as f32;
    [c(3.0), c(2.0), c(1.0)]
}

/// Bilinear upsampling of the scaled map, blended over the image.
pub fn overlay(image: &Image, map: &GridMap) -> Image {
    let scaled = minmax_scale(map);
    let (h, w) = (map.height(), map.width());
    let mut out = image.clone();
    let (iw, ih) = (image.width(), image.height());
    for y in 0..ih {
        for x in 0..iw {
            let gy = ((y as f64 + 0.5) * h as f64 / ih as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let gx = ((x as f64 + 0.5) * w as f64 / iw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
            let at = |i: usize, j: usize| scaled[i * w + j];
            let v = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1))
                + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
            let c = jet(v);
            let p = image.get(x, y);
            out.set(x, y, [0, 1, 2].map(|k| (1.0 - OVERLAY_ALPHA) * p[k] + OVERLAY_ALPHA * c[k]));
        }
    }
    out
}

/// Writes `heatmap_{index:05}.png` per image; returns the paths in input order.
pub fn export_heatmaps(images: &[Image], maps: &[GridMap], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if images.len() != maps.len() {
        return Err(Error::Argument(format!(
            "{} images but {} maps",
            images.len(),
            maps.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    images
        .iter()
        .zip(maps)
        .enumerate()
        .map(|(i, (img, m))| {
            let path = out_dir.join(format!("heatmap_{i:05}.png"));
            overlay(img, m).save_png(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_gives_uniform_overlay() {
        let img = Image::filled(8, 8, [0.2, 0.2, 0.2]);
        let o = overlay(&img, &GridMap::filled(2, 2, 3.0));
        let first = o.get(0, 0);
        assert!((0..8).all(|y| (0..8).all(|x| o.get(x, y) == first)));
    }

    #[test]
    fn scaled_values_are_in_unit_interval() {
        let m = GridMap::new(1, 3, vec![-2.0, 0.5, 7.0]).unwrap();
        let s = minmax_scale(&m);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((s[0], s[2]), (0.0, 1.0));
    }

    #[test]
    fn one_file_per_image_with_stable_names() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![Image::filled(4, 4, [0.5; 3]); 3];
        let maps = vec![GridMap::filled(2, 2, 1.0); 3];
        let paths = export_heatmaps(&imgs, &maps, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths[2].ends_with("heatmap_00002.png"));
        assert!(paths.iter().all(|p| p.exists()));
    }
}
