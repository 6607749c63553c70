use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};

/// Glyph foreground intensity; backgrounds stay strictly below it.
pub const GLYPH_VALUE: f32 = 1.0;
pub const GLYPH_OFF: f32 = 0.0;
const BACKGROUND_MAX: f32 = 0.85;
const BACKGROUND_MIN: f32 = 0.05;

/// Parameters of the synthetic fine-grained dataset.
///
/// The class is carried only by a small binary glyph; the rest of the image is
/// a textured background drawn from a pool independently of the class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub glyph_style: GlyphStyle,
    /// Seed of the random glyph family.
    pub glyph_seed: u64,
    /// Optional permutation: class `c` draws glyph `glyph_order[c]`.
    pub glyph_order: Option<Vec<usize>>,
    pub background_pool: usize,
    /// Weight of the pooled background signature versus fresh per-image noise.
    pub correlation: f64,
    /// Minimum distance of the glyph from the image border.
    pub margin: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            train_per_class: 100,
            test_per_class: 50,
            image_size: 64,
            patch_size: 8,
            glyph_style: GlyphStyle::Structured,
            glyph_seed: 17,
            glyph_order: None,
            background_pool: 20,
            correlation: 1.0,
            margin: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlyphStyle {
    /// Stripes, checkers, frames and crosses, all mirror symmetric; classes
    /// beyond the fixed list fall back to random patterns.
    #[default]
    Structured,
    /// Seeded random patterns with half the bits set.
    Random,
}

/// Square binary pattern, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    pub size: usize,
    pub bits: Vec<bool>,
}

impl Glyph {
    pub fn hamming(&self, other: &Glyph) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: Image,
    pub label: usize,
    pub background_id: usize,
    /// `[x, y, w, h]` of the glyph in pixels.
    pub bbox: [usize; 4],
    pub train: bool,
    /// Path relative to the dataset root.
    pub file: PathBuf,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("need >= 2 classes and nonempty splits".into()));
        }
        if self.patch_size == 0 || self.patch_size + 2 * self.margin > self.image_size {
            return Err(Error::Config(format!(
                "patch {} with margin {} does not fit in {}",
                self.patch_size, self.margin, self.image_size
            )));
        }
        if self.background_pool == 0 || !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::Config("background pool must be >= 1 and correlation in [0, 1]".into()));
        }
        if let Some(order) = &self.glyph_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..self.classes).collect::<Vec<_>>() {
                return Err(Error::Config("glyph_order must permute 0..classes".into()));
            }
        }
        Ok(())
    }

    pub fn images_per_class(&self) -> usize {
        self.train_per_class + self.test_per_class
    }

    pub fn total_images(&self) -> usize {
        self.classes * self.images_per_class()
    }
}

type Rule = fn(usize, usize, usize) -> bool;

/// Distance of column `c` from the nearer edge.
fn fold(c: usize, n: usize) -> usize {
    c.min(n - 1 - c)
}

/// Structured patterns as predicates of (row, col, size). Each is symmetric
/// under horizontal flips, so flip augmentation never maps one class onto another.
const STRUCTURED: [Rule; 10] = [
    |r, _, _| r % 2 == 0,
    |_, c, n| fold(c, n) % 2 == 0,
    |r, c, n| (r + fold(c, n)) % 2 == 0,
    |r, c, n| (r / 2 + fold(c, n) / 2) % 2 == 0,
    |r, c, n| r < 2 || c < 2 || r + 2 >= n || c + 2 >= n,
    |r, c, n| (n / 2 - 1..=n / 2).contains(&r) || (n / 2 - 1..=n / 2).contains(&c),
    |r, c, n| r.abs_diff(c) <= 1 || (r + c).abs_diff(n - 1) <= 1,
    |_, _, _| true,
    |r, c, n| (n / 4..n - n / 4).contains(&r) && (n / 4..n - n / 4).contains(&c),
    |r, _, _| (r / 2) % 2 == 0,
];

/// One glyph per class. Random glyphs keep pairwise Hamming distance >= size^2/4.
pub fn glyph_family(spec: &SyntheticSpec) -> Vec<Glyph> {
    let n = spec.patch_size * spec.patch_size;
    let mut glyphs: Vec<Glyph> = Vec::with_capacity(spec.classes);
    if spec.glyph_style == GlyphStyle::Structured {
        let p = spec.patch_size;
        for rule in STRUCTURED.iter().take(spec.classes) {
            let bits = (0..n).map(|i| rule(i / p, i % p, p)).collect();
            glyphs.push(Glyph { size: p, bits });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.glyph_seed);
    let min_dist = n / 4;
    while glyphs.len() < spec.classes {
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let mut bits = vec![false; n];
        idx[..n / 2].iter().for_each(|&i| bits[i] = true);
        let g = Glyph {
            size: spec.patch_size,
            bits,
        };
        if glyphs.iter().all(|o| o.hamming(&g) >= min_dist) {
            glyphs.push(g);
        }
    }
    glyphs
}

pub fn class_glyph(spec: &SyntheticSpec, family: &[Glyph], class: usize) -> Glyph {
    let idx = spec.glyph_order.as_ref().map_or(class, |o| o[class]);
    family[idx].clone()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream(seed: u64, index: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ tag).wrapping_add(index)))
}

/// Smooth value-noise texture plus a two-colour gradient.
#[derive(Clone, Debug)]
struct Texture {
    lattice: Vec<f32>,
    cells: usize,
    fine: Vec<f32>,
    fine_cells: usize,
    colors: [[f32; 3]; 2],
    direction: (f32, f32),
}

impl Texture {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let cells = rng.gen_range(2..=4);
        let fine_cells = rng.gen_range(6..=10);
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f32>()).collect();
        let fine = (0..(fine_cells + 1) * (fine_cells + 1))
            .map(|_| rng.gen::<f32>())
            .collect();
        let mut color = || -> [f32; 3] { [rng.gen(), rng.gen(), rng.gen()] };
        let colors = [color(), color()];
        let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        Texture {
            lattice,
            cells,
            fine,
            fine_cells,
            colors,
            direction: (angle.cos(), angle.sin()),
        }
    }

    fn noise(lattice: &[f32], cells: usize, u: f32, v: f32) -> f32 {
        let (x, y) = (u * cells as f32, v * cells as f32);
        let (x0, y0) = ((x.floor() as usize).min(cells - 1), (y.floor() as usize).min(cells - 1));
        let (tx, ty) = (x - x0 as f32, y - y0 as f32);
        let s = |t: f32| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(tx), s(ty));
        let at = |i: usize, j: usize| lattice[j * (cells + 1) + i];
        let top = at(x0, y0) + (at(x0 + 1, y0) - at(x0, y0)) * sx;
        let bot = at(x0, y0 + 1) + (at(x0 + 1, y0 + 1) - at(x0, y0 + 1)) * sx;
        top + (bot - top) * sy
    }

    fn sample(&self, u: f32, v: f32) -> [f32; 3] {
        let n = 0.65 * Self::noise(&self.lattice, self.cells, u, v)
            + 0.35 * Self::noise(&self.fine, self.fine_cells, u, v);
        let g = 0.5 + 0.5 * ((u - 0.5) * self.direction.0 + (v - 0.5) * self.direction.1);
        let t = (0.6 * n + 0.4 * g).clamp(0.0, 1.0);
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            *o = self.colors[0][ch] + (self.colors[1][ch] - self.colors[0][ch]) * t;
        }
        out
    }
}

fn background_pool(spec: &SyntheticSpec) -> Vec<Texture> {
    (0..spec.background_pool)
        .map(|b| Texture::random(&mut stream(spec.seed, b as u64, 0xB6)))
        .collect()
}

fn render_one(
    spec: &SyntheticSpec,
    pool: &[Texture],
    glyph: &Glyph,
    index: usize,
) -> (Image, usize, [usize; 4]) {
    let s = spec.image_size;
    let mut bg_rng = stream(spec.seed, index as u64, 0xBA);
    let background_id = bg_rng.gen_range(0..pool.len());
    let fresh = Texture::random(&mut bg_rng);
    let sig = &pool[background_id];
    let corr = spec.correlation as f32;
    let mut img = Image::filled(s, s, [0.0; 3]);
    for y in 0..s {
        for x in 0..s {
            let (u, v) = ((x as f32 + 0.5) / s as f32, (y as f32 + 0.5) / s as f32);
            let a = sig.sample(u, v);
            let b = fresh.sample(u, v);
            let mut px = [0.0; 3];
            for ch in 0..3 {
                let mixed = corr * a[ch] + (1.0 - corr) * b[ch];
                px[ch] = BACKGROUND_MIN + (BACKGROUND_MAX - BACKGROUND_MIN) * mixed;
            }
            img.set(x, y, px);
        }
    }
    let mut pos_rng = stream(spec.seed, index as u64, 0x90);
    let hi = s - spec.patch_size - spec.margin;
    let gx = pos_rng.gen_range(spec.margin..=hi);
    let gy = pos_rng.gen_range(spec.margin..=hi);
    for py in 0..glyph.size {
        for px in 0..glyph.size {
            let v = if glyph.bits[py * glyph.size + px] { GLYPH_VALUE } else { GLYPH_OFF };
            img.set(gx + px, gy + py, [v; 3]);
        }
    }
    (img, background_id, [gx, gy, spec.patch_size, spec.patch_size])
}

/// Renders every sample in memory. Class `c` owns indices
/// `c * per_class .. (c + 1) * per_class`; the first `train_per_class` of each
/// block are training images.
pub fn render_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let family = glyph_family(spec);
    let pool = background_pool(spec);
    let per_class = spec.images_per_class();
    let mut out = Vec::with_capacity(spec.total_images());
    for class in 0..spec.classes {
        let glyph = class_glyph(spec, &family, class);
        for k in 0..per_class {
            let index = class * per_class + k;
            let (image, background_id, bbox) = render_one(spec, &pool, &glyph, index);
            let train = k < spec.train_per_class;
            let file = PathBuf::from(class_name(class)).join(format!(
                "{}_{index:05}.png",
                if train { "train" } else { "test" }
            ));
            out.push(SyntheticSample {
                image,
                label: class,
                background_id,
                bbox,
                train,
                file,
            });
        }
    }
    Ok(out)
}

pub fn class_name(class: usize) -> String {
    format!("class_{class:02}")
}

/// Writes `root/<class>/<image>.png`, `boxes.json` and `manifest.json`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let samples = render_synthetic(spec)?;
    for class in 0..spec.classes {
        let dir = out_dir.join(class_name(class));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut boxes = BTreeMap::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in &samples {
        s.image.save_png(&out_dir.join(&s.file))?;
        boxes.insert(s.file.to_string_lossy().replace('\\', "/"), s.bbox);
        let entry = ManifestEntry {
            file: s.file.clone(),
            label: s.label,
        };
        if s.train {
            train.push(entry);
        } else {
            test.push(entry);
        }
    }
    let boxes_path = out_dir.join("boxes.json");
    std::fs::write(&boxes_path, serde_json::to_string_pretty(&boxes)?)
        .map_err(|e| Error::io(&boxes_path, e))?;
    let spec_path = out_dir.join("synthetic_spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(spec)?)
        .map_err(|e| Error::io(&spec_path, e))?;
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        classes: (0..spec.classes).map(class_name).collect(),
        train,
        test,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Reads a `boxes.json` sidecar.
pub fn read_boxes(path: &Path) -> Result<BTreeMap<String, [usize; 4]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            train_per_class: 2,
            test_per_class: 1,
            ..Default::default()
        }
    }

    #[test]
    fn random_glyphs_are_distinct_and_balanced() {
        let spec = SyntheticSpec {
            glyph_style: GlyphStyle::Random,
            ..SyntheticSpec::default()
        };
        let fam = glyph_family(&spec);
        assert_eq!(fam.len(), 10);
        for (i, a) in fam.iter().enumerate() {
            assert_eq!(a.bits.iter().filter(|b| **b).count(), 32);
            for b in &fam[i + 1..] {
                assert!(a.hamming(b) >= 16);
            }
        }
    }

    #[test]
    fn structured_glyphs_are_distinct_and_mirror_symmetric() {
        let spec = SyntheticSpec {
            classes: 12,
            ..SyntheticSpec::default()
        };
        let fam = glyph_family(&spec);
        assert_eq!(fam.len(), 12);
        for (i, a) in fam.iter().enumerate() {
            for b in &fam[i + 1..] {
                assert!(a.hamming(b) > 0);
            }
        }
        for g in &fam[..10] {
            let p = g.size;
            assert!((0..p * p).all(|i| g.bits[i] == g.bits[(i / p) * p + p - 1 - i % p]));
        }
    }

    #[test]
    fn rendering_is_deterministic_and_backgrounds_stay_below_glyph() {
        let a = render_synthetic(&small()).unwrap();
        assert_eq!(a, render_synthetic(&small()).unwrap());
        for s in &a {
            let [x, y, w, h] = s.bbox;
            for py in 0..s.image.height() {
                for px in 0..s.image.width() {
                    let inside = px >= x && px < x + w && py >= y && py < y + h;
                    if !inside {
                        assert!(s.image.get(px, py)[0] <= BACKGROUND_MAX + 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small();
        s.patch_size = 60;
        assert!(s.validate().is_err());
        let mut s = small();
        s.glyph_order = Some(vec![0, 0, 1]);
        assert!(s.validate().is_err());
    }
}
