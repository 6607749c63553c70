//! Statistical and structural checks of the synthetic glyph dataset.

use std::collections::BTreeMap;

use fitmask::data::{
    class_glyph, generate_synthetic, glyph_family, load_image_folder, read_boxes, render_synthetic,
    DatasetManifest, Split, SplitRule, SyntheticSample, SyntheticSpec,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn patch_bits(s: &SyntheticSample, size: usize) -> Vec<bool> {
    let [x, y, _, _] = s.bbox;
    let mut bits = Vec::with_capacity(size * size);
    for py in 0..size {
        for px in 0..size {
            bits.push(s.image.get(x + px, y + py)[0] > 0.5);
        }
    }
    bits
}

#[test]
fn background_id_is_independent_of_class() {
    let spec = SyntheticSpec::default();
    let samples: Vec<SyntheticSample> = render_synthetic(&spec).unwrap().into_iter().filter(|s| s.train).collect();
    assert_eq!(samples.len(), 1000);
    let (rows, cols) = (spec.background_pool, spec.classes);
    let mut table = vec![vec![0.0f64; cols]; rows];
    for s in &samples {
        table[s.background_id][s.label] += 1.0;
    }
    let n = samples.len() as f64;
    let row_sum: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sum: Vec<f64> = (0..cols).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let mut stat = 0.0;
    let mut used_rows = 0;
    for (r, row) in table.iter().enumerate() {
        if row_sum[r] == 0.0 {
            continue;
        }
        used_rows += 1;
        for c in 0..cols {
            let e = row_sum[r] * col_sum[c] / n;
            stat += (row[c] - e).powi(2) / e;
        }
    }
    let df = ((used_rows - 1) * (cols - 1)) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat:.1} on {df} dof, p = {p:.4}");
}

#[test]
fn template_matcher_recovers_every_label() {
    let spec = SyntheticSpec::default();
    let family = glyph_family(&spec);
    let templates: Vec<Vec<bool>> = (0..spec.classes).map(|c| class_glyph(&spec, &family, c).bits).collect();
    for s in render_synthetic(&spec).unwrap() {
        let bits = patch_bits(&s, spec.patch_size);
        let best = (0..spec.classes)
            .min_by_key(|&c| bits.iter().zip(&templates[c]).filter(|(a, b)| a != b).count())
            .unwrap();
        assert_eq!(best, s.label, "{}", s.file.display());
    }
}

#[test]
fn permuting_glyphs_permutes_labels_only() {
    let base = SyntheticSpec { train_per_class: 10, test_per_class: 5, ..SyntheticSpec::default() };
    let order: Vec<usize> = (0..base.classes).rev().collect();
    let permuted = SyntheticSpec { glyph_order: Some(order.clone()), ..base.clone() };
    let family = glyph_family(&base);
    let a = render_synthetic(&base).unwrap();
    let b = render_synthetic(&permuted).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.label, y.label);
        assert_eq!(x.background_id, y.background_id);
        assert_eq!(x.bbox, y.bbox);
        assert_eq!(patch_bits(y, base.patch_size), family[order[y.label]].bits);
        let [bx, by, bw, bh] = x.bbox;
        for py in 0..base.image_size {
            for px in 0..base.image_size {
                let inside = px >= bx && px < bx + bw && py >= by && py < by + bh;
                if !inside {
                    assert_eq!(x.image.get(px, py), y.image.get(px, py));
                }
            }
        }
    }
}

#[test]
fn generated_folder_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { classes: 3, train_per_class: 4, test_per_class: 2, ..SyntheticSpec::default() };
    let manifest = generate_synthetic(&spec, dir.path()).unwrap();
    assert_eq!((manifest.train.len(), manifest.test.len()), (12, 6));
    let read = DatasetManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(read, manifest);
    let boxes: BTreeMap<String, [usize; 4]> = read_boxes(&dir.path().join("boxes.json")).unwrap();
    assert_eq!(boxes.len(), 18);
    assert!(boxes.values().all(|b| b[2] == 8 && b[3] == 8 && b[0] + 8 <= 64 && b[1] + 8 <= 64));
    let test = manifest.load(Split::Test).unwrap();
    assert!(test.images.iter().all(|i| i.width() == 64 && i.height() == 64));

    let rule = SplitRule { train_per_class: 4, test_per_class: None, seed: 3 };
    let (scanned, skipped) = load_image_folder(dir.path(), rule).unwrap();
    assert!(skipped.skipped.is_empty());
    assert_eq!((scanned.train.len(), scanned.test.len()), (12, 6));
    let (again, _) = load_image_folder(dir.path(), rule).unwrap();
    assert_eq!(scanned, again);
}
