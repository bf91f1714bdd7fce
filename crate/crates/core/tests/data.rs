use std::collections::HashSet;
use std::fs;

use stlth_core::data::{decode_image_file, synth_content, synth_style, write_image, Dataset, Split};
use stlth_core::numerics::Tensor;
use stlth_core::Error;

fn in_unit_range(t: &Tensor) -> bool {
    t.data().iter().all(|&v| (0.0..=1.0).contains(&v))
}

#[test]
fn synth_images_are_deterministic() {
    assert_eq!(synth_content(4, 17, 32), synth_content(4, 17, 32));
    assert_eq!(synth_style(4, 17, 32), synth_style(4, 17, 32));
    assert_eq!(synth_content(4, 17, 32).shape(), &[3, 32, 32]);
}

#[test]
fn synth_values_stay_in_unit_range() {
    for id in 0..1000 {
        let c = synth_content(11, id, 16);
        let s = synth_style(11, id, 16);
        assert!(in_unit_range(&c), "content {id}");
        assert!(in_unit_range(&s), "style {id}");
    }
}

#[test]
fn distinct_ids_give_distinct_images() {
    assert_ne!(synth_content(0, 1, 32), synth_content(0, 2, 32));
    assert_ne!(synth_style(0, 1, 32), synth_style(0, 2, 32));
    assert_ne!(synth_content(0, 1, 32), synth_content(1, 1, 32));
}

#[test]
fn styles_have_distinct_channel_statistics() {
    let means: Vec<[i32; 3]> = (0..20)
        .map(|id| {
            let s = synth_style(3, id, 32);
            let n = 32 * 32;
            [0, 1, 2].map(|c| (s.data()[c * n..(c + 1) * n].iter().sum::<f32>() / n as f32 * 1000.0) as i32)
        })
        .collect();
    let unique: HashSet<_> = means.iter().collect();
    assert_eq!(unique.len(), means.len());
}

#[test]
fn synthetic_splits_are_disjoint_over_many_draws() {
    let ds = Dataset::synthetic(0, 16).unwrap();
    let train: HashSet<String> = ds.stream(Split::Train, 1).drawn_ids(10_000).unwrap().into_iter().collect();
    let test: HashSet<String> = ds.stream(Split::Test, 1).drawn_ids(10_000).unwrap().into_iter().collect();
    assert_eq!(train.len(), 10_000);
    assert!(train.is_disjoint(&test));
    let a: HashSet<String> = ds.split_ids(Split::Train, 10_000).into_iter().collect();
    let b: HashSet<String> = ds.split_ids(Split::Test, 10_000).into_iter().collect();
    assert!(a.is_disjoint(&b));
}

#[test]
fn batches_have_declared_shape_and_replay() {
    let ds = Dataset::synthetic(2, 32).unwrap();
    let mut s = ds.stream(Split::Train, 5);
    let (c, st) = s.next_batch(3).unwrap();
    assert_eq!(c.shape(), &[3, 3, 32, 32]);
    assert_eq!(st.shape(), &[3, 3, 32, 32]);
    assert_eq!(s.batch_at(0, 3).unwrap(), (c, st));
}

/// P6 with a comment line, max value 255.
fn write_ppm(path: &std::path::Path, w: usize, h: usize, pixels: &[[u8; 3]]) {
    let mut bytes = format!("P6\n# test\n{w} {h}\n255\n").into_bytes();
    for p in pixels {
        bytes.extend_from_slice(p);
    }
    fs::write(path, bytes).unwrap();
}

#[test]
fn ppm_decodes_to_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.ppm");
    let pixels: Vec<[u8; 3]> = (0..16u8).map(|i| [i * 16, 255 - i, i]).collect();
    write_ppm(&path, 4, 4, &pixels);
    let t = decode_image_file(&path, 4).unwrap();
    assert_eq!(t.shape(), &[3, 4, 4]);
    for (i, p) in pixels.iter().enumerate() {
        for (c, &v) in p.iter().enumerate() {
            assert_eq!(t.data()[c * 16 + i], v as f32 / 255.0);
        }
    }
}

#[test]
fn non_square_images_are_center_cropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.ppm");
    // 6x4: columns 0 and 5 are red and get cropped away
    let pixels: Vec<[u8; 3]> =
        (0..24).map(|i| if i % 6 == 0 || i % 6 == 5 { [255, 0, 0] } else { [0, 0, 255] }).collect();
    write_ppm(&path, 6, 4, &pixels);
    let t = decode_image_file(&path, 4).unwrap();
    assert!(t.data()[..16].iter().all(|&v| v == 0.0));
    assert!(t.data()[32..].iter().all(|&v| v == 1.0));
}

#[test]
fn png_round_trips_through_writer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let img = synth_content(1, 1, 16).map(|v| (v * 255.0).round() / 255.0);
    write_image(&path, &img).unwrap();
    let back = decode_image_file(&path, 16).unwrap();
    assert!(back.max_abs_diff(&img) < 1e-6);
}

fn folder_with(content: usize, style: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (sub, n) in [("content", content), ("style", style)] {
        fs::create_dir(dir.path().join(sub)).unwrap();
        for i in 0..n {
            let px = vec![[(i * 40) as u8, 10, 200]; 16 * 16];
            write_ppm(&dir.path().join(sub).join(format!("{i:02}.ppm")), 16, 16, &px);
        }
    }
    dir
}

#[test]
fn empty_folder_is_rejected() {
    let dir = folder_with(0, 0);
    assert!(matches!(Dataset::load_image_folder(dir.path(), 16), Err(Error::EmptyFolder(_))));
    let missing = dir.path().join("nope");
    assert!(Dataset::load_image_folder(&missing, 16).is_err());
}

#[test]
fn single_image_folder_wraps() {
    let dir = folder_with(1, 1);
    let ds = Dataset::load_image_folder(dir.path(), 16).unwrap();
    let mut s = ds.stream(Split::Train, 0);
    let (a, _) = s.next_batch(3).unwrap();
    let n = 3 * 16 * 16;
    assert_eq!(a.data()[..n], a.data()[n..2 * n]);
    assert_eq!(a.data()[..n], a.data()[2 * n..]);
    // nothing is held out of a one-file folder, so there are no test pairs
    assert!(matches!(ds.test_pairs(10, 0), Err(Error::EmptyTestSet)));
}

#[test]
fn folder_splits_are_disjoint() {
    let dir = folder_with(12, 5);
    fs::write(dir.path().join("content").join("zz-broken.ppm"), b"not an image").unwrap();
    let ds = Dataset::load_image_folder(dir.path(), 16).unwrap();
    let train: HashSet<String> = ds.split_ids(Split::Train, 0).into_iter().collect();
    let test: Vec<String> = ds.split_ids(Split::Test, 0);
    assert!(!test.is_empty());
    assert!(test.iter().all(|t| !train.contains(t)));
    assert!(test.contains(&"content/11.ppm".to_string()));
    assert!(test.contains(&"style/04.ppm".to_string()));
    let drawn: HashSet<String> = ds.stream(Split::Train, 3).drawn_ids(500).unwrap().into_iter().collect();
    assert!(drawn.is_subset(&train));
    assert_eq!(ds.test_pairs(100, 0).unwrap().len(), 2);
}

#[test]
fn native_decode_keeps_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.ppm");
    let pixels: Vec<[u8; 3]> = (0..24u8).map(|i| [i, 0, 255]).collect();
    write_ppm(&path, 6, 4, &pixels);
    let t = stlth_core::data::decode_image_native(&path).unwrap();
    assert_eq!(t.shape(), &[3, 4, 6]);
    assert_eq!(t.data()[7], 7.0 / 255.0);
}
