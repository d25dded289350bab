mod common;

use common::rand_tensor;
use hrmedseg_core::data::checkpoint::{decode_tensors, encode_tensors};
use hrmedseg_core::data::manifest::{read_dataset, write_dataset};
use hrmedseg_core::data::pnm::{decode_mask_pgm, encode_mask_pgm};
use hrmedseg_core::data::{
    gen_shapes_dataset, load_checkpoint, load_teacher_features, read_image_pnm, read_mask_pgm, save_checkpoint, split_train_val,
    write_image_ppm, write_mask_pgm, write_tensors, Teacher,
};
use hrmedseg_core::{Model, ModelConfig};
use hrmedseg_tensor::Tensor;
use proptest::prelude::*;

#[test]
fn checkpoint_of_many_tensors_round_trips_bit_exact() {
    let tensors: Vec<(String, Tensor)> = (0..100)
        .map(|i| {
            let shape: Vec<usize> = match i % 4 {
                0 => vec![i + 1],
                1 => vec![3, i % 7 + 1],
                2 => vec![2, 1, 5],
                _ => vec![1, 2, 3, 2],
            };
            (format!("layer{i}.weight"), rand_tensor(&shape, i as u64).mul_scalar(1e3).unwrap())
        })
        .collect();
    let bytes = encode_tensors(tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    let back = decode_tensors(&bytes).unwrap();
    assert_eq!(back.len(), 100);
    for ((n, t), (m, u)) in tensors.iter().zip(&back) {
        assert_eq!(n, m);
        assert_eq!(t.shape(), u.shape());
        assert_eq!(t.data(), u.data());
    }
    let again = encode_tensors(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    assert_eq!(bytes, again);

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(decode_tensors(&bad).is_err());
    assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn model_checkpoint_save_load_save_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(ModelConfig::toy()).unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&model.params, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let restored = Model::with_params(ModelConfig::toy(), loaded).unwrap();
    let img = Tensor::full(&[1, 3, 32, 32], 0.25);
    assert_eq!(model.forward(&img).unwrap().data(), restored.forward(&img).unwrap().data());
}

#[test]
fn teacher_feature_shapes_are_checked_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bin");
    let f = rand_tensor(&[256, 2, 2], 3);
    write_tensors(&path, [("s0", &f)]).unwrap();
    assert_eq!(load_teacher_features(&path, &[256, 2, 2]).unwrap()[0].1.data(), f.data());
    assert!(load_teacher_features(&path, &[256, 4, 4]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mask_pgm_round_trips(
        (w, h, classes, labels) in (1usize..20, 1usize..20, 1usize..6).prop_flat_map(|(w, h, c)| {
            let hi = if c == 1 { 2 } else { c as u32 };
            (Just(w), Just(h), Just(c), prop::collection::vec(0..hi, w * h))
        })
    ) {
        let bytes = encode_mask_pgm(&labels, w, h, classes).unwrap();
        let (back, bw, bh) = decode_mask_pgm(&bytes, classes).unwrap();
        prop_assert_eq!((bw, bh), (w, h));
        prop_assert_eq!(back, labels);
    }
}

#[test]
fn pnm_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u32> = (0..35).map(|i| (i * 7 % 4) as u32).collect();
    write_mask_pgm(dir.path().join("m.pgm"), &labels, 7, 5, 4).unwrap();
    assert_eq!(read_mask_pgm(dir.path().join("m.pgm"), 4).unwrap(), (labels, 7, 5));

    let levels: Vec<f64> = (0..3 * 6 * 4).map(|i| f64::from((i * 37 % 256) as u8) / 255.0).collect();
    let img = Tensor::new(&[3, 6, 4], levels).unwrap();
    write_image_ppm(dir.path().join("i.ppm"), &img).unwrap();
    let back = read_image_pnm(dir.path().join("i.ppm")).unwrap();
    assert_eq!(back.shape(), img.shape());
    for (a, b) in back.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn dataset_is_deterministic_and_seed_dependent() {
    let a = gen_shapes_dataset(12, 32, 1, 5).unwrap();
    let b = gen_shapes_dataset(12, 32, 1, 5).unwrap();
    let c = gen_shapes_dataset(12, 32, 1, 6).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.image.data(), y.image.data());
        assert_eq!(x.mask.data(), y.mask.data());
    }
    assert!(a.iter().zip(&c).any(|(x, y)| x.mask.data() != y.mask.data()));
    // sample i does not depend on n
    let longer = gen_shapes_dataset(20, 32, 1, 5).unwrap();
    assert_eq!(longer[7].image.data(), a[7].image.data());
}

#[test]
fn dataset_golden_statistics() {
    let samples = gen_shapes_dataset(200, 64, 1, 0).unwrap();
    let fractions: Vec<f64> = samples.iter().map(|s| s.mask.data().iter().sum::<f64>() / (64.0 * 64.0)).collect();
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let nonempty = fractions.iter().filter(|&&f| f > 0.0).count();
    assert!((0.05..=0.5).contains(&mean), "mean foreground {mean}");
    assert!(nonempty >= 190, "{nonempty} nonempty masks");
    assert!((mean - GOLDEN_FOREGROUND).abs() < 1e-4, "mean foreground {mean}");
    for s in &samples {
        assert_eq!(s.image.shape(), &[3, 64, 64]);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

const GOLDEN_FOREGROUND: f64 = 0.246206;

#[test]
fn multiclass_masks_are_one_hot() {
    for s in gen_shapes_dataset(10, 32, 3, 1).unwrap() {
        let m = s.mask.data();
        let plane = 32 * 32;
        for p in 0..plane {
            assert_eq!((0..3).map(|c| m[c * plane + p]).sum::<f64>(), 1.0);
        }
        assert!(s.labels().iter().all(|&l| l < 3));
    }
}

#[test]
fn split_is_seeded_and_disjoint() {
    let samples = gen_shapes_dataset(30, 16, 1, 2).unwrap();
    let (train, val) = split_train_val(samples.clone(), 0.1, 9);
    let (train2, _) = split_train_val(samples, 0.1, 9);
    assert_eq!((train.len(), val.len()), (27, 3));
    let ids: Vec<_> = train.iter().map(|s| &s.id).collect();
    assert_eq!(ids, train2.iter().map(|s| &s.id).collect::<Vec<_>>());
    assert!(val.iter().all(|v| !ids.contains(&&v.id)));
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples = gen_shapes_dataset(4, 16, 3, 3).unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let back = read_dataset(dir.path(), 3).unwrap();
    assert_eq!(back.len(), 4);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask.data(), b.mask.data());
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }
}

#[test]
fn teacher_is_deterministic_and_frozen() {
    let img = rand_tensor(&[2, 3, 64, 64], 4).mul_scalar(0.5).unwrap().add_scalar(0.5).unwrap();
    let a = Teacher::new(7).features(&img).unwrap();
    let b = Teacher::new(7).features(&img).unwrap();
    let c = Teacher::new(8).features(&img).unwrap();
    assert_eq!(a.shape(), &[2, 256, 4, 4]);
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
    assert!(!a.requires_grad());
}

#[test]
fn teacher_stride_matches_grid() {
    let img = Tensor::full(&[1, 3, 64, 64], 0.5);
    for (stride, side) in [(16, 4), (8, 8), (4, 16)] {
        let t = Teacher::with_stride(7, stride).unwrap();
        assert_eq!(t.stride(), stride);
        assert_eq!(t.features(&img).unwrap().shape(), &[1, 256, side, side]);
    }
    assert!(Teacher::with_stride(7, 3).is_err());
    assert!(Teacher::new(7).features(&Tensor::zeros(&[1, 3, 40, 40])).is_err());
}
