mod common;

use chanprune_core::preprocess::{apply_zca, fit_zca, fit_zca_relative, gcn};
use chanprune_core::tensor::Tensor;
use common::*;

#[test]
fn whitened_fitting_set_has_identity_covariance() {
    let mut r = rng(31);
    let images: Vec<Tensor> = (0..200).map(|_| subsample(&gcn(&synthetic_image(&mut r)))).collect();
    let before = covariance(&images);
    assert!(before[0][1].abs() > 0.1, "fixture should start out correlated");
    let zca = fit_zca_relative(&images, 1e-4).unwrap();
    let white: Vec<Tensor> = images.iter().map(|x| apply_zca(&zca, x).unwrap()).collect();
    let cov = covariance(&white);
    for (a, row) in cov.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if a == b {
                assert!((0.9..=1.1).contains(&v), "diag {a}: {v}");
            } else {
                assert!(v.abs() < 0.05, "({a},{b}): {v}");
            }
        }
    }
}

#[test]
fn gcn_then_zca_keeps_image_shape() {
    let mut r = rng(32);
    let images: Vec<Tensor> = (0..10).map(|_| gcn(&synthetic_image(&mut r))).collect();
    for x in &images {
        let mean = x.data().iter().map(|&v| v as f64).sum::<f64>() / 3072.0;
        let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 3072.0;
        assert!(mean.abs() < 1e-5);
        assert!((var.sqrt() - 1.0).abs() < 1e-4);
    }
    let small: Vec<Tensor> = images.iter().map(subsample).collect();
    let zca = fit_zca(&small, 0.1).unwrap();
    assert_eq!(apply_zca(&zca, &small[0]).unwrap().dims(), &[3, 4, 4]);
}
