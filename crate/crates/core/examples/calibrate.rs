//! Trains a small attention model on synthetic shapes and compares it against
//! PCA across neighbourhood sizes — handy for sizing experiments before
//! committing to a long run.
//!
//! Positional arguments (all optional):
//! `shapes-per-kind points-per-shape patches-per-cloud epochs feature-dim`
//!
//! ```sh
//! cargo run --release --example calibrate -- 3 3000 900 150 24
//! ```

use std::time::Instant;

use patchnorm::classical::pca_normal;
use patchnorm::datasets::{
    labeled_patches, mixed_shape_specs, patches_at_k, realize_shapes, sample_eval_points,
};
use patchnorm::metrics::AngleErrorSet;
use patchnorm::model::{predict_all, train, ModelConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let per_kind: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2);
    let points: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let per_cloud: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(900);
    let epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(3);
    let feature_dim: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(16);
    let k = 50;

    let t0 = Instant::now();
    let train_clouds = realize_shapes(&mixed_shape_specs(per_kind, points, 100)).unwrap();
    let test_clouds = realize_shapes(&mixed_shape_specs(1, points, 900)).unwrap();
    let train_points = sample_eval_points(&train_clouds, per_cloud, 7).unwrap();
    let test_points = sample_eval_points(&test_clouds, 400, 8).unwrap();
    let dataset = labeled_patches(&train_clouds, &train_points, k).unwrap();
    println!(
        "data: {} train patches, {} test sites, built in {:.1?}",
        dataset.len(),
        test_points.len(),
        t0.elapsed()
    );

    let mcfg = ModelConfig {
        k,
        feature_dim,
        heads: 4,
        mlp_widths: [8, feature_dim, feature_dim],
        ffn_hidden: 2 * feature_dim,
        fc_widths: vec![feature_dim, 8, 3],
        seed: 0,
    };
    let tcfg = TrainConfig {
        epochs,
        batch_size: 256,
        lr: 2e-3,
        lr_decay_epochs: vec![epochs * 2 / 3, epochs * 5 / 6],
        seed: 0,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let result = train(&dataset, &tcfg, &mcfg).unwrap();
    let per_epoch = t1.elapsed().as_secs_f64() / epochs as f64;
    println!(
        "train: {:.2}s/epoch, loss {:.4} -> {:.4}",
        per_epoch,
        result.loss_curve.first().unwrap(),
        result.loss_curve.last().unwrap()
    );

    let test_patches = patches_at_k(&test_clouds, &test_points, k).unwrap();
    let preds = predict_all(&test_patches, &result.params).unwrap();
    let gts: Vec<_> = test_points.iter().map(|p| p.gt).collect();
    let net = AngleErrorSet::compute(&preds, &gts).unwrap();
    println!("tmhsa@{}: {}", k, net.summary().unwrap());

    for kk in [5usize, 8, 16, 50] {
        let patches = patches_at_k(&test_clouds, &test_points, kk).unwrap();
        let preds: Vec<_> = patches.iter().map(|p| pca_normal(p).unwrap()).collect();
        let set = AngleErrorSet::compute(&preds, &gts).unwrap();
        println!("pca@{}: {}", kk, set.summary().unwrap());
    }
    println!("t = {:.4}", result.params.temperature());
    println!("total {:.1?}", t0.elapsed());
}
