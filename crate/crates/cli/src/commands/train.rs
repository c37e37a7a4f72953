//! `train`: fit the attention model on synthetic presets or a dataset
//! manifest, writing a checkpoint and the loss curve.

use std::io::Write as _;

use anyhow::{bail, Context as _};
use nalgebra::Vector3;
use patchnorm::cloud::normalize_to_unit_sphere;
use patchnorm::datasets::{
    crease_shape_specs, cube_shape_specs, labeled_patches, mixed_shape_specs, realize_shapes,
    sample_eval_points, LabeledCloud,
};
use patchnorm::io::DatasetManifest;
use patchnorm::knn::{extract_patch, Patch, SpatialIndex};
use patchnorm::model::{train, Checkpoint, ModelConfig, TrainConfig};

use crate::config::{pick, toml_int, toml_str, toml_usize_list, Context};
use crate::{SyntheticPreset, TrainArgs};

pub fn run(args: &TrainArgs, ctx: &Context) -> anyhow::Result<()> {
    let k = pick(args.k, ctx.file.shared.k, 50);
    let mcfg = ModelConfig {
        k,
        feature_dim: pick(args.feature_dim, ctx.file.model.feature_dim, 24),
        heads: pick(args.heads, ctx.file.model.heads, 4),
        mlp_widths: ctx.file.model.mlp_widths.unwrap_or([8, 24, 24]),
        ffn_hidden: ctx.file.model.ffn_hidden.unwrap_or(48),
        fc_widths: ctx
            .file
            .model
            .fc_widths
            .clone()
            .unwrap_or_else(|| vec![24, 8, 3]),
        seed: ctx.seed,
    };
    let tcfg = TrainConfig {
        epochs: pick(args.epochs, ctx.file.train.epochs, 150),
        batch_size: pick(args.batch_size, ctx.file.train.batch_size, 256),
        lr: pick(args.lr, ctx.file.train.lr, 2e-3),
        lr_decay_factor: pick(args.lr_decay_factor, ctx.file.train.lr_decay_factor, 10.0),
        lr_decay_epochs: pick(
            args.lr_decay_epochs.clone(),
            ctx.file.train.lr_decay_epochs.clone(),
            vec![100, 125],
        ),
        seed: ctx.seed,
        freeze_temperature: args.freeze_temperature
            || ctx.file.train.freeze_temperature.unwrap_or(false),
        ..TrainConfig::default()
    };

    let shapes_per_kind = pick(args.shapes_per_kind, ctx.file.train.shapes_per_kind, 3);
    let points_per_shape = pick(args.points_per_shape, ctx.file.train.points_per_shape, 3000);
    let patches_per_shape = pick(args.patches_per_shape, ctx.file.train.patches_per_shape, 900);

    let (source, dataset) = match (&args.synthetic, &args.dataset) {
        (Some(preset), None) => (
            format!("synthetic:{:?}", preset).to_lowercase(),
            synthetic_dataset(
                *preset,
                shapes_per_kind,
                points_per_shape,
                patches_per_shape,
                k,
                ctx.seed,
            )?,
        ),
        (None, Some(root)) => {
            let split = args
                .split
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "trainingset.txt".into());
            (
                format!("{}:{}", root.display(), split),
                manifest_dataset(root, &split, patches_per_shape, k, ctx.seed)?,
            )
        }
        (None, None) => bail!("either --synthetic or --dataset is required"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if dataset.is_empty() {
        bail!("training dataset is empty");
    }
    log::info!(
        "training on {} patches (k={}, {} epochs, batch {})",
        dataset.len(),
        k,
        tcfg.epochs,
        tcfg.batch_size
    );

    let result = train(&dataset, &tcfg, &mcfg)?;

    let ckpt_path = ctx.out_dir.join("checkpoint.json");
    Checkpoint::new(mcfg.clone(), result.params.clone()).save(&ckpt_path)?;
    let curve_path = ctx.out_dir.join("loss_curve.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&curve_path)
            .with_context(|| format!("creating {}", curve_path.display()))?,
    );
    writeln!(w, "epoch,loss").context("writing loss curve")?;
    for (epoch, loss) in result.loss_curve.iter().enumerate() {
        writeln!(w, "{},{:.16e}", epoch, loss).context("writing loss curve")?;
    }
    drop(w);

    ctx.echo_effective(
        "train",
        &[
            ("source", toml_str(&source)),
            ("k", toml_int(k)),
            ("patches", toml_int(dataset.len())),
            ("epochs", toml_int(tcfg.epochs)),
            ("batch_size", toml_int(tcfg.batch_size)),
            ("lr", toml::Value::Float(tcfg.lr)),
            ("lr_decay_epochs", toml_usize_list(&tcfg.lr_decay_epochs)),
            (
                "freeze_temperature",
                toml::Value::Boolean(tcfg.freeze_temperature),
            ),
            ("feature_dim", toml_int(mcfg.feature_dim)),
            ("heads", toml_int(mcfg.heads)),
        ],
    )?;

    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", curve_path.display());
    println!(
        "initial_loss={:.6} final_loss={:.6} temperature={:.6}",
        result.loss_curve.first().unwrap(),
        result.loss_curve.last().unwrap(),
        result.params.temperature()
    );
    Ok(())
}

fn synthetic_dataset(
    preset: SyntheticPreset,
    shapes_per_kind: usize,
    points_per_shape: usize,
    patches_per_shape: usize,
    k: usize,
    seed: u64,
) -> anyhow::Result<Vec<(Patch, Vector3<f64>)>> {
    let specs = match preset {
        SyntheticPreset::Mixed => mixed_shape_specs(shapes_per_kind, points_per_shape, seed),
        SyntheticPreset::Creases => {
            crease_shape_specs(3 * shapes_per_kind, points_per_shape, seed)
        }
        SyntheticPreset::Cubes => cube_shape_specs(3 * shapes_per_kind, points_per_shape, seed),
    };
    let clouds = realize_shapes(&specs)?;
    let points = sample_eval_points(&clouds, patches_per_shape, seed.wrapping_add(1))?;
    Ok(labeled_patches(&clouds, &points, k)?)
}

fn manifest_dataset(
    root: &std::path::Path,
    split: &str,
    patches_per_shape: usize,
    k: usize,
    seed: u64,
) -> anyhow::Result<Vec<(Patch, Vector3<f64>)>> {
    let manifest = DatasetManifest::load(root, split)?;
    if manifest.shapes.is_empty() {
        bail!("manifest {} lists no shapes", split);
    }
    let mut labeled = Vec::new();
    for entry in &manifest.shapes {
        let raw = entry.load()?;
        let (cloud, _, _) = normalize_to_unit_sphere(&raw)?;
        let index = SpatialIndex::build(&cloud)?;
        labeled.push(LabeledCloud {
            name: entry.name.clone(),
            ambiguous: vec![false; cloud.len()],
            cloud,
            index,
        });
    }
    let per_cloud = patches_per_shape.min(
        labeled
            .iter()
            .map(|lc| lc.cloud.len())
            .min()
            .unwrap_or(patches_per_shape),
    );
    let points = sample_eval_points(&labeled, per_cloud, seed.wrapping_add(1))?;
    let mut dataset = Vec::with_capacity(points.len());
    for p in &points {
        let lc = &labeled[p.cloud];
        dataset.push((extract_patch(&lc.cloud, &lc.index, p.center, k)?, p.gt));
    }
    Ok(dataset)
}
