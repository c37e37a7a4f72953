//! `sweep-k`: evaluate estimators across a neighbourhood-size grid and emit
//! a plot-ready CSV.

use std::io::Write as _;

use anyhow::{bail, Context as _};
use nalgebra::Vector3;
use patchnorm::classical::{jet_normal, pca_normal};
use patchnorm::cloud::normalize_to_unit_sphere;
use patchnorm::datasets::{
    crease_shape_specs, cube_shape_specs, mixed_shape_specs, patches_at_k, realize_shapes,
    sample_eval_points, LabeledCloud,
};
use patchnorm::io::{read_normals, read_xyz};
use patchnorm::knn::{Patch, SpatialIndex};
use patchnorm::metrics::AngleErrorSet;
use patchnorm::model::{predict, Checkpoint};
use rayon::prelude::*;

use super::{file_stem, load_checkpoint, sibling_normals_path};
use crate::config::{pick, pick_opt, toml_int, toml_str, toml_usize_list, Context};
use crate::{Estimator, SweepArgs, SyntheticPreset};

pub fn run(args: &SweepArgs, ctx: &Context) -> anyhow::Result<()> {
    let ks_raw = pick(args.ks.clone(), ctx.file.sweep.ks.clone(), vec![]);
    if ks_raw.is_empty() {
        bail!("--ks must list at least one neighbourhood size");
    }
    let mut ks = ks_raw.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() != ks_raw.len() {
        log::warn!(
            "duplicate k values removed: {} requested, {} unique",
            ks_raw.len(),
            ks.len()
        );
    }

    let estimators = match pick_opt(args.estimators.clone(), None) {
        Some(list) => list,
        None => match &ctx.file.sweep.estimators {
            Some(names) => names
                .iter()
                .map(|n| super::estimate::parse_estimator(n))
                .collect::<anyhow::Result<Vec<_>>>()?,
            None => vec![Estimator::Pca, Estimator::Jet],
        },
    };
    if estimators.iter().any(|e| *e == Estimator::Gt) {
        bail!("gt is not sweepable");
    }

    let samples_per_cloud = pick(
        args.samples_per_cloud,
        ctx.file.sweep.samples_per_cloud,
        500,
    );
    let ckpt = match estimators.contains(&Estimator::Tmhsa) {
        true => {
            let path = pick_opt(args.checkpoint.clone(), ctx.file.shared.checkpoint.clone())
                .ok_or_else(|| anyhow::anyhow!("tmhsa in the sweep requires --checkpoint"))?;
            Some(load_checkpoint(&path)?)
        }
        false => None,
    };

    let clouds = build_clouds(args, ctx)?;
    let sites = sample_eval_points(&clouds, samples_per_cloud, ctx.seed.wrapping_add(2))?;
    let gts: Vec<Vector3<f64>> = sites.iter().map(|p| p.gt).collect();
    log::info!(
        "sweeping {} sites over {} clouds, ks {:?}",
        sites.len(),
        clouds.len(),
        ks
    );

    let csv_path = ctx.out_dir.join("sweep.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&csv_path)
            .with_context(|| format!("creating {}", csv_path.display()))?,
    );
    writeln!(w, "k,estimator,rmse_deg,pgp5,pgp10").context("writing sweep csv")?;

    for &estimator in &estimators {
        let row_ks: Vec<usize> = match estimator {
            // Models are fixed-k: one row at the checkpoint's own k.
            Estimator::Tmhsa => vec![ckpt.as_ref().unwrap().config.k],
            _ => ks.clone(),
        };
        for &k in &row_ks {
            let patches = patches_at_k(&clouds, &sites, k)
                .with_context(|| format!("extracting patches at k={}", k))?;
            let preds = normals_for(&patches, estimator, ckpt.as_ref())
                .with_context(|| format!("{} at k={}", estimator.name(), k))?;
            let set = AngleErrorSet::compute(&preds, &gts)?;
            let line = format!(
                "{},{},{:.4},{:.4},{:.4}",
                k,
                estimator.name(),
                set.rmse()?,
                set.pgp(5.0)?,
                set.pgp(10.0)?
            );
            writeln!(w, "{}", line).context("writing sweep csv")?;
            println!("{}", line);
        }
    }
    drop(w);

    ctx.echo_effective(
        "sweep-k",
        &[
            ("ks", toml_usize_list(&ks)),
            (
                "estimators",
                toml::Value::Array(
                    estimators
                        .iter()
                        .map(|e| toml_str(e.name()))
                        .collect(),
                ),
            ),
            ("samples_per_cloud", toml_int(samples_per_cloud)),
            ("clouds", toml_int(clouds.len())),
        ],
    )?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn build_clouds(args: &SweepArgs, ctx: &Context) -> anyhow::Result<Vec<LabeledCloud>> {
    if !args.input.is_empty() {
        let mut clouds = Vec::new();
        for path in &args.input {
            let raw = read_xyz(path)?;
            let normals_path = sibling_normals_path(path);
            let normals = read_normals(&normals_path)
                .with_context(|| format!("sweep needs ground truth {}", normals_path.display()))?;
            let with_normals =
                patchnorm::cloud::PointCloud::with_normals(raw.points().to_vec(), normals)?;
            let (cloud, _, _) = normalize_to_unit_sphere(&with_normals)?;
            let index = SpatialIndex::build(&cloud)?;
            clouds.push(LabeledCloud {
                name: file_stem(path),
                ambiguous: vec![false; cloud.len()],
                cloud,
                index,
            });
        }
        return Ok(clouds);
    }
    let preset = args.synthetic.unwrap_or(SyntheticPreset::Creases);
    let shape_count = pick(args.shape_count, ctx.file.sweep.shape_count, 3);
    let points_per_shape = pick(
        args.points_per_shape,
        ctx.file.sweep.points_per_shape,
        3000,
    );
    let specs = match preset {
        SyntheticPreset::Mixed => {
            mixed_shape_specs(shape_count.div_ceil(3), points_per_shape, ctx.seed)
        }
        SyntheticPreset::Creases => crease_shape_specs(shape_count, points_per_shape, ctx.seed),
        SyntheticPreset::Cubes => cube_shape_specs(shape_count, points_per_shape, ctx.seed),
    };
    Ok(realize_shapes(&specs)?)
}

fn normals_for(
    patches: &[Patch],
    estimator: Estimator,
    ckpt: Option<&Checkpoint>,
) -> anyhow::Result<Vec<Vector3<f64>>> {
    let results: Result<Vec<Vector3<f64>>, patchnorm::Error> = match estimator {
        Estimator::Pca => patches.par_iter().map(pca_normal).collect(),
        Estimator::Jet => patches.par_iter().map(jet_normal).collect(),
        Estimator::Tmhsa => {
            let params = &ckpt.unwrap().params;
            patches.par_iter().map(|p| predict(p, params)).collect()
        }
        Estimator::Gt => unreachable!("rejected above"),
    };
    Ok(results?)
}

