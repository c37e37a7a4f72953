//! `estimate`: predict normals for one cloud, score against ground truth
//! when available.

use anyhow::{bail, Context as _};
use patchnorm::io::{read_normals, read_pidx, read_xyz, write_normals};
use patchnorm::knn::SpatialIndex;
use patchnorm::metrics::AngleErrorSet;

use super::{
    estimate_normals, file_stem, load_checkpoint, select_indices, sibling_normals_path,
    summary_line, write_beta_csv, DEFAULT_ALPHAS, DEFAULT_K,
};
use crate::config::{pick, pick_opt, toml_f64_list, toml_int, toml_str, Context};
use crate::{Estimator, EstimateArgs};

pub fn run(args: &EstimateArgs, ctx: &Context) -> anyhow::Result<()> {
    let estimator = pick_estimator(args, ctx)?;
    let k = pick(args.k, ctx.file.shared.k, DEFAULT_K);
    let alphas = pick(
        args.alphas.clone(),
        ctx.file.shared.alphas.clone(),
        DEFAULT_ALPHAS.to_vec(),
    );
    let checkpoint_path = pick_opt(args.checkpoint.clone(), ctx.file.shared.checkpoint.clone());

    let cloud = read_xyz(&args.input)?;
    let gt_path = args
        .normals
        .clone()
        .or_else(|| Some(sibling_normals_path(&args.input)).filter(|p| p.exists()));
    let gt = match &gt_path {
        Some(path) => Some(read_normals(path)?),
        None => None,
    };
    if let Some(gt) = &gt {
        if gt.len() != cloud.len() {
            bail!(
                "normals file has {} entries for {} points",
                gt.len(),
                cloud.len()
            );
        }
    }

    let pidx = match &args.pidx {
        Some(path) => Some(read_pidx(path)?),
        None => None,
    };
    let indices = select_indices(cloud.len(), pidx.as_deref(), args.subsample, ctx.seed)?;
    if indices.is_empty() {
        bail!("no points selected");
    }
    let full_selection = indices.len() == cloud.len();

    let stem = file_stem(&args.input);
    let out_normals = ctx.out_dir.join(format!("{}.normals", stem));
    if let Some(gt) = &gt_path {
        if estimator != Estimator::Gt && same_file(gt, &out_normals) {
            bail!(
                "output {} would overwrite the ground-truth normals; use a different --out-dir",
                out_normals.display()
            );
        }
    }

    let ckpt = match (estimator, &checkpoint_path) {
        (Estimator::Tmhsa, Some(path)) => Some(load_checkpoint(path)?),
        (Estimator::Tmhsa, None) => bail!("estimator tmhsa requires --checkpoint"),
        _ => None,
    };
    if let Some(c) = &ckpt {
        if args.k.is_some() && k != c.config.k {
            log::warn!(
                "requested k={} but the checkpoint was trained at k={}; using {}",
                k,
                c.config.k,
                c.config.k
            );
        }
    }

    let preds = match estimator {
        Estimator::Gt => {
            let path = gt_path
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("gt estimator needs a ground-truth normals file"))?;
            if full_selection {
                // Bit-for-bit passthrough of the source file.
                std::fs::copy(path, &out_normals)
                    .with_context(|| format!("copying {}", path.display()))?;
            }
            let all = gt.as_ref().unwrap();
            indices.iter().map(|&i| all[i]).collect()
        }
        _ => {
            let index = SpatialIndex::build(&cloud)?;
            estimate_normals(&cloud, &index, &indices, estimator, k, ckpt.as_ref())?
        }
    };
    if !(estimator == Estimator::Gt && full_selection) {
        write_normals(&out_normals, &preds)?;
    }
    if !full_selection {
        let idx_path = ctx.out_dir.join(format!("{}_indices.csv", stem));
        let mut text = String::from("index\n");
        for &i in &indices {
            text.push_str(&format!("{}\n", i));
        }
        std::fs::write(&idx_path, text)
            .with_context(|| format!("writing {}", idx_path.display()))?;
    }

    ctx.echo_effective(
        "estimate",
        &[
            ("input", toml_str(args.input.display().to_string())),
            ("estimator", toml_str(estimator.name())),
            ("k", toml_int(k)),
            ("alphas", toml_f64_list(&alphas)),
            ("points", toml_int(indices.len())),
        ],
    )?;

    println!("wrote {}", out_normals.display());
    if let Some(gt) = &gt {
        let selected_gt: Vec<_> = indices.iter().map(|&i| gt[i]).collect();
        let set = AngleErrorSet::compute(&preds, &selected_gt)?;
        write_beta_csv(&ctx.out_dir.join(format!("{}_beta.csv", stem)), &set)?;
        println!("{}", summary_line(&set, &alphas)?);
    } else {
        println!("no ground truth available; skipping metrics");
    }
    Ok(())
}

fn pick_estimator(args: &EstimateArgs, ctx: &Context) -> anyhow::Result<Estimator> {
    if let Some(e) = args.estimator {
        return Ok(e);
    }
    match ctx.file.shared.estimator.as_deref() {
        Some(name) => parse_estimator(name),
        None => Ok(Estimator::Pca),
    }
}

/// Path equality that tolerates the second file not existing yet: resolve the
/// parent directories and compare the joined file names.
fn same_file(a: &std::path::Path, b: &std::path::Path) -> bool {
    fn resolved(p: &std::path::Path) -> Option<std::path::PathBuf> {
        let parent = match p.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => std::path::Path::new("."),
        };
        Some(parent.canonicalize().ok()?.join(p.file_name()?))
    }
    match (resolved(a), resolved(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

pub fn parse_estimator(name: &str) -> anyhow::Result<Estimator> {
    match name {
        "pca" => Ok(Estimator::Pca),
        "jet" => Ok(Estimator::Jet),
        "tmhsa" => Ok(Estimator::Tmhsa),
        "gt" => Ok(Estimator::Gt),
        other => bail!("unknown estimator '{}'", other),
    }
}
