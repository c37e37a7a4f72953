//! `attn-dump`: export attention weights for selected patches as a stacked
//! grayscale image (one patch per row, nearest neighbour leftmost) plus raw
//! CSVs for external rendering.

use std::io::Write as _;

use anyhow::{bail, Context as _};
use patchnorm::io::{read_xyz, write_attention_map};
use patchnorm::knn::{extract_patch, SpatialIndex};
use patchnorm::model::export_attention;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{load_checkpoint, select_indices};
use crate::config::{toml_int, toml_str, Context};
use crate::AttnDumpArgs;

pub fn run(args: &AttnDumpArgs, ctx: &Context) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cloud = read_xyz(&args.input)?;
    let index = SpatialIndex::build(&cloud)?;

    let centers: Vec<usize> = match (&args.patch_indices, args.num_patches) {
        (Some(list), _) => {
            for &i in list {
                if i >= cloud.len() {
                    bail!("patch index {} out of range for {} points", i, cloud.len());
                }
            }
            list.clone()
        }
        (None, Some(n)) => {
            let mut rng = ChaCha20Rng::seed_from_u64(ctx.seed);
            let mut picked: Vec<usize> =
                rand::seq::index::sample(&mut rng, cloud.len(), n.min(cloud.len()))
                    .iter()
                    .collect();
            picked.sort_unstable();
            picked
        }
        (None, None) => select_indices(cloud.len(), None, Some(16), ctx.seed)?,
    };
    if centers.is_empty() {
        bail!("no patches selected");
    }

    let mut rows = Vec::with_capacity(centers.len());
    let mut per_point = Vec::with_capacity(centers.len());
    for &c in &centers {
        let patch = extract_patch(&cloud, &index, c, ckpt.config.k)?;
        let map = export_attention(&patch, &ckpt.params)?;
        rows.push(map.aggregated.clone());
        per_point.push((c, patch.neighbor_indices.clone(), map.aggregated));
    }

    let pgm_path = ctx.out_dir.join("attention.pgm");
    let csv_path = ctx.out_dir.join("attention.csv");
    write_attention_map(&rows, &pgm_path, &csv_path)?;

    // Per-point weights for 3D rendering: which cloud point received how
    // much attention within each patch.
    let points_path = ctx.out_dir.join("attention_points.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&points_path)
            .with_context(|| format!("creating {}", points_path.display()))?,
    );
    writeln!(w, "patch_center,neighbor_rank,point_index,weight").context("writing weights")?;
    for (center, neighbors, weights) in &per_point {
        for (rank, (&point, &weight)) in neighbors.iter().zip(weights.iter()).enumerate() {
            writeln!(w, "{},{},{},{:.16e}", center, rank, point, weight)
                .context("writing weights")?;
        }
    }
    drop(w);

    ctx.echo_effective(
        "attn-dump",
        &[
            ("input", toml_str(args.input.display().to_string())),
            ("checkpoint", toml_str(args.checkpoint.display().to_string())),
            ("patches", toml_int(centers.len())),
            ("k", toml_int(ckpt.config.k)),
        ],
    )?;
    println!("wrote {}", pgm_path.display());
    println!("wrote {}", csv_path.display());
    println!("wrote {}", points_path.display());
    Ok(())
}
