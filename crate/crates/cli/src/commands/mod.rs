//! Subcommand implementations and the helpers they share.

pub mod attn;
pub mod estimate;
pub mod eval;
pub mod icp;
pub mod sweep;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use nalgebra::Vector3;
use patchnorm::classical::{jet_normal, pca_normal};
use patchnorm::cloud::PointCloud;
use patchnorm::knn::{extract_patch, SpatialIndex};
use patchnorm::metrics::AngleErrorSet;
use patchnorm::model::{predict, Checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::Estimator;

/// The conventional ground-truth companion of `<stem>.xyz`.
pub fn sibling_normals_path(input: &Path) -> PathBuf {
    input.with_extension("normals")
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".into())
}

pub fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Point indices to work on: the .pidx subset if given, further reduced to a
/// seeded random subsample if requested.
pub fn select_indices(
    n: usize,
    pidx: Option<&[usize]>,
    subsample: Option<usize>,
    seed: u64,
) -> anyhow::Result<Vec<usize>> {
    let mut indices: Vec<usize> = match pidx {
        Some(list) => {
            for &i in list {
                if i >= n {
                    bail!("pidx entry {} out of range for {} points", i, n);
                }
            }
            list.to_vec()
        }
        None => (0..n).collect(),
    };
    if let Some(m) = subsample {
        if m < indices.len() {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let chosen = rand::seq::index::sample(&mut rng, indices.len(), m);
            let mut picked: Vec<usize> = chosen.iter().map(|i| indices[i]).collect();
            picked.sort_unstable();
            indices = picked;
        }
    }
    Ok(indices)
}

/// Runs one classical estimator or the network over the selected points.
/// Failures are collected per point rather than aborting on the first.
pub fn estimate_normals(
    cloud: &PointCloud,
    index: &SpatialIndex,
    indices: &[usize],
    estimator: Estimator,
    k: usize,
    checkpoint: Option<&Checkpoint>,
) -> anyhow::Result<Vec<Vector3<f64>>> {
    let results: Vec<Result<Vector3<f64>, patchnorm::Error>> = match estimator {
        Estimator::Pca => indices
            .par_iter()
            .map(|&i| extract_patch(cloud, index, i, k).and_then(|p| pca_normal(&p)))
            .collect(),
        Estimator::Jet => indices
            .par_iter()
            .map(|&i| extract_patch(cloud, index, i, k).and_then(|p| jet_normal(&p)))
            .collect(),
        Estimator::Tmhsa => {
            let ckpt = checkpoint.ok_or_else(|| {
                anyhow::anyhow!("estimator tmhsa requires --checkpoint")
            })?;
            let model_k = ckpt.config.k;
            indices
                .par_iter()
                .map(|&i| {
                    extract_patch(cloud, index, i, model_k).and_then(|p| predict(&p, &ckpt.params))
                })
                .collect()
        }
        Estimator::Gt => bail!("gt estimator does not estimate; handled by the caller"),
    };

    let failures: Vec<(usize, String)> = results
        .iter()
        .enumerate()
        .filter_map(|(pos, r)| r.as_ref().err().map(|e| (indices[pos], e.to_string())))
        .collect();
    if !failures.is_empty() {
        let (first_idx, first_msg) = &failures[0];
        bail!(
            "{} of {} points failed (first: point {}: {})",
            failures.len(),
            indices.len(),
            first_idx,
            first_msg
        );
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}

/// Summary line with the configured PGP thresholds, e.g.
/// `rmse_deg=4.1 pgp5=0.97 pgp10=0.99`.
pub fn summary_line(set: &AngleErrorSet, alphas: &[f64]) -> anyhow::Result<String> {
    let mut line = format!("rmse_deg={:.4}", set.rmse()?);
    for &a in alphas {
        if (a - a.round()).abs() < 1e-12 {
            line.push_str(&format!(" pgp{}={:.4}", a.round() as i64, set.pgp(a)?));
        } else {
            line.push_str(&format!(" pgp{}={:.4}", a, set.pgp(a)?));
        }
    }
    Ok(line)
}

pub fn write_beta_csv(path: &Path, set: &AngleErrorSet) -> anyhow::Result<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    set.write_csv(std::io::BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub const DEFAULT_ALPHAS: [f64; 2] = [5.0, 10.0];
pub const DEFAULT_K: usize = 8;
