//! `icp`: perturb each destination shape by a fixed rigid motion and recover
//! it with point-to-plane ICP, using ground-truth or estimated normals.

use std::io::Write as _;

use anyhow::{bail, Context as _};
use nalgebra::Vector3;
use patchnorm::cloud::{normalize_to_unit_sphere, PointCloud};
use patchnorm::datasets::{cube_shape_specs, realize_shapes, LabeledCloud};
use patchnorm::io::{read_normals, read_xyz};
use patchnorm::knn::SpatialIndex;
use patchnorm::registration::{icp, make_perturbation, IcpConfig, IcpResult};

use super::{estimate_normals, file_stem, load_checkpoint};
use crate::config::{pick, pick_opt, toml_f64_list, toml_int, toml_str, Context};
use crate::{Estimator, IcpArgs};

pub fn run(args: &IcpArgs, ctx: &Context) -> anyhow::Result<()> {
    let normal_source = match args.normal_source {
        Some(e) => e,
        None => match ctx.file.icp.normal_source.as_deref() {
            Some(name) => super::estimate::parse_estimator(name)?,
            None => Estimator::Gt,
        },
    };
    let k = pick(args.k, ctx.file.shared.k, 50);
    let rot = vec3(pick(
        args.rot_deg.clone(),
        ctx.file.icp.rot_deg.map(|a| a.to_vec()),
        vec![10.0, 10.0, 10.0],
    ))?;
    let trans = vec3(pick(
        args.trans.clone(),
        ctx.file.icp.trans.map(|a| a.to_vec()),
        vec![0.01, 0.01, 0.01],
    ))?;
    let cfg = IcpConfig {
        stop_threshold: pick(args.stop_threshold, ctx.file.icp.stop_threshold, 1e-5),
        max_iterations: pick(
            args.max_iterations.map(|v| v as usize),
            ctx.file.icp.max_iterations,
            200,
        ),
        lm_damping_init: ctx.file.icp.lm_damping_init.unwrap_or(1e-4),
        lm_damping_up: ctx.file.icp.lm_damping_up.unwrap_or(10.0),
        lm_damping_down: ctx.file.icp.lm_damping_down.unwrap_or(0.3),
        lm_max_inner: ctx.file.icp.lm_max_inner.unwrap_or(50),
        lm_max_retries: ctx.file.icp.lm_max_retries.unwrap_or(20),
        lm_step_tol: ctx.file.icp.lm_step_tol.unwrap_or(1e-10),
    };

    let ckpt = match normal_source {
        Estimator::Tmhsa => {
            let path = pick_opt(args.checkpoint.clone(), ctx.file.shared.checkpoint.clone())
                .ok_or_else(|| anyhow::anyhow!("normal source tmhsa requires --checkpoint"))?;
            Some(load_checkpoint(&path)?)
        }
        _ => None,
    };

    let clouds = build_clouds(args, ctx)?;
    let perturbation = make_perturbation(&rot, &trans);

    let summary_path = ctx.out_dir.join("icp_summary.csv");
    let mut summary = std::io::BufWriter::new(
        std::fs::File::create(&summary_path)
            .with_context(|| format!("creating {}", summary_path.display()))?,
    );
    writeln!(summary, "shape,normal_source,converged,iterations,final_e_pt_pt")
        .context("writing summary")?;

    for lc in &clouds {
        let normals_d: Vec<Vector3<f64>> = match normal_source {
            Estimator::Gt => lc
                .cloud
                .normals()
                .ok_or_else(|| {
                    anyhow::anyhow!("shape {} has no ground-truth normals", lc.name)
                })?
                .to_vec(),
            _ => {
                let all: Vec<usize> = (0..lc.cloud.len()).collect();
                estimate_normals(&lc.cloud, &lc.index, &all, normal_source, k, ckpt.as_ref())
                    .with_context(|| format!("estimating normals for {}", lc.name))?
            }
        };
        let src = PointCloud::new(
            lc.cloud
                .points()
                .iter()
                .map(|p| perturbation.apply(p))
                .collect(),
        );
        let result = icp(&src, &lc.cloud, &normals_d, &cfg)
            .with_context(|| format!("registering {}", lc.name))?;
        write_trace(ctx, &lc.name, &result)?;
        let final_e = result.trace.last().map(|t| t.e_pt_pt).unwrap_or(f64::NAN);
        let iter_str = if result.converged {
            result.iterations.to_string()
        } else {
            "F".to_string()
        };
        writeln!(
            summary,
            "{},{},{},{},{:.6e}",
            lc.name,
            normal_source.name(),
            result.converged,
            iter_str,
            final_e
        )
        .context("writing summary")?;
        println!("{} {}", lc.name, iter_str);
    }
    drop(summary);

    ctx.echo_effective(
        "icp",
        &[
            ("normal_source", toml_str(normal_source.name())),
            ("k", toml_int(k)),
            ("rot_deg", toml_f64_list(&[rot.x, rot.y, rot.z])),
            ("trans", toml_f64_list(&[trans.x, trans.y, trans.z])),
            ("stop_threshold", toml::Value::Float(cfg.stop_threshold)),
            ("max_iterations", toml_int(cfg.max_iterations)),
            ("shapes", toml_int(clouds.len())),
        ],
    )?;
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn vec3(v: Vec<f64>) -> anyhow::Result<Vector3<f64>> {
    if v.len() != 3 {
        bail!("expected 3 components, got {}", v.len());
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn build_clouds(args: &IcpArgs, ctx: &Context) -> anyhow::Result<Vec<LabeledCloud>> {
    if !args.input.is_empty() {
        let mut clouds = Vec::new();
        for path in &args.input {
            let raw = read_xyz(path)?;
            let normals_path = super::sibling_normals_path(path);
            let cloud = if normals_path.exists() {
                PointCloud::with_normals(raw.points().to_vec(), read_normals(&normals_path)?)?
            } else {
                raw
            };
            let (cloud, _, _) = normalize_to_unit_sphere(&cloud)?;
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
    let shape_count = pick(args.shape_count, ctx.file.icp.shape_count, 5);
    let points_per_shape = pick(args.points_per_shape, ctx.file.icp.points_per_shape, 5000);
    let specs = cube_shape_specs(shape_count, points_per_shape, ctx.seed);
    Ok(realize_shapes(&specs)?)
}

fn write_trace(ctx: &Context, name: &str, result: &IcpResult) -> anyhow::Result<()> {
    let path = ctx.out_dir.join(format!("icp_{}_trace.csv", name));
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(w, "iteration,e_pt_pt,e_pt_plane,lambda,accepted_steps")
        .context("writing trace")?;
    for t in &result.trace {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.6e},{}",
            t.iteration,
            t.e_pt_pt,
            t.e_pt_plane,
            t.lambda,
            t.accepted_energies.len()
        )
        .context("writing trace")?;
    }
    Ok(())
}
