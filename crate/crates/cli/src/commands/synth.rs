//! `synth`: generate one synthetic shape with analytic normals and an
//! ambiguity sidecar listing edge/crease points.

use std::io::Write as _;

use anyhow::{bail, Context as _};
use patchnorm::io::synth::{synth_shape, ShapeKind, SyntheticShapeSpec};
use patchnorm::io::{write_normals, write_xyz};

use crate::config::{toml_int, toml_str, Context};
use crate::SynthArgs;

pub fn run(args: &SynthArgs, ctx: &Context) -> anyhow::Result<()> {
    let kind_name = args.kind.as_deref().unwrap_or("sphere");
    let kind = match kind_name {
        "sphere" => ShapeKind::Sphere {
            radius: args.radius.unwrap_or(1.0),
        },
        "cube" => {
            let he = args
                .half_extents
                .clone()
                .unwrap_or_else(|| vec![1.0, 1.0, 1.0]);
            if he.len() != 3 {
                bail!("--half-extents needs 3 values");
            }
            ShapeKind::Cube {
                half_extents: [he[0], he[1], he[2]],
            }
        }
        "cylinder" => ShapeKind::Cylinder {
            radius: args.radius.unwrap_or(0.5),
            height: args.height.unwrap_or(2.0),
        },
        "torus" => ShapeKind::Torus {
            major_radius: args.major_radius.unwrap_or(1.0),
            minor_radius: args.minor_radius.unwrap_or(0.3),
        },
        "creased-plane" => ShapeKind::CreasedPlane {
            half_width: args.half_width.unwrap_or(1.0),
            half_depth: args.half_depth.unwrap_or(1.0),
            dihedral_deg: args.dihedral_deg.unwrap_or(90.0),
        },
        other => bail!(
            "unknown kind '{}'; expected sphere, cube, cylinder, torus, or creased-plane",
            other
        ),
    };
    let spec = SyntheticShapeSpec {
        kind,
        count: args.count.unwrap_or(2000),
        seed: ctx.seed,
    };
    let result = synth_shape(&spec)?;
    let name = args.name.clone().unwrap_or_else(|| kind_name.replace('-', "_"));

    let xyz_path = ctx.out_dir.join(format!("{}.xyz", name));
    let normals_path = ctx.out_dir.join(format!("{}.normals", name));
    write_xyz(&xyz_path, &result.cloud)?;
    write_normals(&normals_path, result.cloud.normals().unwrap())?;

    let ambiguous_path = ctx.out_dir.join(format!("{}.ambiguous", name));
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&ambiguous_path)
            .with_context(|| format!("creating {}", ambiguous_path.display()))?,
    );
    let mut flagged = 0usize;
    for (i, &a) in result.ambiguous.iter().enumerate() {
        if a {
            writeln!(w, "{}", i).context("writing ambiguity sidecar")?;
            flagged += 1;
        }
    }
    drop(w);

    ctx.echo_effective(
        "synth",
        &[
            ("kind", toml_str(kind_name)),
            ("count", toml_int(spec.count)),
            ("name", toml_str(&name)),
            ("ambiguous_points", toml_int(flagged)),
        ],
    )?;
    println!("wrote {}", xyz_path.display());
    println!("wrote {}", normals_path.display());
    println!("wrote {} ({} flagged points)", ambiguous_path.display(), flagged);
    Ok(())
}
