//! `eval`: score a predicted normals file against ground truth.

use anyhow::bail;
use patchnorm::io::read_normals;
use patchnorm::metrics::AngleErrorSet;

use super::{summary_line, write_beta_csv, DEFAULT_ALPHAS};
use crate::config::{pick, toml_f64_list, toml_str, Context};
use crate::EvalArgs;

pub fn run(args: &EvalArgs, ctx: &Context) -> anyhow::Result<()> {
    let alphas = pick(
        args.alphas.clone(),
        ctx.file.shared.alphas.clone(),
        DEFAULT_ALPHAS.to_vec(),
    );
    let preds = read_normals(&args.pred)?;
    let gts = read_normals(&args.gt)?;
    if preds.len() != gts.len() {
        bail!(
            "prediction count {} != ground-truth count {}",
            preds.len(),
            gts.len()
        );
    }
    let set = AngleErrorSet::compute(&preds, &gts)?;
    write_beta_csv(&ctx.out_dir.join("eval_beta.csv"), &set)?;
    ctx.echo_effective(
        "eval",
        &[
            ("pred", toml_str(args.pred.display().to_string())),
            ("gt", toml_str(args.gt.display().to_string())),
            ("alphas", toml_f64_list(&alphas)),
        ],
    )?;
    println!("{}", summary_line(&set, &alphas)?);
    Ok(())
}
