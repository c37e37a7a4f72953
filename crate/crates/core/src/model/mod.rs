//! Attention-based normal estimation network.
//!
//! Pipeline per patch: shared per-point 3-layer MLP -> temperature-adjusted
//! multi-head self-attention -> feed-forward block -> column-wise max pool
//! -> fully-connected head -> L2-normalized 3-vector. The softmax temperature
//! is a learnable scalar stored as theta with t = exp(theta), so t stays
//! positive under unconstrained updates; theta starts at 0, i.e. t = 1.

mod train;

pub use train::{
    adam_step, effective_lr, predict, predict_all, train, AdamState, TrainConfig, TrainResult,
};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::knn::Patch;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture hyperparameters. Widths are free except for the seams:
/// the MLP must end at `feature_dim`, the FC head must end at 3, and
/// `heads` must divide `feature_dim` for the per-head split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Patch size the model is trained at.
    pub k: usize,
    /// Feature width D carried through attention and the FFN.
    pub feature_dim: usize,
    /// Head count H; per-head width is feature_dim / heads.
    pub heads: usize,
    /// Widths of the three shared per-point MLP layers (input width is 3).
    pub mlp_widths: [usize; 3],
    /// Inner width of the feed-forward block.
    pub ffn_hidden: usize,
    /// Widths of the FC head layers, ending in 3.
    pub fc_widths: Vec<usize>,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 50,
            feature_dim: 64,
            heads: 4,
            mlp_widths: [32, 64, 64],
            ffn_hidden: 128,
            fc_widths: vec![64, 32, 3],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if self.heads < 1 {
            return fail("heads must be at least 1".into());
        }
        if self.feature_dim < self.heads {
            return fail(format!(
                "feature_dim {} smaller than head count {}",
                self.feature_dim, self.heads
            ));
        }
        if self.feature_dim % self.heads != 0 {
            return fail(format!(
                "heads {} must divide feature_dim {}",
                self.heads, self.feature_dim
            ));
        }
        if self.mlp_widths.iter().any(|&w| w == 0) || self.ffn_hidden == 0 {
            return fail("layer widths must be positive".into());
        }
        if self.mlp_widths[2] != self.feature_dim {
            return fail(format!(
                "last MLP width {} must equal feature_dim {}",
                self.mlp_widths[2], self.feature_dim
            ));
        }
        if self.fc_widths.is_empty() || self.fc_widths.iter().any(|&w| w == 0) {
            return fail("fc_widths must be non-empty and positive".into());
        }
        if *self.fc_widths.last().unwrap() != 3 {
            return fail(format!(
                "last FC width must be 3, got {}",
                self.fc_widths.last().unwrap()
            ));
        }
        Ok(())
    }
}

/// One linear layer: w is in x out, b is 1 x out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

/// Per-head projections, each feature_dim x head_dim; no biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

/// All learnable tensors. The softmax temperature lives here as
/// `log_temperature` (a 1x1 tensor); use [`ModelParams::temperature`] for t
/// itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mlp: Vec<Linear>,
    pub heads: Vec<HeadParams>,
    pub w_o: Tensor,
    pub ffn: Vec<Linear>,
    pub fc: Vec<Linear>,
    pub log_temperature: Tensor,
}

fn kaiming_linear(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> Linear {
    let wb = (6.0 / fan_in as f64).sqrt();
    let bb = 1.0 / (fan_in as f64).sqrt();
    Linear {
        w: Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-wb..wb)),
        b: Tensor::from_fn(1, fan_out, |_, _| rng.random_range(-bb..bb)),
    }
}

fn kaiming_weight(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let wb = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-wb..wb))
}

impl ModelParams {
    /// Kaiming-uniform fan-in initialization; theta = 0 so the temperature
    /// starts at exactly 1.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let d = cfg.feature_dim;
        let dh = cfg.head_dim();
        let mut widths = vec![3];
        widths.extend_from_slice(&cfg.mlp_widths);
        let mlp = (0..3)
            .map(|i| kaiming_linear(&mut rng, widths[i], widths[i + 1]))
            .collect();
        let heads = (0..cfg.heads)
            .map(|_| HeadParams {
                w_q: kaiming_weight(&mut rng, d, dh),
                w_k: kaiming_weight(&mut rng, d, dh),
                w_v: kaiming_weight(&mut rng, d, dh),
            })
            .collect();
        let w_o = kaiming_weight(&mut rng, cfg.heads * dh, d);
        let ffn = vec![
            kaiming_linear(&mut rng, d, cfg.ffn_hidden),
            kaiming_linear(&mut rng, cfg.ffn_hidden, d),
        ];
        let mut fc = Vec::new();
        let mut prev = d;
        for &w in &cfg.fc_widths {
            fc.push(kaiming_linear(&mut rng, prev, w));
            prev = w;
        }
        Ok(ModelParams {
            mlp,
            heads,
            w_o,
            ffn,
            fc,
            log_temperature: Tensor::scalar_value(0.0),
        })
    }

    /// All-zero parameters (theta = 0, so t = 1); attention logits vanish and
    /// every attention map is uniform. Useful as a fixed point in tests.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.feature_dim;
        let dh = cfg.head_dim();
        let zl = |i: usize, o: usize| Linear {
            w: Tensor::zeros(i, o),
            b: Tensor::zeros(1, o),
        };
        let mut widths = vec![3];
        widths.extend_from_slice(&cfg.mlp_widths);
        let mut fc = Vec::new();
        let mut prev = d;
        for &w in &cfg.fc_widths {
            fc.push(zl(prev, w));
            prev = w;
        }
        Ok(ModelParams {
            mlp: (0..3).map(|i| zl(widths[i], widths[i + 1])).collect(),
            heads: (0..cfg.heads)
                .map(|_| HeadParams {
                    w_q: Tensor::zeros(d, dh),
                    w_k: Tensor::zeros(d, dh),
                    w_v: Tensor::zeros(d, dh),
                })
                .collect(),
            w_o: Tensor::zeros(cfg.heads * dh, d),
            ffn: vec![zl(d, cfg.ffn_hidden), zl(cfg.ffn_hidden, d)],
            fc,
            log_temperature: Tensor::scalar_value(0.0),
        })
    }

    /// Current softmax temperature t = exp(theta).
    pub fn temperature(&self) -> f64 {
        self.log_temperature.scalar().exp()
    }

    /// Canonical flat view of every learnable tensor; the optimizer and the
    /// tape binding both rely on this order. theta is last.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.mlp {
            out.push(&l.w);
            out.push(&l.b);
        }
        for h in &self.heads {
            out.push(&h.w_q);
            out.push(&h.w_k);
            out.push(&h.w_v);
        }
        out.push(&self.w_o);
        for l in &self.ffn {
            out.push(&l.w);
            out.push(&l.b);
        }
        for l in &self.fc {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.log_temperature);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.mlp {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for h in &mut self.heads {
            out.push(&mut h.w_q);
            out.push(&mut h.w_k);
            out.push(&mut h.w_v);
        }
        out.push(&mut self.w_o);
        for l in &mut self.ffn {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for l in &mut self.fc {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.log_temperature);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }
}

/// Parameters registered as leaves on one tape, in [`ModelParams::tensors`]
/// order. `temperature` is the derived exp(theta) node, not a leaf.
pub struct BoundParams {
    pub mlp: Vec<(Var, Var)>,
    pub heads: Vec<(Var, Var, Var)>,
    pub w_o: Var,
    pub ffn: Vec<(Var, Var)>,
    pub fc: Vec<(Var, Var)>,
    pub theta: Var,
    pub temperature: Var,
    /// Leaves in canonical order, parallel to `ModelParams::tensors`.
    pub leaves: Vec<Var>,
}

pub fn bind(params: &ModelParams, tape: &mut Tape) -> BoundParams {
    let leaves: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    let mut it = leaves.iter().copied();
    let mut next = || it.next().unwrap();
    let mlp: Vec<(Var, Var)> = (0..params.mlp.len()).map(|_| (next(), next())).collect();
    let heads: Vec<(Var, Var, Var)> = (0..params.heads.len())
        .map(|_| (next(), next(), next()))
        .collect();
    let w_o = next();
    let ffn: Vec<(Var, Var)> = (0..params.ffn.len()).map(|_| (next(), next())).collect();
    let fc: Vec<(Var, Var)> = (0..params.fc.len()).map(|_| (next(), next())).collect();
    let theta = next();
    let temperature = tape.exp_scalar(theta);
    BoundParams {
        mlp,
        heads,
        w_o,
        ffn,
        fc,
        theta,
        temperature,
        leaves,
    }
}

pub fn patch_to_tensor(patch: &Patch) -> Tensor {
    Tensor::from_fn(patch.k(), 3, |i, j| patch.centered[i][j])
}

/// Shared per-point MLP on the tape: three linear layers, ReLU after each.
pub fn mlp_features_var(tape: &mut Tape, x: Var, mlp: &[(Var, Var)]) -> Var {
    let mut h = x;
    for &(w, b) in mlp {
        let lin = tape.matmul(h, w);
        let biased = tape.add(lin, b);
        h = tape.relu(biased);
    }
    h
}

/// Temperature-adjusted self-attention for one head on the tape. Returns
/// (output, attention); attention rows are the softmax over scaled
/// temperature-adjusted dot products.
pub fn tsa_var(
    tape: &mut Tape,
    f: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    t: Var,
) -> Result<(Var, Var)> {
    let t_val = tape.value(t).scalar();
    if t_val <= 0.0 {
        return Err(Error::NonPositiveTemperature { value: t_val });
    }
    let d_h = tape.value(w_q).cols();
    let f_t = tape.scalar_div(f, t);
    let q = tape.matmul(f_t, w_q);
    let k = tape.matmul(f_t, w_k);
    let v = tape.matmul(f_t, w_v);
    let kt = tape.transpose(k);
    let qk = tape.matmul(q, kt);
    let logits = tape.scalar_mul(qk, 1.0 / (d_h as f64).sqrt());
    let attn = tape.softmax_rows(logits);
    let out = tape.matmul(attn, v);
    Ok((out, attn))
}

/// Multi-head composition: per-head TSA outputs concatenated along columns and
/// projected back to feature width. Returns (output, per-head attention).
pub fn tmhsa_var(
    tape: &mut Tape,
    f: Var,
    heads: &[(Var, Var, Var)],
    w_o: Var,
    t: Var,
) -> Result<(Var, Vec<Var>)> {
    let mut outs = Vec::with_capacity(heads.len());
    let mut attns = Vec::with_capacity(heads.len());
    for &(w_q, w_k, w_v) in heads {
        let (o, a) = tsa_var(tape, f, w_q, w_k, w_v, t)?;
        outs.push(o);
        attns.push(a);
    }
    let cat = tape.concat_cols(&outs);
    let out = tape.matmul(cat, w_o);
    Ok((out, attns))
}

/// Everything downstream code wants from one forward pass.
pub struct ForwardVars {
    pub features: Var,
    pub attended: Var,
    pub attention: Vec<Var>,
    pub descriptor: Var,
    pub normal: Var,
}

/// Full pipeline on the tape; `x` is the k x 3 centered patch leaf.
pub fn forward_var(tape: &mut Tape, x: Var, p: &BoundParams) -> Result<ForwardVars> {
    let features = mlp_features_var(tape, x, &p.mlp);
    let (attended, attention) = tmhsa_var(tape, features, &p.heads, p.w_o, p.temperature)?;
    let lin1 = tape.matmul(attended, p.ffn[0].0);
    let b1 = tape.add(lin1, p.ffn[0].1);
    let h1 = tape.relu(b1);
    let lin2 = tape.matmul(h1, p.ffn[1].0);
    let ffn_out = tape.add(lin2, p.ffn[1].1);
    let descriptor = tape.max_rows(ffn_out);
    let mut h = descriptor;
    for (i, &(w, b)) in p.fc.iter().enumerate() {
        let lin = tape.matmul(h, w);
        h = tape.add(lin, b);
        if i + 1 < p.fc.len() {
            h = tape.relu(h);
        }
    }
    let normal = tape.l2_normalize_row(h);
    Ok(ForwardVars {
        features,
        attended,
        attention,
        descriptor,
        normal,
    })
}

/// Sine distance on the tape: |pred x gt| / (|pred| |gt|). Scalar output.
pub fn sine_loss_var(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let np = tape.value(pred).data().iter().map(|v| v * v).sum::<f64>();
    let ng = tape.value(gt).data().iter().map(|v| v * v).sum::<f64>();
    if np == 0.0 || ng == 0.0 {
        return Err(Error::ZeroVectorInLoss);
    }
    let c = tape.cross3(pred, gt);
    let num = tape.norm2(c);
    let dp = tape.norm2(pred);
    let dg = tape.norm2(gt);
    let denom = tape.hadamard(dp, dg);
    Ok(tape.scalar_div(num, denom))
}

/// Per-head attention of one patch plus the mean attention received per
/// neighbour (over heads and query rows); the aggregate sums to 1.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub per_head: Vec<Tensor>,
    pub aggregated: Vec<f64>,
}

impl AttentionMap {
    fn from_heads(per_head: Vec<Tensor>) -> Self {
        let k = per_head[0].cols();
        let h = per_head.len();
        let mut aggregated = vec![0.0; k];
        for a in &per_head {
            for i in 0..a.rows() {
                for j in 0..k {
                    aggregated[j] += a.get(i, j);
                }
            }
        }
        let norm = (h * per_head[0].rows()) as f64;
        for v in &mut aggregated {
            *v /= norm;
        }
        AttentionMap {
            per_head,
            aggregated,
        }
    }
}

/// MLP features of one patch as a plain tensor.
pub fn mlp_features(patch: &Patch, params: &ModelParams) -> Tensor {
    let mut tape = Tape::new();
    let x = tape.leaf(patch_to_tensor(patch));
    let mlp: Vec<(Var, Var)> = params
        .mlp
        .iter()
        .map(|l| {
            let w = tape.leaf(l.w.clone());
            let b = tape.leaf(l.b.clone());
            (w, b)
        })
        .collect();
    let f = mlp_features_var(&mut tape, x, &mlp);
    tape.value(f).clone()
}

/// Single-head attention as plain tensors; returns (output, attention).
pub fn tsa(
    f: &Tensor,
    w_q: &Tensor,
    w_k: &Tensor,
    w_v: &Tensor,
    t: f64,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let fv = tape.leaf(f.clone());
    let qv = tape.leaf(w_q.clone());
    let kv = tape.leaf(w_k.clone());
    let vv = tape.leaf(w_v.clone());
    let tv = tape.leaf(Tensor::scalar_value(t));
    let (out, attn) = tsa_var(&mut tape, fv, qv, kv, vv, tv)?;
    Ok((tape.value(out).clone(), tape.value(attn).clone()))
}

/// Multi-head attention of a feature set as plain tensors.
pub fn tmhsa(f: &Tensor, params: &ModelParams) -> Result<(Tensor, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let fv = tape.leaf(f.clone());
    let p = bind(params, &mut tape);
    let (out, attns) = tmhsa_var(&mut tape, fv, &p.heads, p.w_o, p.temperature)?;
    Ok((
        tape.value(out).clone(),
        attns.iter().map(|&a| tape.value(a).clone()).collect(),
    ))
}

/// Full forward pass of one patch: predicted unit normal plus its attention
/// map.
pub fn forward(patch: &Patch, params: &ModelParams) -> Result<(Vector3<f64>, AttentionMap)> {
    let mut tape = Tape::new();
    let x = tape.leaf(patch_to_tensor(patch));
    let p = bind(params, &mut tape);
    let fwd = forward_var(&mut tape, x, &p)?;
    let n = tape.value(fwd.normal);
    let normal = Vector3::new(n.get(0, 0), n.get(0, 1), n.get(0, 2));
    let per_head = fwd
        .attention
        .iter()
        .map(|&a| tape.value(a).clone())
        .collect();
    Ok((normal, AttentionMap::from_heads(per_head)))
}

/// Attention map of one patch under the given parameters.
pub fn export_attention(patch: &Patch, params: &ModelParams) -> Result<AttentionMap> {
    forward(patch, params).map(|(_, m)| m)
}

/// Sine distance between two plain vectors, in [0, 1]; sign-blind.
pub fn sine_loss(pred: &Vector3<f64>, gt: &Vector3<f64>) -> Result<f64> {
    let np = pred.norm();
    let ng = gt.norm();
    if np == 0.0 || ng == 0.0 {
        return Err(Error::ZeroVectorInLoss);
    }
    Ok((pred.cross(gt).norm() / (np * ng)).min(1.0))
}

/// Versioned checkpoint: config plus every parameter tensor, JSON-encoded.
/// f64 values round-trip exactly through the shortest-representation encoder,
/// so save -> load reproduces bit-identical forward outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            params,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        use std::io::Write;
        writeln!(w).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                got: ckpt.version,
            });
        }
        ckpt.config.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_detailed;
    use crate::cloud::PointCloud;
    use crate::knn::{build_index, extract_patch};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            k: 6,
            feature_dim: 8,
            heads: 2,
            mlp_widths: [4, 8, 8],
            ffn_hidden: 8,
            fc_widths: vec![8, 3],
            seed: 1,
        }
    }

    fn random_patch(rng: &mut ChaCha20Rng, k: usize) -> Patch {
        let points: Vec<Vector3<f64>> = (0..(k * 3).max(8))
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(points);
        let index = build_index(&cloud).unwrap();
        extract_patch(&cloud, &index, 0, k).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut bad = ModelConfig::default();
        bad.heads = 5;
        assert!(bad.validate().is_err());
        let mut bad = ModelConfig::default();
        bad.mlp_widths[2] = 63;
        assert!(bad.validate().is_err());
        let mut bad = ModelConfig::default();
        bad.fc_widths = vec![64, 4];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_params_give_zero_features() {
        let cfg = tiny_config();
        let params = ModelParams::zeros(&cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let patch = random_patch(&mut rng, cfg.k);
        let f = mlp_features(&patch, &params);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_handles_single_point_patch() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let patch = random_patch(&mut rng, 1);
        let f = mlp_features(&patch, &params);
        assert_eq!(f.shape(), (1, cfg.feature_dim));
        let (n, _) = forward(&patch, &params).unwrap();
        assert!((n.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mlp_permutes_rows_with_input() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let patch = random_patch(&mut rng, cfg.k);
        let f = mlp_features(&patch, &params);

        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut shuffled = patch.clone();
        shuffled.centered = perm.iter().map(|&i| patch.centered[i]).collect();
        shuffled.neighbor_indices = perm.iter().map(|&i| patch.neighbor_indices[i]).collect();
        let g = mlp_features(&shuffled, &params);
        for (r, &src) in perm.iter().enumerate() {
            assert_eq!(g.row(r), f.row(src));
        }
    }

    #[test]
    fn tsa_single_row_reduces_to_value_projection() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let f = Tensor::from_fn(1, 4, |_, _| rng.random_range(-1.0..1.0));
        let w = |rng: &mut ChaCha20Rng| Tensor::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let (w_q, w_k, w_v) = (w(&mut rng), w(&mut rng), w(&mut rng));
        let t = 1.7;
        let (out, attn) = tsa(&f, &w_q, &w_k, &w_v, t).unwrap();
        assert_eq!(attn.data(), &[1.0]);
        // Output equals (f/t) W_v directly.
        let mut tape = Tape::new();
        let fv = tape.leaf(f);
        let wv = tape.leaf(w_v);
        let scaled = tape.scalar_mul(fv, 1.0 / t);
        let want = tape.matmul(scaled, wv);
        for (a, b) in out.data().iter().zip(tape.value(want).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_rows_give_uniform_attention() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Tensor::from_fn(5, 4, |_, j| row[j]);
        let w = |rng: &mut ChaCha20Rng| Tensor::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let (out, attn) = tsa(&f, &w(&mut rng), &w(&mut rng), &w(&mut rng), 1.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((attn.get(i, j) - 0.2).abs() < 1e-12);
            }
            assert_eq!(out.row(i), out.row(0));
        }
    }

    fn mean_row_entropy(attn: &Tensor) -> f64 {
        let mut total = 0.0;
        for i in 0..attn.rows() {
            for &p in attn.row(i) {
                if p > 0.0 {
                    total -= p * p.ln();
                }
            }
        }
        total / attn.rows() as f64
    }

    #[test]
    fn entropy_grows_with_temperature() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let f = Tensor::from_fn(8, 6, |_, _| rng.random_range(-2.0..2.0));
        let w = |rng: &mut ChaCha20Rng| Tensor::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let (w_q, w_k, w_v) = (w(&mut rng), w(&mut rng), w(&mut rng));
        let mut prev = -1.0;
        for t in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let (_, attn) = tsa(&f, &w_q, &w_k, &w_v, t).unwrap();
            let h = mean_row_entropy(&attn);
            assert!(h > prev, "entropy not increasing at t={}", t);
            prev = h;
        }
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let f = Tensor::zeros(3, 4);
        let w = Tensor::zeros(4, 2);
        let err = tsa(&f, &w, &w, &w, 0.0).unwrap_err();
        assert!(err.to_string().starts_with("non-positive temperature"));
    }

    #[test]
    fn single_head_identity_projection_matches_tsa() {
        let cfg = ModelConfig {
            k: 5,
            feature_dim: 4,
            heads: 1,
            mlp_widths: [4, 4, 4],
            ffn_hidden: 4,
            fc_widths: vec![3],
            seed: 7,
        };
        let mut params = ModelParams::init(&cfg).unwrap();
        params.w_o = Tensor::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let f = Tensor::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let (mh, _) = tmhsa(&f, &params).unwrap();
        let h = &params.heads[0];
        let (sh, _) = tsa(&f, &h.w_q, &h.w_k, &h.w_v, params.temperature()).unwrap();
        for (a, b) in mh.data().iter().zip(sh.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_values_zero_output() {
        let cfg = tiny_config();
        let mut params = ModelParams::init(&cfg).unwrap();
        for h in &mut params.heads {
            h.w_v = Tensor::zeros(cfg.feature_dim, cfg.head_dim());
        }
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let f = Tensor::from_fn(cfg.k, cfg.feature_dim, |_, _| rng.random_range(-1.0..1.0));
        let (out, _) = tmhsa(&f, &params).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tmhsa_shape_sweep() {
        for (k, d, h) in [(5usize, 8usize, 2usize), (10, 16, 4), (50, 32, 4)] {
            let cfg = ModelConfig {
                k,
                feature_dim: d,
                heads: h,
                mlp_widths: [4, d, d],
                ffn_hidden: d,
                fc_widths: vec![3],
                seed: 0,
            };
            let params = ModelParams::init(&cfg).unwrap();
            let f = Tensor::from_fn(k, d, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1);
            let (out, attns) = tmhsa(&f, &params).unwrap();
            assert_eq!(out.shape(), (k, d));
            assert_eq!(attns.len(), h);
            for a in attns {
                assert_eq!(a.shape(), (k, k));
            }
        }
    }

    #[test]
    fn forward_is_deterministic_unit_and_permutation_invariant() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..20 {
            let patch = random_patch(&mut rng, cfg.k);
            let (n1, _) = forward(&patch, &params).unwrap();
            let (n2, _) = forward(&patch, &params).unwrap();
            assert_eq!(n1, n2);
            assert!((n1.norm() - 1.0).abs() < 1e-12);

            let mut perm: Vec<usize> = (0..cfg.k).collect();
            perm.shuffle(&mut rng);
            let mut shuffled = patch.clone();
            shuffled.centered = perm.iter().map(|&i| patch.centered[i]).collect();
            shuffled.neighbor_indices =
                perm.iter().map(|&i| patch.neighbor_indices[i]).collect();
            let (n3, _) = forward(&shuffled, &params).unwrap();
            assert!((n1 - n3).norm() < 1e-9);
        }
    }

    #[test]
    fn sine_loss_hand_cases() {
        let x = Vector3::x();
        let y = Vector3::y();
        assert_eq!(sine_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(sine_loss(&x, &y).unwrap(), 1.0);
        let diag = Vector3::new(1.0, 1.0, 0.0).normalize();
        let want = (45.0f64).to_radians().sin();
        assert!((sine_loss(&diag, &x).unwrap() - want).abs() < 1e-12);
        // Sign-blind.
        assert_eq!(
            sine_loss(&diag, &x).unwrap(),
            sine_loss(&diag, &(-x)).unwrap()
        );
        assert_eq!(
            sine_loss(&Vector3::zeros(), &x).unwrap_err().to_string(),
            "zero vector in loss"
        );
    }

    #[test]
    fn attention_map_uniform_for_zero_logits() {
        let cfg = tiny_config();
        let params = ModelParams::zeros(&cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let patch = random_patch(&mut rng, cfg.k);
        let map = export_attention(&patch, &params).unwrap();
        let want = 1.0 / cfg.k as f64;
        for head in &map.per_head {
            for &v in head.data() {
                assert!((v - want).abs() < 1e-12);
            }
        }
        for &v in &map.aggregated {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_and_aggregate_are_stochastic() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        for _ in 0..20 {
            let patch = random_patch(&mut rng, cfg.k);
            let map = export_attention(&patch, &params).unwrap();
            for head in &map.per_head {
                for i in 0..head.rows() {
                    let s: f64 = head.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-9);
                    assert!(head.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
            }
            let total: f64 = map.aggregated.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(map.aggregated.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn full_pipeline_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for seed in 0..3u64 {
            let mut c = cfg.clone();
            c.seed = seed;
            let params = ModelParams::init(&c).unwrap();
            let patch = random_patch(&mut rng, c.k);
            let gt = Vector3::new(
                rng.random_range(-1.0f64..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();

            let mut leaves: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
            leaves.push(patch_to_tensor(&patch));
            leaves.push(Tensor::from_vec(1, 3, vec![gt.x, gt.y, gt.z]));
            let n_params = leaves.len() - 2;

            let report = grad_check_detailed(
                |tape, vars| {
                    let p = rebind(tape, vars, n_params);
                    let fwd = forward_var(tape, vars[n_params], &p).unwrap();
                    sine_loss_var(tape, fwd.normal, vars[n_params + 1]).unwrap()
                },
                &leaves,
                1e-6,
            )
            .unwrap();
            assert!(
                report.max_resolved_rel_error < 1e-4,
                "pipeline grad err {} at seed {}",
                report.max_resolved_rel_error,
                seed
            );
        }
    }

    /// Reassembles a BoundParams from pre-registered leaves (tiny_config
    /// layout) for grad_check, which owns leaf registration.
    fn rebind(tape: &mut Tape, vars: &[Var], n_params: usize) -> BoundParams {
        let mut it = vars[..n_params].iter().copied();
        let mut next = || it.next().unwrap();
        let mlp: Vec<(Var, Var)> = (0..3).map(|_| (next(), next())).collect();
        let heads: Vec<(Var, Var, Var)> = (0..2).map(|_| (next(), next(), next())).collect();
        let w_o = next();
        let ffn: Vec<(Var, Var)> = (0..2).map(|_| (next(), next())).collect();
        let fc: Vec<(Var, Var)> = (0..2).map(|_| (next(), next())).collect();
        let theta = next();
        let temperature = tape.exp_scalar(theta);
        BoundParams {
            mlp,
            heads,
            w_o,
            ffn,
            fc,
            theta,
            temperature,
            leaves: vars[..n_params].to_vec(),
        }
    }

    #[test]
    fn temperature_gradient_is_live() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let mut nonzero = 0;
        for _ in 0..20 {
            let patch = random_patch(&mut rng, cfg.k);
            let gt = Vector3::new(0.0, 0.0, 1.0);
            let mut tape = Tape::new();
            let x = tape.leaf(patch_to_tensor(&patch));
            let g = tape.leaf(Tensor::from_vec(1, 3, vec![gt.x, gt.y, gt.z]));
            let p = bind(&params, &mut tape);
            let fwd = forward_var(&mut tape, x, &p).unwrap();
            let loss = sine_loss_var(&mut tape, fwd.normal, g).unwrap();
            let grads = tape.backward(loss).unwrap();
            if grads.get(p.theta).unwrap().scalar().abs() > 0.0 {
                nonzero += 1;
            }
        }
        assert!(nonzero >= 19, "theta gradient dead in {} of 20", 20 - nonzero);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::new(cfg.clone(), params.clone()).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.config, cfg);
        assert_eq!(loaded.params, params);

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let patch = random_patch(&mut rng, cfg.k);
        let (n1, _) = forward(&patch, &params).unwrap();
        let (n2, _) = forward(&patch, &loaded.params).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn checkpoint_version_mismatch_rejected() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut ckpt = Checkpoint::new(cfg, params);
        ckpt.version = 99;
        ckpt.save(&path).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().starts_with("checkpoint version mismatch"));
    }
}
