//! Graph assembly for the enhancement network.
//!
//! The same builder code serves two purposes: in `Init` mode it creates and
//! registers every parameter tensor while tracing a dummy forward pass, and
//! in `Use` mode it fetches the stored tensors. Because both modes walk the
//! identical code path, parameter names, shapes and sharing can never drift
//! apart between initialization and inference.

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TaylorConfig;
use crate::autodiff::{Graph, ParamStore, Tensor, VarId};
use crate::error::{Error, Result};

const NORM_EPS: f32 = 1e-5;

pub(crate) enum ParamSource<'a> {
    Init { store: &'a mut ParamStore, rng: ChaCha8Rng },
    Use { store: &'a ParamStore },
}

pub(crate) struct NetCtx<'a> {
    pub g: &'a mut Graph<f32>,
    source: ParamSource<'a>,
    /// Whether parameters enter the graph as differentiable leaves.
    trainable: bool,
    /// Name -> node id for every parameter touched by this trace. A name
    /// requested twice maps to the same node, which is what makes shared
    /// derivative modules accumulate their gradients into one tensor.
    pub ids: BTreeMap<String, VarId>,
}

#[derive(Clone, Copy)]
enum Init {
    FanIn(usize),
    Zero,
    One,
    Value(f32),
}

impl<'a> NetCtx<'a> {
    pub fn init_mode(g: &'a mut Graph<f32>, store: &'a mut ParamStore, seed: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Self { g, source: ParamSource::Init { store, rng }, trainable: false, ids: BTreeMap::new() }
    }

    pub fn use_mode(g: &'a mut Graph<f32>, store: &'a ParamStore, trainable: bool) -> Self {
        Self { g, source: ParamSource::Use { store }, trainable, ids: BTreeMap::new() }
    }

    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<VarId> {
        if let Some(&id) = self.ids.get(name) {
            if self.g.shape(id) != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} requested with shape {shape:?} but traced as {:?}",
                    self.g.shape(id)
                )));
            }
            return Ok(id);
        }
        let tensor = match &mut self.source {
            ParamSource::Init { store, rng } => {
                if !store.contains(name) {
                    let t = match init {
                        Init::FanIn(fan) => Tensor::fan_in_uniform(shape, fan, rng),
                        Init::Zero => Tensor::zeros(shape),
                        Init::One => Tensor::full(shape, 1.0),
                        Init::Value(v) => Tensor::full(shape, v),
                    };
                    store.insert(name, t)?;
                }
                store.get(name).expect("just inserted").clone()
            }
            ParamSource::Use { store } => store.get(name)?.clone(),
        };
        if tensor.shape() != shape {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                tensor.shape()
            )));
        }
        let id = if self.trainable { self.g.leaf(tensor) } else { self.g.constant(tensor) };
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }
}

/// Node ids of everything the forward pass exposes.
pub(crate) struct ForwardIds {
    pub gain: VarId,
    pub coarse: (VarId, VarId),
    /// `terms[q-1]` holds T(q) for q = 1..=Q.
    pub terms: Vec<(VarId, VarId)>,
    pub estimate: (VarId, VarId),
}

/// Output frequency size of one k=3, stride-2 downsampling with a single
/// low-side pad bin.
pub(crate) fn down_f(f: usize) -> usize {
    (f + 1 - 3) / 2 + 1
}

// ---- shared layer builders ----

/// Gated 2-D convolution: value and gate convs with identical geometry,
/// elementwise `value * sigmoid(gate)`.
fn glu2d(
    ctx: &mut NetCtx,
    base: &str,
    x: VarId,
    c_in: usize,
    c_out: usize,
    k_t: usize,
    stride_f: usize,
    pad_f: (usize, usize),
) -> Result<VarId> {
    let fan = c_in * k_t * 3;
    let wv = ctx.param(&format!("{base}/glu_v/w"), &[c_out, c_in, k_t, 3], Init::FanIn(fan))?;
    let bv = ctx.param(&format!("{base}/glu_v/b"), &[c_out], Init::Zero)?;
    let wg = ctx.param(&format!("{base}/glu_g/w"), &[c_out, c_in, k_t, 3], Init::FanIn(fan))?;
    let bg = ctx.param(&format!("{base}/glu_g/b"), &[c_out], Init::Zero)?;
    let value = ctx.g.conv2d(x, wv, Some(bv), stride_f, k_t - 1, pad_f)?;
    let gate = ctx.g.conv2d(x, wg, Some(bg), stride_f, k_t - 1, pad_f)?;
    let s = ctx.g.sigmoid(gate);
    ctx.g.mul(value, s)
}

/// Transposed counterpart of [`glu2d`] used on the upsampling path.
fn glu2d_t(
    ctx: &mut NetCtx,
    base: &str,
    x: VarId,
    c_in: usize,
    c_out: usize,
    k_t: usize,
    stride_f: usize,
    out_f: usize,
) -> Result<VarId> {
    let fan = c_in * k_t * 3;
    let wv = ctx.param(&format!("{base}/glu_v/w"), &[c_in, c_out, k_t, 3], Init::FanIn(fan))?;
    let bv = ctx.param(&format!("{base}/glu_v/b"), &[c_out], Init::Zero)?;
    let wg = ctx.param(&format!("{base}/glu_g/w"), &[c_in, c_out, k_t, 3], Init::FanIn(fan))?;
    let bg = ctx.param(&format!("{base}/glu_g/b"), &[c_out], Init::Zero)?;
    let value = ctx.g.conv_transpose2d(x, wv, Some(bv), stride_f, out_f)?;
    let gate = ctx.g.conv_transpose2d(x, wg, Some(bg), stride_f, out_f)?;
    let s = ctx.g.sigmoid(gate);
    ctx.g.mul(value, s)
}

/// Per-frame normalization plus PReLU, the post-activation used after every
/// 2-D block. Per-frame statistics keep the stack causal.
fn norm_prelu2d(ctx: &mut NetCtx, base: &str, x: VarId, c: usize) -> Result<VarId> {
    let gamma = ctx.param(&format!("{base}/norm/gamma"), &[c], Init::One)?;
    let beta = ctx.param(&format!("{base}/norm/beta"), &[c], Init::Zero)?;
    let slope = ctx.param(&format!("{base}/prelu"), &[1], Init::Value(0.25))?;
    let n = ctx.g.frame_norm2d(x, gamma, beta, NORM_EPS)?;
    ctx.g.prelu(n, slope)
}

fn norm_prelu1d(ctx: &mut NetCtx, base: &str, x: VarId, c: usize) -> Result<VarId> {
    let gamma = ctx.param(&format!("{base}/norm/gamma"), &[c], Init::One)?;
    let beta = ctx.param(&format!("{base}/norm/beta"), &[c], Init::Zero)?;
    let slope = ctx.param(&format!("{base}/prelu"), &[1], Init::Value(0.25))?;
    let n = ctx.g.frame_norm1d(x, gamma, beta, NORM_EPS)?;
    ctx.g.prelu(n, slope)
}

/// Inner UNet-style block with `depth` down/up levels, skip additions and a
/// residual connection around the whole block. Kernel (2,3), frequency
/// stride 2. `depth == 0` is the identity.
fn unet_block(
    ctx: &mut NetCtx,
    base: &str,
    x0: VarId,
    c: usize,
    depth: usize,
    f_in: usize,
) -> Result<VarId> {
    if depth == 0 {
        return Ok(x0);
    }
    let mut h = x0;
    let mut f = f_in;
    let mut enc = Vec::with_capacity(depth);
    let mut in_fs = Vec::with_capacity(depth);
    for j in 0..depth {
        let name = format!("{base}/e{j}");
        let w = ctx.param(&format!("{name}/w"), &[c, c, 2, 3], Init::FanIn(c * 6))?;
        let b = ctx.param(&format!("{name}/b"), &[c], Init::Zero)?;
        h = ctx.g.conv2d(h, w, Some(b), 2, 1, (1, 0))?;
        h = norm_prelu2d(ctx, &name, h, c)?;
        enc.push(h);
        in_fs.push(f);
        f = down_f(f);
    }
    for j in 0..depth {
        let lvl = depth - 1 - j;
        if j > 0 {
            h = ctx.g.add(h, enc[lvl])?;
        }
        let name = format!("{base}/d{j}");
        let w = ctx.param(&format!("{name}/w"), &[c, c, 2, 3], Init::FanIn(c * 6))?;
        let b = ctx.param(&format!("{name}/b"), &[c], Init::Zero)?;
        h = ctx.g.conv_transpose2d(h, w, Some(b), 2, in_fs[lvl])?;
        h = norm_prelu2d(ctx, &name, h, c)?;
    }
    ctx.g.add(h, x0)
}

/// Encoder layer: gated downsampling conv, norm + PReLU, then a UNet block
/// with its residual.
fn rel(
    ctx: &mut NetCtx,
    base: &str,
    x: VarId,
    c_in: usize,
    c_out: usize,
    depth: usize,
    f_in: usize,
) -> Result<VarId> {
    let h = glu2d(ctx, base, x, c_in, c_out, 1, 2, (1, 0))?;
    let k = norm_prelu2d(ctx, base, h, c_out)?;
    unet_block(ctx, &format!("{base}/unet"), k, c_out, depth, down_f(f_in))
}

/// Decoder layer: UNet block, then gated transposed conv back up to `out_f`.
fn rdl(
    ctx: &mut NetCtx,
    base: &str,
    x: VarId,
    c: usize,
    depth: usize,
    f_in: usize,
    out_f: usize,
) -> Result<VarId> {
    let u = unet_block(ctx, &format!("{base}/unet"), x, c, depth, f_in)?;
    let h = glu2d_t(ctx, base, u, c, c, 1, 2, out_f)?;
    norm_prelu2d(ctx, base, h, c)
}

/// Squeezed temporal convolution module over `[N, Cf, T]`: bottleneck to
/// `squeeze` channels, dilated causal conv, expand back, residual add.
fn stcm(
    ctx: &mut NetCtx,
    base: &str,
    x: VarId,
    cf: usize,
    squeeze: usize,
    kernel: usize,
    dilation: usize,
) -> Result<VarId> {
    let w_in = ctx.param(&format!("{base}/in/w"), &[squeeze, cf, 1], Init::FanIn(cf))?;
    let b_in = ctx.param(&format!("{base}/in/b"), &[squeeze], Init::Zero)?;
    let mut h = ctx.g.conv1d_dilated_causal(x, w_in, Some(b_in), 1)?;
    h = norm_prelu1d(ctx, &format!("{base}/in"), h, squeeze)?;
    let w_mid =
        ctx.param(&format!("{base}/mid/w"), &[squeeze, squeeze, kernel], Init::FanIn(squeeze * kernel))?;
    let b_mid = ctx.param(&format!("{base}/mid/b"), &[squeeze], Init::Zero)?;
    h = ctx.g.conv1d_dilated_causal(h, w_mid, Some(b_mid), dilation)?;
    h = norm_prelu1d(ctx, &format!("{base}/mid"), h, squeeze)?;
    let w_out = ctx.param(&format!("{base}/out/w"), &[cf, squeeze, 1], Init::FanIn(squeeze))?;
    let b_out = ctx.param(&format!("{base}/out/b"), &[cf], Init::Zero)?;
    let o = ctx.g.conv1d_dilated_causal(h, w_out, Some(b_out), 1)?;
    ctx.g.add(o, x)
}

/// Stacked S-TCM groups with cycling dilation rates.
fn stcn(ctx: &mut NetCtx, base: &str, x: VarId, cf: usize, cfg: &TaylorConfig) -> Result<VarId> {
    let mut h = x;
    for gi in 0..cfg.stcm_groups {
        for mi in 0..cfg.stcm_per_group {
            let d = cfg.stcm_dilations[mi % cfg.stcm_dilations.len()];
            h = stcm(ctx, &format!("{base}/g{gi}m{mi}"), h, cf, cfg.squeeze(), cfg.stcm_kernel, d)?;
        }
    }
    Ok(h)
}

// ---- network stages ----

/// Magnitude-filter network: U2 encoder, temporal stack, U2 decoder, and a
/// sigmoid gate. Input `[1, 1, T, K]`, output gain `[1, 1, T, K]` in (0,1).
pub(crate) fn build_zero_order(
    ctx: &mut NetCtx,
    mag: VarId,
    cfg: &TaylorConfig,
    frames: usize,
) -> Result<VarId> {
    let c = cfg.channels;
    let n_rel = cfg.unet_depths.len();
    let mut f = cfg.bins;
    let mut h = mag;
    let mut enc_outs = Vec::with_capacity(n_rel);
    let mut enc_fs = Vec::with_capacity(n_rel);
    for (i, &depth) in cfg.unet_depths.iter().enumerate() {
        let c_in = if i == 0 { 1 } else { c };
        h = rel(ctx, &format!("zero/rel{i}"), h, c_in, c, depth, f)?;
        f = down_f(f);
        enc_outs.push(h);
        enc_fs.push(f);
    }

    let ht = ctx.g.transpose23(h)?;
    let flat = ctx.g.reshape(ht, &[1, c * f, frames])?;
    let tcn = stcn(ctx, "zero/tcn", flat, c * f, cfg)?;
    let back = ctx.g.reshape(tcn, &[1, c, f, frames])?;
    let mut d = ctx.g.transpose23(back)?;

    for i in 0..n_rel {
        let lvl = n_rel - 1 - i;
        d = ctx.g.add(d, enc_outs[lvl])?;
        let out_f = if lvl == 0 { cfg.bins } else { enc_fs[lvl - 1] };
        d = rdl(ctx, &format!("zero/rdl{i}"), d, c, cfg.unet_depths[lvl], enc_fs[lvl], out_f)?;
    }

    let wg = ctx.param("zero/gate/w", &[1, c, 1, 1], Init::FanIn(c))?;
    let bg = ctx.param("zero/gate/b", &[1], Init::Zero)?;
    let z = ctx.g.conv2d(d, wg, Some(bg), 1, 0, (0, 0))?;
    Ok(ctx.g.sigmoid(z))
}

/// Residual feature encoder: three gated conv blocks at full frequency
/// resolution. Input `[1, 2, T, K]`, output `[1, channels/4, T, K]`.
pub(crate) fn build_high_encoder(ctx: &mut NetCtx, x_ri: VarId, cfg: &TaylorConfig) -> Result<VarId> {
    let hc = cfg.high_channels();
    let mut h = x_ri;
    for i in 0..3 {
        let c_in = if i == 0 { 2 } else { hc };
        let base = format!("high/blk{i}");
        h = glu2d(ctx, &base, h, c_in, hc, 1, 1, (1, 1))?;
        h = norm_prelu2d(ctx, &base, h, hc)?;
    }
    Ok(h)
}

/// One derivative-operator module: concatenate the current term with the
/// residual features, flatten (channel x bin) per frame, run a 1-D stack,
/// and map back to two spectrogram planes.
pub(crate) fn build_deriv_module(
    ctx: &mut NetCtx,
    tag: &str,
    t_q: (VarId, VarId),
    r_feat: VarId,
    cfg: &TaylorConfig,
    frames: usize,
) -> Result<(VarId, VarId)> {
    let k = cfg.bins;
    let hc = cfg.high_channels();
    let hidden = cfg.deriv_hidden();
    let cat = ctx.g.concat(&[t_q.0, t_q.1, r_feat], 1)?;
    let ct = ctx.g.transpose23(cat)?;
    let flat = ctx.g.reshape(ct, &[1, (2 + hc) * k, frames])?;

    let w_in =
        ctx.param(&format!("{tag}/in/w"), &[hidden, (2 + hc) * k, 1], Init::FanIn((2 + hc) * k))?;
    let b_in = ctx.param(&format!("{tag}/in/b"), &[hidden], Init::Zero)?;
    let mut h = ctx.g.conv1d_dilated_causal(flat, w_in, Some(b_in), 1)?;
    h = norm_prelu1d(ctx, &format!("{tag}/in"), h, hidden)?;
    h = stcn(ctx, &format!("{tag}/tcn"), h, hidden, cfg)?;

    // zero-initialized projection: every order starts as an exact zero
    // correction, so refinement grows only where it lowers the loss
    let w_out = ctx.param(&format!("{tag}/out/w"), &[2 * k, hidden, 1], Init::Zero)?;
    let b_out = ctx.param(&format!("{tag}/out/b"), &[2 * k], Init::Zero)?;
    let o = ctx.g.conv1d_dilated_causal(h, w_out, Some(b_out), 1)?;
    let o4 = ctx.g.reshape(o, &[1, 2, k, frames])?;
    let p = ctx.g.transpose23(o4)?;
    let p_r = ctx.g.slice_axis(p, 1, 0, 1)?;
    let p_i = ctx.g.slice_axis(p, 1, 1, 1)?;
    Ok((p_r, p_i))
}

pub(crate) fn deriv_tag(cfg: &TaylorConfig, q: usize) -> String {
    if cfg.shared_high_order {
        "deriv/shared".to_string()
    } else {
        format!("deriv/q{q}")
    }
}

/// Full forward pass over compressed-domain planes `[1, 1, T, K]` each.
pub(crate) fn build_forward(
    ctx: &mut NetCtx,
    x_r: VarId,
    x_i: VarId,
    cfg: &TaylorConfig,
    frames: usize,
) -> Result<ForwardIds> {
    let mag = ctx.g.hypot(x_r, x_i)?;
    let gain = build_zero_order(ctx, mag, cfg, frames)?;
    let coarse_r = ctx.g.mul(gain, x_r)?;
    let coarse_i = ctx.g.mul(gain, x_i)?;

    let mut terms = Vec::with_capacity(cfg.q);
    if cfg.q > 0 {
        let x_ri = ctx.g.concat(&[x_r, x_i], 1)?;
        let r_feat = build_high_encoder(ctx, x_ri, cfg)?;
        let (mut tq_r, mut tq_i) = (coarse_r, coarse_i);
        for q in 0..cfg.q {
            let tag = deriv_tag(cfg, q);
            let (p_r, p_i) = build_deriv_module(ctx, &tag, (tq_r, tq_i), r_feat, cfg, frames)?;
            let qf = q as f32;
            let sr = ctx.g.scale(tq_r, qf);
            let si = ctx.g.scale(tq_i, qf);
            tq_r = ctx.g.add(sr, p_r)?;
            tq_i = ctx.g.add(si, p_i)?;
            terms.push((tq_r, tq_i));
        }
    }

    let (mut est_r, mut est_i) = (coarse_r, coarse_i);
    for (idx, &(tr, ti)) in terms.iter().enumerate() {
        let w = super::inv_factorial(idx + 1);
        let sr = ctx.g.scale(tr, w);
        let si = ctx.g.scale(ti, w);
        est_r = ctx.g.add(est_r, sr)?;
        est_i = ctx.g.add(est_i, si)?;
    }

    Ok(ForwardIds { gain, coarse: (coarse_r, coarse_i), terms, estimate: (est_r, est_i) })
}
