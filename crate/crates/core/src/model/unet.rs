use super::float::Float;
use super::layers::{
    conv_backward, conv_forward, maxpool2, maxpool2_backward, upsample2, upsample2_backward, ConvParams,
    ConvTrace,
};
use super::{init_weights, layout, masked_sq_error, ModelWeights, NetConfig, Nonlinearity};
use crate::error::{Error, Result};
use crate::rng;

/// Everything the backward pass needs from one forward pass.
pub(crate) struct Trace<T> {
    /// Per conv, in parameter order.
    convs: Vec<ConvTrace<T>>,
    /// Max-pool argmax per encoder level 1..=depth.
    pools: Vec<Vec<u32>>,
    /// Spatial size per level.
    sizes: Vec<(usize, usize)>,
}

fn params<'a, T: Float>(weights: &'a ModelWeights<T>, i: usize, cin: usize, cout: usize, k: usize, act: bool) -> ConvParams<'a, T> {
    ConvParams {
        weight: weights.slot(2 * i),
        bias: weights.slot(2 * i + 1),
        cin,
        cout,
        k,
        act: act.then_some(weights.config().nonlinearity),
    }
}

/// Forward one `(in_channels, h, w)` image; returns the raw head output
/// `(out_channels, h, w)`.
pub(crate) fn forward<T: Float>(weights: &ModelWeights<T>, input: &[T], h: usize, w: usize) -> Result<(Vec<T>, Trace<T>)> {
    let cfg = weights.config();
    cfg.check_input(input.len() / (h * w).max(1), h, w)?;
    if input.len() != cfg.in_channels * h * w {
        return Err(Error::invalid("input buffer does not match its shape"));
    }
    let specs = layout(cfg);
    let mut convs: Vec<ConvTrace<T>> = Vec::with_capacity(specs.len());
    let mut pools = Vec::with_capacity(cfg.depth);
    let mut sizes = vec![(h, w)];
    let mut skips: Vec<usize> = Vec::with_capacity(cfg.depth); // conv index of each encoder output

    let mut ci = 0;
    let mut cur: Vec<T> = input.to_vec();
    let mut cur_c = cfg.in_channels;
    let (mut hh, mut ww) = (h, w);
    for level in 0..=cfg.depth {
        if level > 0 {
            let (p, arg) = maxpool2(&cur, cur_c, hh, ww);
            cur = p;
            pools.push(arg);
            hh /= 2;
            ww /= 2;
            sizes.push((hh, ww));
        }
        for _ in 0..cfg.convs_per_stage {
            let s = &specs[ci];
            let t = conv_forward(&params(weights, ci, s.cin, s.cout, s.k, s.activated), &cur, hh, ww);
            cur = t.out.clone();
            cur_c = s.cout;
            convs.push(t);
            ci += 1;
        }
        if level < cfg.depth {
            skips.push(ci - 1);
        }
    }
    for level in (0..cfg.depth).rev() {
        let up = upsample2(&cur, cur_c, hh, ww);
        hh *= 2;
        ww *= 2;
        let mut cat = up;
        cat.extend_from_slice(&convs[skips[level]].out);
        cur = cat;
        for _ in 0..cfg.convs_per_stage {
            let s = &specs[ci];
            let t = conv_forward(&params(weights, ci, s.cin, s.cout, s.k, s.activated), &cur, hh, ww);
            cur = t.out.clone();
            cur_c = s.cout;
            convs.push(t);
            ci += 1;
        }
    }
    let s = &specs[ci];
    let head = conv_forward(&params(weights, ci, s.cin, s.cout, s.k, s.activated), &cur, hh, ww);
    let out = head.out.clone();
    convs.push(head);
    Ok((out, Trace { convs, pools, sizes }))
}

/// Accumulate parameter gradients for one image into `grads` (parameter
/// order). `d_out` is the gradient w.r.t. the raw head output. Returns the
/// input gradient when `want_input` is set.
pub(crate) fn backward<T: Float>(
    weights: &ModelWeights<T>,
    trace: &Trace<T>,
    d_out: &[T],
    grads: &mut [Vec<T>],
    want_input: bool,
) -> Option<Vec<T>> {
    let cfg = weights.config();
    let specs = layout(cfg);
    let cps = cfg.convs_per_stage;
    let enc_convs = (cfg.depth + 1) * cps;

    let step = |ci: usize, g: &mut Vec<T>, grads: &mut [Vec<T>], need: bool| -> Option<Vec<T>> {
        let s = &specs[ci];
        let p = params(weights, ci, s.cin, s.cout, s.k, s.activated);
        let (gw, rest) = grads[2 * ci..].split_at_mut(1);
        conv_backward(&p, &trace.convs[ci], g, &mut gw[0], &mut rest[0], need)
    };

    let mut ci = specs.len() - 1;
    let mut g = d_out.to_vec();
    g = step(ci, &mut g, grads, true).expect("input grad");

    // Decoder, from the finest stage up to the bottleneck.
    let mut skip_grads: Vec<Option<Vec<T>>> = vec![None; cfg.depth];
    for level in 0..cfg.depth {
        for _ in 0..cps {
            ci -= 1;
            g = step(ci, &mut g, grads, true).expect("input grad");
        }
        let (hh, ww) = trace.sizes[level + 1];
        let up_c = cfg.stage_channels(level + 1);
        let split = up_c * 4 * hh * ww;
        skip_grads[level] = Some(g[split..].to_vec());
        g = upsample2_backward(&g[..split], up_c, hh, ww);
    }

    // Encoder, from the bottleneck down to the input.
    let mut ci = enc_convs;
    for level in (0..=cfg.depth).rev() {
        if level < cfg.depth {
            let sg = skip_grads[level].take().expect("skip gradient");
            for (a, b) in g.iter_mut().zip(&sg) {
                *a += *b;
            }
        }
        for k in (0..cps).rev() {
            ci -= 1;
            let need = !(level == 0 && k == 0) || want_input;
            match step(ci, &mut g, grads, need) {
                Some(next) => g = next,
                None => return None,
            }
        }
        if level > 0 {
            let (hh, ww) = trace.sizes[level - 1];
            let c = cfg.stage_channels(level - 1);
            g = maxpool2_backward(&g, &trace.pools[level - 1], c * hh * ww);
        }
    }
    Some(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: usize,
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub loss: f64,
}

/// Compare the analytic gradient of the masked reconstruction loss with
/// central differences (step 1e-5) on every weight of a tiny tanh network,
/// in double precision. The mask covers every other patch of a
/// `size x size` image split into `patch`-sized patches.
pub fn gradient_check(config: &NetConfig, size: usize, patch: usize, seed: u64) -> Result<GradCheckReport> {
    use rand::Rng;
    let cfg = NetConfig {
        nonlinearity: Nonlinearity::Tanh,
        ..*config
    };
    cfg.check_input(cfg.in_channels, size, size)?;
    if cfg.out_channels != cfg.in_channels || size % patch != 0 {
        return Err(Error::invalid("gradient check needs out == in channels and size divisible by patch"));
    }
    let mut weights: ModelWeights<f64> = init_weights(&cfg, seed)?;
    // non-zero biases so their gradients are exercised away from the init
    let mut rng = rng::rng_for(seed, "gradcheck");
    for i in 0..weights.len() {
        if i % 2 == 1 {
            for v in weights.slot_mut(i) {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let hw = size * size;
    let input: Vec<f64> = (0..cfg.in_channels * hw).map(|_| rng.random::<f64>()).collect();
    let target: Vec<f64> = (0..cfg.in_channels * hw).map(|_| rng.random::<f64>()).collect();
    let per_row = size / patch;
    let mask: Vec<bool> = (0..hw)
        .map(|p| {
            let (y, x) = (p / size, p % size);
            ((y / patch) * per_row + x / patch) % 2 == 0
        })
        .collect();

    let loss_of = |w: &ModelWeights<f64>| -> Result<(f64, Vec<f64>)> {
        let (out, _) = forward(w, &input, size, size)?;
        Ok(masked_sq_error(&out, &target, &mask))
    };
    let (out, trace) = forward(&weights, &input, size, size)?;
    let (loss, d_out) = masked_sq_error(&out, &target, &mask);
    let mut grads = weights.zero_grads();
    backward(&weights, &trace, &d_out, &mut grads, false);

    let names: Vec<String> = weights.tensors().map(|(n, _)| n.to_string()).collect();
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    for (ti, name) in names.iter().enumerate() {
        for j in 0..weights.slot(ti).len() {
            let orig = weights.slot(ti)[j];
            weights.slot_mut(ti)[j] = orig + h;
            let lp = loss_of(&weights)?.0;
            weights.slot_mut(ti)[j] = orig - h;
            let lm = loss_of(&weights)?.0;
            weights.slot_mut(ti)[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads[ti][j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, name.clone());
            }
        }
    }
    Ok(GradCheckReport {
        params: weights.param_count(),
        max_relative_error: worst.0,
        worst_tensor: worst.1,
        loss,
    })
}
