//! Comparative-feature extractor: a small convolutional network trained
//! with triplet loss on trace-map images, weights shared across branches.

use crate::error::{CoreError, Result};
use crate::nn::{Dense, DenseGrads};
use crate::sim::gen_path;
use crate::config::PathKind;
use crate::trace_map::{rasterize, to_image, TraceImage, RHO_RADAR};
use crate::types::{TrajSample, Trajectory2D};
pub use crate::types::cosine_similarity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Channel widths of the three convolution layers.
pub const CONV_CHANNELS: [usize; 4] = [3, 8, 16, 32];

/// One 3x3 convolution layer (stride 1, zero padding).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out][in][3][3]` row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ConvLayer {
    fn seeded(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / (in_ch as f64 * 9.0)).sqrt();
        ConvLayer {
            in_ch,
            out_ch,
            w: (0..out_ch * in_ch * 9).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: (0..out_ch).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvLayer { in_ch, out_ch, w: vec![0.0; out_ch * in_ch * 9], b: vec![0.0; out_ch] }
    }
}

/// All trainable parameters of the extractor CNN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnParams {
    pub conv: Vec<ConvLayer>,
    pub fc: Dense,
    pub image_size: usize,
    pub feature_dim: usize,
}

impl CnnParams {
    /// Flattened size after three conv+pool stages.
    pub fn flat_size(image_size: usize) -> usize {
        let mut s = image_size;
        for _ in 0..3 {
            s /= 2;
        }
        s * s * CONV_CHANNELS[3]
    }

    pub fn seeded(image_size: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = (0..3)
            .map(|i| ConvLayer::seeded(CONV_CHANNELS[i], CONV_CHANNELS[i + 1], &mut rng))
            .collect();
        let fc = Dense::seeded(Self::flat_size(image_size), feature_dim, &mut rng);
        CnnParams { conv, fc, image_size, feature_dim }
    }

    pub fn zeros(image_size: usize, feature_dim: usize) -> Self {
        let conv = (0..3).map(|i| ConvLayer::zeros(CONV_CHANNELS[i], CONV_CHANNELS[i + 1])).collect();
        let fc = Dense::zeros(Self::flat_size(image_size), feature_dim);
        CnnParams { conv, fc, image_size, feature_dim }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.extend_from_slice(&c.w);
            out.extend_from_slice(&c.b);
        }
        out.extend_from_slice(&self.fc.w);
        out.extend_from_slice(&self.fc.b);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for c in self.conv.iter_mut() {
            let nw = c.w.len();
            c.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = c.b.len();
            c.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        let nw = self.fc.w.len();
        self.fc.w.copy_from_slice(&flat[off..off + nw]);
        off += nw;
        let nb = self.fc.b.len();
        self.fc.b.copy_from_slice(&flat[off..off + nb]);
        off += nb;
        assert_eq!(off, flat.len());
    }
}

/// Gradient accumulator matching [`CnnParams`].
pub struct CnnGrads {
    pub conv_w: Vec<Vec<f64>>,
    pub conv_b: Vec<Vec<f64>>,
    pub fc: DenseGrads,
}

impl CnnGrads {
    pub fn for_params(p: &CnnParams) -> Self {
        CnnGrads {
            conv_w: p.conv.iter().map(|c| vec![0.0; c.w.len()]).collect(),
            conv_b: p.conv.iter().map(|c| vec![0.0; c.b.len()]).collect(),
            fc: DenseGrads::for_layer(&p.fc),
        }
    }

    pub fn zero(&mut self) {
        for v in self.conv_w.iter_mut().chain(self.conv_b.iter_mut()) {
            v.fill(0.0);
        }
        self.fc.zero();
    }

    fn scale(&mut self, s: f64) {
        for v in self.conv_w.iter_mut().chain(self.conv_b.iter_mut()) {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
        self.fc.scale(s);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.fc.dw);
        out.extend_from_slice(&self.fc.db);
        out
    }
}

/// CHW float planes in `[0, 1]` from an RGB trace image.
pub fn image_to_input(image: &TraceImage) -> Vec<f64> {
    let s = image.size;
    let mut out = vec![0.0f64; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            for c in 0..3 {
                out[c * s * s + y * s + x] = image.pixels[(y * s + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    out
}

fn conv_forward(layer: &ConvLayer, input: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; layer.out_ch * size * size];
    for oc in 0..layer.out_ch {
        let ob = oc * size * size;
        for y in 0..size {
            for x in 0..size {
                let mut acc = layer.b[oc];
                for ic in 0..layer.in_ch {
                    let ib = ic * size * size;
                    let wb = (oc * layer.in_ch + ic) * 9;
                    for ky in 0..3usize {
                        let iy = y as i64 + ky as i64 - 1;
                        if iy < 0 || iy >= size as i64 {
                            continue;
                        }
                        let row = ib + iy as usize * size;
                        for kx in 0..3usize {
                            let ix = x as i64 + kx as i64 - 1;
                            if ix < 0 || ix >= size as i64 {
                                continue;
                            }
                            acc += layer.w[wb + ky * 3 + kx] * input[row + ix as usize];
                        }
                    }
                }
                out[ob + y * size + x] = acc;
            }
        }
    }
    out
}

fn conv_backward(
    layer: &ConvLayer,
    input: &[f64],
    size: usize,
    grad_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut grad_in = vec![0.0f64; layer.in_ch * size * size];
    for oc in 0..layer.out_ch {
        let ob = oc * size * size;
        for y in 0..size {
            for x in 0..size {
                let g = grad_out[ob + y * size + x];
                if g == 0.0 {
                    continue;
                }
                db[oc] += g;
                for ic in 0..layer.in_ch {
                    let ib = ic * size * size;
                    let wb = (oc * layer.in_ch + ic) * 9;
                    for ky in 0..3usize {
                        let iy = y as i64 + ky as i64 - 1;
                        if iy < 0 || iy >= size as i64 {
                            continue;
                        }
                        let row = ib + iy as usize * size;
                        for kx in 0..3usize {
                            let ix = x as i64 + kx as i64 - 1;
                            if ix < 0 || ix >= size as i64 {
                                continue;
                            }
                            dw[wb + ky * 3 + kx] += g * input[row + ix as usize];
                            grad_in[row + ix as usize] += g * layer.w[wb + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

fn pool_forward(input: &[f64], ch: usize, size: usize) -> (Vec<f64>, Vec<usize>) {
    let half = size / 2;
    let mut out = vec![0.0f64; ch * half * half];
    let mut arg = vec![0usize; ch * half * half];
    for c in 0..ch {
        for y in 0..half {
            for x in 0..half {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = c * size * size + (2 * y + dy) * size + (2 * x + dx);
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[c * half * half + y * half + x] = best;
                arg[c * half * half + y * half + x] = best_idx;
            }
        }
    }
    (out, arg)
}

struct CnnCache {
    /// Per stage: input, conv pre-activation, relu output, pool argmax.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    pool_arg: Vec<Vec<usize>>,
    sizes: Vec<usize>,
    flat: Vec<f64>,
    pub feature: Vec<f64>,
}

fn forward_cached(params: &CnnParams, image_input: &[f64]) -> CnnCache {
    let mut inputs = Vec::with_capacity(3);
    let mut pre = Vec::with_capacity(3);
    let mut post = Vec::with_capacity(3);
    let mut pool_arg = Vec::with_capacity(3);
    let mut sizes = Vec::with_capacity(3);
    let mut cur = image_input.to_vec();
    let mut size = params.image_size;
    for layer in &params.conv {
        sizes.push(size);
        let conv_out = conv_forward(layer, &cur, size);
        let relu_out: Vec<f64> = conv_out.iter().map(|v| v.max(0.0)).collect();
        let (pooled, arg) = pool_forward(&relu_out, layer.out_ch, size);
        inputs.push(cur);
        pre.push(conv_out);
        post.push(relu_out);
        pool_arg.push(arg);
        cur = pooled;
        size /= 2;
    }
    let flat = cur;
    let feature = params.fc.forward(&flat);
    CnnCache { inputs, pre, post, pool_arg, sizes, flat, feature }
}

/// Comparative feature of one trace image.
pub fn cnn_forward(image: &TraceImage, params: &CnnParams) -> Result<Vec<f64>> {
    if image.size != params.image_size {
        return Err(CoreError::Data(format!(
            "image size {} does not match network input {}",
            image.size, params.image_size
        )));
    }
    Ok(forward_cached(params, &image_to_input(image)).feature)
}

fn backward(params: &CnnParams, cache: &CnnCache, d_feature: &[f64], grads: &mut CnnGrads) {
    let mut grad = params.fc.backward(&cache.flat, d_feature, &mut grads.fc);
    for li in (0..3).rev() {
        let size = cache.sizes[li];
        let layer = &params.conv[li];
        // Un-pool: route gradients to the argmax positions.
        let mut d_relu = vec![0.0f64; layer.out_ch * size * size];
        for (i, g) in grad.iter().enumerate() {
            if *g != 0.0 {
                d_relu[cache.pool_arg[li][i]] += g;
            }
        }
        // ReLU mask from pre-activations.
        for (d, p) in d_relu.iter_mut().zip(&cache.pre[li]) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        grad = conv_backward(
            layer,
            &cache.inputs[li],
            size,
            &d_relu,
            &mut grads.conv_w[li],
            &mut grads.conv_b[li],
        );
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Triplet loss `max(|fa - fp| - |fa - fn| + margin, 0)`.
pub fn triplet_loss(fa: &[f64], fp: &[f64], fn_: &[f64], margin: f64) -> f64 {
    (l2(fa, fp) - l2(fa, fn_) + margin).max(0.0)
}

/// A training triplet of trace images.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub anchor: TraceImage,
    pub positive: TraceImage,
    pub negative: TraceImage,
}

/// Loss and parameter gradients of one triplet; the three branches share
/// `params`, so their gradient contributions accumulate into one set.
pub fn triplet_loss_grad(
    triplet: &Triplet,
    params: &CnnParams,
    margin: f64,
    grads: &mut CnnGrads,
) -> Result<f64> {
    for img in [&triplet.anchor, &triplet.positive, &triplet.negative] {
        if img.size != params.image_size {
            return Err(CoreError::Data("triplet image size mismatch".into()));
        }
    }
    let ca = forward_cached(params, &image_to_input(&triplet.anchor));
    let cp = forward_cached(params, &image_to_input(&triplet.positive));
    let cn = forward_cached(params, &image_to_input(&triplet.negative));
    let dp = l2(&ca.feature, &cp.feature);
    let dn = l2(&ca.feature, &cn.feature);
    let loss = (dp - dn + margin).max(0.0);
    if loss > 0.0 {
        let eps = 1e-12;
        let dim = ca.feature.len();
        let mut ga = vec![0.0f64; dim];
        let mut gp = vec![0.0f64; dim];
        let mut gn = vec![0.0f64; dim];
        for i in 0..dim {
            let up = (ca.feature[i] - cp.feature[i]) / (dp + eps);
            let un = (ca.feature[i] - cn.feature[i]) / (dn + eps);
            ga[i] = up - un;
            gp[i] = -up;
            gn[i] = un;
        }
        backward(params, &ca, &ga, grads);
        backward(params, &cp, &gp, grads);
        backward(params, &cn, &gn, grads);
    }
    Ok(loss)
}

/// Training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiameseReport {
    pub losses: Vec<f64>,
}

/// Shared-weight gradient descent on the mean triplet loss.
pub fn train_siamese(
    triplets: &[Triplet],
    epochs: usize,
    lr: f64,
    margin: f64,
    image_size: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<(CnnParams, SiameseReport)> {
    if triplets.is_empty() {
        return Err(CoreError::Data("empty triplet dataset".into()));
    }
    let mut params = CnnParams::seeded(image_size, feature_dim, seed);
    let mut grads = CnnGrads::for_params(&params);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        grads.zero();
        let mut total = 0.0;
        for t in triplets {
            total += triplet_loss_grad(t, &params, margin, &mut grads)?;
        }
        let mean = total / triplets.len() as f64;
        if !mean.is_finite() {
            return Err(CoreError::Numerical(format!("triplet loss diverged at epoch {epoch}")));
        }
        losses.push(mean);
        grads.scale(1.0 / triplets.len() as f64);
        for (li, layer) in params.conv.iter_mut().enumerate() {
            for (w, g) in layer.w.iter_mut().zip(&grads.conv_w[li]) {
                *w -= lr * g;
            }
            for (b, g) in layer.b.iter_mut().zip(&grads.conv_b[li]) {
                *b -= lr * g;
            }
        }
        params.fc.apply_step(&grads.fc, lr);
    }
    Ok((params, SiameseReport { losses }))
}

/// Anchor/positive pair produced by random-walk augmentation.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub anchor: TraceImage,
    pub positive: TraceImage,
    pub scale: f64,
    pub shifted: Vec<usize>,
}

/// Build an anchor from a random-walk trajectory and a positive by scaling
/// the walk and displacing 10% of its samples to a neighboring cell.
pub fn augment_random_walk(seed: u64, image_size: usize) -> Result<AugmentedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa3c59ac2f1b0a7d1);
    let duration = 12.0;
    let speed = 1.0 + rng.gen_range(0.0..0.5);
    let traj = gen_path(PathKind::RandomWalk, duration, speed, 8.0, seed, [20.0, 20.0])?;
    let scale = rng.gen_range(0.9..1.1);
    let shift_count = (0.1 * traj.samples.len() as f64).round() as usize;
    augment_pair(&traj, scale, shift_count, image_size, &mut rng)
}

/// Deterministic core of the augmentation, exposed for tests: scale about
/// the start, displace exactly `shift_count` samples by one cell.
pub fn augment_pair(
    traj: &Trajectory2D,
    scale: f64,
    shift_count: usize,
    image_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedPair> {
    let window = [
        traj.samples.first().map(|s| s.t).unwrap_or(0.0),
        traj.samples.last().map(|s| s.t + 1e-9).unwrap_or(0.0),
    ];
    let anchor_map = rasterize(traj, RHO_RADAR, 8.0, window)?;
    let origin = traj.samples.first().map(|s| [s.x, s.y]).unwrap_or([0.0, 0.0]);
    let mut positive_samples: Vec<TrajSample> = traj
        .samples
        .iter()
        .map(|s| TrajSample {
            t: s.t,
            x: origin[0] + (s.x - origin[0]) * scale,
            y: origin[1] + (s.y - origin[1]) * scale,
        })
        .collect();
    let mut shifted = Vec::with_capacity(shift_count);
    let n = positive_samples.len();
    for _ in 0..shift_count {
        let mut idx = rng.gen_range(0..n);
        while shifted.contains(&idx) {
            idx = rng.gen_range(0..n);
        }
        let (dx, dy) = match rng.gen_range(0..4) {
            0 => (RHO_RADAR, 0.0),
            1 => (-RHO_RADAR, 0.0),
            2 => (0.0, RHO_RADAR),
            _ => (0.0, -RHO_RADAR),
        };
        positive_samples[idx].x += dx;
        positive_samples[idx].y += dy;
        shifted.push(idx);
    }
    let positive_map =
        rasterize(&Trajectory2D { samples: positive_samples }, RHO_RADAR, 8.0, window)?;
    Ok(AugmentedPair {
        anchor: to_image(&anchor_map, image_size),
        positive: to_image(&positive_map, image_size),
        scale,
        shifted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(rng: &mut ChaCha8Rng, size: usize) -> TraceImage {
        TraceImage {
            size,
            pixels: (0..size * size * 3).map(|_| rng.gen_range(0..=255u8)).collect(),
        }
    }

    #[test]
    fn zero_network_gives_zero_feature() {
        let params = CnnParams::zeros(16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 16);
        let f = cnn_forward(&img, &params).unwrap();
        assert_eq!(f.len(), 8);
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn feature_has_configured_length() {
        let params = CnnParams::seeded(16, 24, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 16);
        assert_eq!(cnn_forward(&img, &params).unwrap().len(), 24);
    }

    #[test]
    fn triplet_loss_formula() {
        let fa = [0.0, 0.0];
        let fp = [3.0, 4.0];
        let fn_ = [6.0, 8.0];
        assert_eq!(triplet_loss(&fa, &fp, &fn_, 0.2), 0.0);
        assert!((triplet_loss(&fa, &fa, &fa, 0.2) - 0.2).abs() < 1e-12);
        let far = [100.0, 0.0];
        assert_eq!(triplet_loss(&fa, &fa, &far, 0.2), 0.0);
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = CnnParams::seeded(16, 8, 6);
        let triplet = Triplet {
            anchor: random_image(&mut rng, 16),
            positive: random_image(&mut rng, 16),
            negative: random_image(&mut rng, 16),
        };
        let margin = 0.5;
        let mut grads = CnnGrads::for_params(&params);
        let loss = triplet_loss_grad(&triplet, &params, margin, &mut grads).unwrap();
        assert!(loss > 0.0, "need an active triplet for the gradcheck");
        let analytic = grads.flatten();
        let flat = params.flatten();
        let informative: Vec<usize> =
            (0..flat.len()).filter(|&i| analytic[i].abs() > 1e-7).collect();
        assert!(informative.len() >= 20);
        let eps = 1e-5;
        let mut checked = 0;
        let stride = (informative.len() / 21).max(1);
        for k in 0..21 {
            let idx = informative[(k * stride) % informative.len()];
            let mut f = flat.clone();
            f[idx] += eps;
            let mut plus = params.clone();
            plus.set_flat(&f);
            f[idx] -= 2.0 * eps;
            let mut minus = params.clone();
            minus.set_flat(&f);
            let lp = {
                let fa = cnn_forward(&triplet.anchor, &plus).unwrap();
                let fp = cnn_forward(&triplet.positive, &plus).unwrap();
                let fnn = cnn_forward(&triplet.negative, &plus).unwrap();
                triplet_loss(&fa, &fp, &fnn, margin)
            };
            let lm = {
                let fa = cnn_forward(&triplet.anchor, &minus).unwrap();
                let fp = cnn_forward(&triplet.positive, &minus).unwrap();
                let fnn = cnn_forward(&triplet.negative, &minus).unwrap();
                triplet_loss(&fa, &fp, &fnn, margin)
            };
            let fd = (lp - lm) / (2.0 * eps);
            let a = analytic[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            assert!(rel < 1e-3, "idx {idx}: analytic {a} vs fd {fd} (rel {rel})");
            checked += 1;
        }
        assert!(checked >= 20);
    }

    #[test]
    fn training_on_small_set_is_nonincreasing_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let triplets: Vec<Triplet> = (0..10)
            .map(|_| Triplet {
                anchor: random_image(&mut rng, 16),
                positive: random_image(&mut rng, 16),
                negative: random_image(&mut rng, 16),
            })
            .collect();
        let (_, report) = train_siamese(&triplets, 10, 1e-3, 0.2, 16, 8, 4).unwrap();
        for w in report.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss increased: {:?}", report.losses);
        }
    }

    #[test]
    fn degenerate_augmentation_is_identity() {
        let traj = gen_path(PathKind::RandomWalk, 10.0, 1.2, 8.0, 33, [20.0, 20.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = augment_pair(&traj, 1.0, 0, 64, &mut rng).unwrap();
        assert_eq!(pair.anchor, pair.positive);
        assert!(pair.shifted.is_empty());
    }

    #[test]
    fn augmentation_counts_and_reproducibility() {
        let a = augment_random_walk(77, 64).unwrap();
        let b = augment_random_walk(77, 64).unwrap();
        assert_eq!(a.anchor, b.anchor);
        assert_eq!(a.positive, b.positive);
        assert_eq!(a.shifted, b.shifted);
        // 12 s at 8 fps = 97 samples; 10% rounds to 10.
        assert_eq!(a.shifted.len(), 10);
    }

    #[test]
    fn cosine_similarity_cases() {
        let v = [1.0, 2.0, 3.0];
        assert!((cosine_similarity(&v, &v) - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).abs() < 1e-12);
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]) - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }
}
