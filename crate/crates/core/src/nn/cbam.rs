//! Convolutional block attention: a channel gate followed by a spatial gate.
//!
//! Channel gate: `sigmoid(mlp(avgpool(f)) + mlp(maxpool(f)))` with a shared,
//! bias-free two-layer MLP `w2 · relu(w1 · x)` of hidden width `c / r`.
//! Spatial gate: `sigmoid(conv(cat[mean_c(f'), max_c(f')]))` with one
//! `k x k` kernel over the two pooled planes, stride 1, zero padding `k / 2`.
//! Output is `spatial(f') ⊙ f'` where `f' = channel(f) ⊙ f`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradcheck::{grad_check, Differentiable, GradReport};
use super::sigmoid;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const DEFAULT_REDUCTION: usize = 16;
pub const DEFAULT_KERNEL_SIZE: usize = 7;

/// Weights of one attention block. `mlp_w1` is `hidden x channels`,
/// `mlp_w2` is `channels x hidden`, `spatial_kernel` is `2 x k x k`
/// (plane 0 convolves the channel mean, plane 1 the channel max).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbamParams {
    pub channels: usize,
    pub reduction: usize,
    pub kernel_size: usize,
    pub mlp_w1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub spatial_kernel: Vec<f64>,
}

fn check_config(channels: usize, reduction: usize, kernel_size: usize) -> Result<()> {
    if reduction == 0 || channels == 0 || !channels.is_multiple_of(reduction) {
        return Err(Error::shape(format!(
            "channels ({channels}) must be a positive multiple of the reduction ratio ({reduction})"
        )));
    }
    if kernel_size.is_multiple_of(2) {
        return Err(Error::shape(format!("kernel size {kernel_size} must be odd")));
    }
    Ok(())
}

impl CbamParams {
    pub fn zeros(channels: usize, reduction: usize, kernel_size: usize) -> Result<Self> {
        check_config(channels, reduction, kernel_size)?;
        let hidden = channels / reduction;
        Ok(CbamParams {
            channels,
            reduction,
            kernel_size,
            mlp_w1: vec![0.0; hidden * channels],
            mlp_w2: vec![0.0; channels * hidden],
            spatial_kernel: vec![0.0; 2 * kernel_size * kernel_size],
        })
    }

    /// Every weight uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn seeded(channels: usize, reduction: usize, kernel_size: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(channels, reduction, kernel_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |v: &mut [f64], fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            v.iter_mut().for_each(|x| *x = rng.random_range(-b..=b));
        };
        let hidden = p.hidden();
        fill(&mut p.mlp_w1, channels);
        fill(&mut p.mlp_w2, hidden);
        fill(&mut p.spatial_kernel, 2 * kernel_size * kernel_size);
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn validate(&self) -> Result<()> {
        check_config(self.channels, self.reduction, self.kernel_size)?;
        let h = self.hidden();
        let k = self.kernel_size;
        if self.mlp_w1.len() != h * self.channels
            || self.mlp_w2.len() != self.channels * h
            || self.spatial_kernel.len() != 2 * k * k
        {
            return Err(Error::shape("parameter lengths disagree with the configuration"));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.mlp_w1.len() + self.mlp_w2.len() + self.spatial_kernel.len()
    }

    /// `mlp_w1`, `mlp_w2`, `spatial_kernel` concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.mlp_w1);
        v.extend_from_slice(&self.mlp_w2);
        v.extend_from_slice(&self.spatial_kernel);
        v
    }

    /// Same configuration with weights taken from `flat` (layout of [`Self::to_flat`]).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let (a, rest) = flat.split_at(self.mlp_w1.len());
        let (b, c) = rest.split_at(self.mlp_w2.len());
        Ok(CbamParams {
            mlp_w1: a.to_vec(),
            mlp_w2: b.to_vec(),
            spatial_kernel: c.to_vec(),
            ..self.clone()
        })
    }

    /// Binary fixture format: little-endian `u64` header length, a JSON
    /// header describing the tensors, then every weight as little-endian
    /// `f64` in header order.
    pub fn to_blob(&self) -> Vec<u8> {
        let k = self.kernel_size;
        let header = BlobHeader {
            format: BLOB_FORMAT.into(),
            channels: self.channels,
            reduction: self.reduction,
            kernel_size: k,
            tensors: vec![
                BlobTensor {
                    name: "mlp_w1".into(),
                    shape: vec![self.hidden(), self.channels],
                },
                BlobTensor {
                    name: "mlp_w2".into(),
                    shape: vec![self.channels, self.hidden()],
                },
                BlobTensor {
                    name: "spatial_kernel".into(),
                    shape: vec![2, k, k],
                },
            ],
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.param_count());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("parameter blob: {m}"));
        if bytes.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: BlobHeader = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
        if header.format != BLOB_FORMAT {
            return Err(bad("unknown format tag"));
        }
        let template = CbamParams::zeros(header.channels, header.reduction, header.kernel_size)?;
        let expected = [
            vec![template.hidden(), template.channels],
            vec![template.channels, template.hidden()],
            vec![2, template.kernel_size, template.kernel_size],
        ];
        let shapes: Vec<&Vec<usize>> = header.tensors.iter().map(|t| &t.shape).collect();
        if shapes != expected.iter().collect::<Vec<_>>() {
            return Err(bad("tensor shapes disagree with the configuration"));
        }
        let data = &body[hlen..];
        if data.len() != 8 * template.param_count() {
            return Err(bad("payload length mismatch"));
        }
        let flat: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let p = template.with_flat(&flat)?;
        p.validate()?;
        Ok(p)
    }
}

const BLOB_FORMAT: &str = "cbam-params-v1";

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    format: String,
    channels: usize,
    reduction: usize,
    kernel_size: usize,
    tensors: Vec<BlobTensor>,
}

#[derive(Serialize, Deserialize)]
struct BlobTensor {
    name: String,
    shape: Vec<usize>,
}

fn check_input(f: &Tensor4, p: &CbamParams) -> Result<()> {
    p.validate()?;
    let [n, c, h, w] = f.dims();
    if c != p.channels {
        return Err(Error::shape(format!(
            "input has {c} channels, parameters expect {}",
            p.channels
        )));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("empty input dims {:?}", f.dims())));
    }
    Ok(())
}

struct ChannelPass {
    /// `(n, c)` pooled values and the spatial argmax of the max pool.
    avg: Vec<f64>,
    max: Vec<f64>,
    max_at: Vec<usize>,
    /// `(n, hidden)` pre-activations of the shared MLP for both pooled inputs.
    hid_avg: Vec<f64>,
    hid_max: Vec<f64>,
    scale: Vec<f64>,
}

fn mlp_hidden(v: &[f64], p: &CbamParams) -> Vec<f64> {
    let c = p.channels;
    (0..p.hidden())
        .map(|j| (0..c).map(|i| p.mlp_w1[j * c + i] * v[i]).sum())
        .collect()
}

fn mlp_out(hidden_pre: &[f64], p: &CbamParams, i: usize) -> f64 {
    let h = p.hidden();
    (0..h).map(|j| p.mlp_w2[i * h + j] * hidden_pre[j].max(0.0)).sum()
}

fn channel_pass(f: &Tensor4, p: &CbamParams) -> ChannelPass {
    let [n, c, h, w] = f.dims();
    let hw = h * w;
    let hid = p.hidden();
    let data = f.data();
    let mut avg = vec![0.0; n * c];
    let mut max = vec![0.0; n * c];
    let mut max_at = vec![0; n * c];
    for (k, plane) in data.chunks_exact(hw).enumerate() {
        let mut best = (0, plane[0]);
        let mut sum = 0.0;
        for (i, &v) in plane.iter().enumerate() {
            sum += v;
            if v > best.1 {
                best = (i, v);
            }
        }
        avg[k] = sum / hw as f64;
        max[k] = best.1;
        max_at[k] = best.0;
    }

    let mut hid_avg = vec![0.0; n * hid];
    let mut hid_max = vec![0.0; n * hid];
    let mut scale = vec![0.0; n * c];
    for b in 0..n {
        let ha = mlp_hidden(&avg[b * c..(b + 1) * c], p);
        let hm = mlp_hidden(&max[b * c..(b + 1) * c], p);
        for i in 0..c {
            scale[b * c + i] = sigmoid(mlp_out(&ha, p, i) + mlp_out(&hm, p, i));
        }
        hid_avg[b * hid..(b + 1) * hid].copy_from_slice(&ha);
        hid_max[b * hid..(b + 1) * hid].copy_from_slice(&hm);
    }
    ChannelPass {
        avg,
        max,
        max_at,
        hid_avg,
        hid_max,
        scale,
    }
}

struct SpatialPass {
    /// `(n, h, w)` channel mean, channel max and the channel argmax.
    mean: Vec<f64>,
    max: Vec<f64>,
    max_at: Vec<usize>,
    scale: Vec<f64>,
}

fn spatial_pass(f: &Tensor4, p: &CbamParams) -> SpatialPass {
    let [n, c, h, w] = f.dims();
    let hw = h * w;
    let data = f.data();
    let mut mean = vec![0.0; n * hw];
    let mut max = vec![0.0; n * hw];
    let mut max_at = vec![0; n * hw];
    for b in 0..n {
        for s in 0..hw {
            let mut sum = 0.0;
            let mut best = (0, data[b * c * hw + s]);
            for ch in 0..c {
                let v = data[(b * c + ch) * hw + s];
                sum += v;
                if v > best.1 {
                    best = (ch, v);
                }
            }
            mean[b * hw + s] = sum / c as f64;
            max[b * hw + s] = best.1;
            max_at[b * hw + s] = best.0;
        }
    }

    let k = p.kernel_size;
    let pad = (k / 2) as isize;
    let mut scale = vec![0.0; n * hw];
    for b in 0..n {
        let planes = [&mean[b * hw..(b + 1) * hw], &max[b * hw..(b + 1) * hw]];
        for y in 0..h {
            for x in 0..w {
                let mut z = 0.0;
                for (pi, plane) in planes.iter().enumerate() {
                    for ky in 0..k {
                        let iy = y as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = x as isize + kx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            z += p.spatial_kernel[(pi * k + ky) * k + kx] * plane[iy as usize * w + ix as usize];
                        }
                    }
                }
                scale[b * hw + y * w + x] = sigmoid(z);
            }
        }
    }
    SpatialPass {
        mean,
        max,
        max_at,
        scale,
    }
}

/// Per-channel gate of shape `(n, c, 1, 1)`, values in `(0, 1)`.
pub fn channel_attention(f: &Tensor4, p: &CbamParams) -> Result<Tensor4> {
    check_input(f, p)?;
    let [n, c, _, _] = f.dims();
    Tensor4::new([n, c, 1, 1], channel_pass(f, p).scale)
}

/// Per-location gate of shape `(n, 1, h, w)`, values in `(0, 1)`.
pub fn spatial_attention(f: &Tensor4, p: &CbamParams) -> Result<Tensor4> {
    check_input(f, p)?;
    let [n, _, h, w] = f.dims();
    Tensor4::new([n, 1, h, w], spatial_pass(f, p).scale)
}

/// Intermediates of a forward pass, consumed by [`cbam_backward`].
pub struct CbamCache {
    params: CbamParams,
    input: Tensor4,
    channel: ChannelPass,
    gated: Tensor4,
    spatial: SpatialPass,
}

impl CbamCache {
    pub fn params(&self) -> &CbamParams {
        &self.params
    }

    pub fn dims(&self) -> [usize; 4] {
        self.input.dims()
    }
}

pub fn cbam_forward(f: &Tensor4, p: &CbamParams) -> Result<(Tensor4, CbamCache)> {
    check_input(f, p)?;
    let [_, _, h, w] = f.dims();
    let hw = h * w;
    let channel = channel_pass(f, p);
    let mut gated = f.clone();
    for (k, plane) in gated.data_mut().chunks_exact_mut(hw).enumerate() {
        let s = channel.scale[k];
        plane.iter_mut().for_each(|v| *v *= s);
    }
    let spatial = spatial_pass(&gated, p);
    let c = p.channels;
    let mut out = gated.clone();
    for (k, plane) in out.data_mut().chunks_exact_mut(hw).enumerate() {
        let b = k / c;
        let gate = &spatial.scale[b * hw..(b + 1) * hw];
        plane.iter_mut().zip(gate).for_each(|(v, g)| *v *= g);
    }
    Ok((
        out,
        CbamCache {
            params: p.clone(),
            input: f.clone(),
            channel,
            gated,
            spatial,
        },
    ))
}

/// Gradients of `sum(grad_out ⊙ out)` with respect to the input and every
/// weight. Max pools route their gradient to the first maximal element.
pub fn cbam_backward(grad_out: &Tensor4, cache: &CbamCache) -> Result<(Tensor4, CbamParams)> {
    if grad_out.dims() != cache.input.dims() {
        return Err(Error::Contract(format!(
            "gradient dims {:?} do not match the cached forward pass {:?}",
            grad_out.dims(),
            cache.input.dims()
        )));
    }
    let p = &cache.params;
    let [n, c, h, w] = cache.input.dims();
    let hw = h * w;
    let k = p.kernel_size;
    let pad = (k / 2) as isize;
    let hid = p.hidden();
    let g = grad_out.data();
    let f = cache.input.data();
    let f1 = cache.gated.data();
    let sp = &cache.spatial;
    let ch = &cache.channel;

    let mut grads = CbamParams::zeros(p.channels, p.reduction, p.kernel_size)?;

    // out = s ⊙ f1
    let mut d_f1: Vec<f64> = vec![0.0; n * c * hw];
    let mut dz_sp = vec![0.0; n * hw];
    for b in 0..n {
        for i in 0..c {
            let base = (b * c + i) * hw;
            for s in 0..hw {
                d_f1[base + s] = g[base + s] * sp.scale[b * hw + s];
                dz_sp[b * hw + s] += g[base + s] * f1[base + s];
            }
        }
    }
    for (dz, s) in dz_sp.iter_mut().zip(&sp.scale) {
        *dz *= s * (1.0 - s);
    }

    // spatial conv over [mean, max]
    let mut d_mean = vec![0.0; n * hw];
    let mut d_max = vec![0.0; n * hw];
    for b in 0..n {
        let planes = [&sp.mean[b * hw..(b + 1) * hw], &sp.max[b * hw..(b + 1) * hw]];
        for y in 0..h {
            for x in 0..w {
                let gz = dz_sp[b * hw + y * w + x];
                for (pi, plane) in planes.iter().enumerate() {
                    for ky in 0..k {
                        let iy = y as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = x as isize + kx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = iy as usize * w + ix as usize;
                            let ki = (pi * k + ky) * k + kx;
                            grads.spatial_kernel[ki] += gz * plane[at];
                            let d = gz * p.spatial_kernel[ki];
                            if pi == 0 {
                                d_mean[b * hw + at] += d;
                            } else {
                                d_max[b * hw + at] += d;
                            }
                        }
                    }
                }
            }
        }
    }
    for b in 0..n {
        for s in 0..hw {
            let dm = d_mean[b * hw + s] / c as f64;
            for i in 0..c {
                d_f1[(b * c + i) * hw + s] += dm;
            }
            let top = sp.max_at[b * hw + s];
            d_f1[(b * c + top) * hw + s] += d_max[b * hw + s];
        }
    }

    // f1 = m ⊙ f
    let mut d_in = vec![0.0; n * c * hw];
    let mut dz_ch = vec![0.0; n * c];
    for kk in 0..n * c {
        let m = ch.scale[kk];
        let mut acc = 0.0;
        for s in 0..hw {
            let at = kk * hw + s;
            acc += d_f1[at] * f[at];
            d_in[at] = d_f1[at] * m;
        }
        dz_ch[kk] = acc * m * (1.0 - m);
    }

    // shared MLP on both pooled vectors
    for b in 0..n {
        let dz = &dz_ch[b * c..(b + 1) * c];
        let paths = [
            (&ch.avg[b * c..(b + 1) * c], &ch.hid_avg[b * hid..(b + 1) * hid], true),
            (&ch.max[b * c..(b + 1) * c], &ch.hid_max[b * hid..(b + 1) * hid], false),
        ];
        for (v, pre, is_avg) in paths {
            let mut d_hidden = vec![0.0; hid];
            for (j, dh) in d_hidden.iter_mut().enumerate() {
                let act = pre[j].max(0.0);
                let mut acc = 0.0;
                for i in 0..c {
                    grads.mlp_w2[i * hid + j] += dz[i] * act;
                    acc += p.mlp_w2[i * hid + j] * dz[i];
                }
                *dh = if pre[j] > 0.0 { acc } else { 0.0 };
            }
            for i in 0..c {
                let mut dv = 0.0;
                for (j, dh) in d_hidden.iter().enumerate() {
                    grads.mlp_w1[j * c + i] += dh * v[i];
                    dv += p.mlp_w1[j * c + i] * dh;
                }
                let plane = (b * c + i) * hw;
                if is_avg {
                    let share = dv / hw as f64;
                    d_in[plane..plane + hw].iter_mut().for_each(|d| *d += share);
                } else {
                    d_in[plane + ch.max_at[b * c + i]] += dv;
                }
            }
        }
    }

    Ok((Tensor4::new(cache.input.dims(), d_in)?, grads))
}

/// `x ↦ sum(weights ⊙ cbam(x_input; x_params))` over the flattened input and
/// parameters, for gradient checking.
pub struct CbamObjective {
    pub dims: [usize; 4],
    pub template: CbamParams,
    pub weights: Tensor4,
}

impl CbamObjective {
    fn split(&self, x: &[f64]) -> Result<(Tensor4, CbamParams)> {
        let n_in: usize = self.dims.iter().product();
        if x.len() != n_in + self.template.param_count() {
            return Err(Error::shape("point length does not match input plus parameters"));
        }
        let input = Tensor4::new(self.dims, x[..n_in].to_vec())?;
        Ok((input, self.template.with_flat(&x[n_in..])?))
    }

    pub fn point(input: &Tensor4, params: &CbamParams) -> Vec<f64> {
        let mut x = input.data().to_vec();
        x.extend(params.to_flat());
        x
    }
}

impl Differentiable for CbamObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (input, params) = self.split(x)?;
        let (out, _) = cbam_forward(&input, &params)?;
        out.dot(&self.weights)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (input, params) = self.split(x)?;
        let (_, cache) = cbam_forward(&input, &params)?;
        let (d_in, d_p) = cbam_backward(&self.weights, &cache)?;
        let mut g = d_in.into_data();
        g.extend(d_p.to_flat());
        Ok(g)
    }
}

/// Random input, weights and upstream gradient from `seed`, then a
/// central-difference check over every input and parameter coordinate.
pub fn cbam_grad_check(
    dims: [usize; 4],
    reduction: usize,
    kernel_size: usize,
    seed: u64,
    step: f64,
) -> Result<GradReport> {
    let params = CbamParams::seeded(dims[1], reduction, kernel_size, seed.wrapping_add(1))?;
    cbam_grad_check_with(&params, dims, seed, step)
}

/// As [`cbam_grad_check`] but at caller-supplied parameters.
pub fn cbam_grad_check_with(params: &CbamParams, dims: [usize; 4], seed: u64, step: f64) -> Result<GradReport> {
    params.validate()?;
    if dims[1] != params.channels {
        return Err(Error::shape(format!(
            "input has {} channels, parameters expect {}",
            dims[1], params.channels
        )));
    }
    let input = Tensor4::random_uniform(dims, -1.0, 1.0, seed);
    let objective = CbamObjective {
        dims,
        template: params.clone(),
        weights: Tensor4::random_uniform(dims, -1.0, 1.0, seed.wrapping_add(2)),
    };
    grad_check(&objective, &CbamObjective::point(&input, params), step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_quarter_the_input() {
        let p = CbamParams::zeros(16, 4, 7).unwrap();
        let f = Tensor4::random_uniform([2, 16, 8, 8], -3.0, 3.0, 1);
        let ca = channel_attention(&f, &p).unwrap();
        assert_eq!(ca.dims(), [2, 16, 1, 1]);
        assert!(ca.data().iter().all(|v| *v == 0.5));
        let sa = spatial_attention(&f, &p).unwrap();
        assert_eq!(sa.dims(), [2, 1, 8, 8]);
        assert!(sa.data().iter().all(|v| *v == 0.5));
        let (out, _) = cbam_forward(&f, &p).unwrap();
        assert_eq!(out.dims(), f.dims());
        for (o, x) in out.data().iter().zip(f.data()) {
            assert!((o - 0.25 * x).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_input_pools_agree() {
        let p = CbamParams::seeded(8, 2, 3, 4).unwrap();
        let kval = 0.7;
        let f = Tensor4::filled([1, 8, 4, 5], kval);
        let ca = channel_attention(&f, &p).unwrap();
        let v = vec![kval; 8];
        let hid = mlp_hidden(&v, &p);
        for i in 0..8 {
            let want = sigmoid(2.0 * mlp_out(&hid, &p, i));
            assert!((ca.data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn center_tap_kernel_passes_the_mean() {
        let mut p = CbamParams::zeros(1, 1, 7).unwrap();
        p.spatial_kernel[3 * 7 + 3] = 1.0;
        let f = Tensor4::filled([1, 1, 6, 6], 0.4);
        let sa = spatial_attention(&f, &p).unwrap();
        assert!(sa.data().iter().all(|v| (v - sigmoid(0.4)).abs() < 1e-15));

        // An off-center tap sees zero padding near the border.
        p.spatial_kernel[3 * 7 + 3] = 0.0;
        p.spatial_kernel[3 * 7 + 6] = 1.0;
        let sa = spatial_attention(&f, &p).unwrap();
        assert!((sa.get(0, 0, 2, 2) - sigmoid(0.4)).abs() < 1e-15);
        assert_eq!(sa.get(0, 0, 2, 3), 0.5);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = CbamParams::seeded(4, 2, 7, 8).unwrap();
        let (out, _) = cbam_forward(&Tensor4::zeros([1, 4, 3, 3]), &p).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_errors() {
        assert!(CbamParams::zeros(10, 4, 7).is_err());
        assert!(CbamParams::zeros(8, 4, 6).is_err());
        let p = CbamParams::zeros(8, 4, 7).unwrap();
        assert!(matches!(
            cbam_forward(&Tensor4::zeros([1, 4, 3, 3]), &p),
            Err(Error::Shape(_))
        ));
        let (_, cache) = cbam_forward(&Tensor4::zeros([1, 8, 3, 3]), &p).unwrap();
        assert!(matches!(
            cbam_backward(&Tensor4::zeros([1, 8, 3, 4]), &cache),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = CbamParams::seeded(8, 4, 7, 2).unwrap();
        let f = Tensor4::random_uniform([2, 8, 4, 4], -1.0, 1.0, 3);
        let (_, cache) = cbam_forward(&f, &p).unwrap();
        let (gi, gp) = cbam_backward(&Tensor4::zeros(f.dims()), &cache).unwrap();
        assert!(gi.data().iter().all(|v| *v == 0.0));
        assert!(gp.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn max_pool_ties_route_to_first() {
        let p = CbamParams::zeros(2, 1, 1).unwrap();
        // Both channels equal everywhere: spatial max picks channel 0.
        let f = Tensor4::filled([1, 2, 2, 2], 1.0);
        let (_, cache) = cbam_forward(&f, &p).unwrap();
        assert!(cache.spatial.max_at.iter().all(|&i| i == 0));
        assert!(cache.channel.max_at.iter().all(|&i| i == 0));
    }

    #[test]
    fn zero_weight_backward_matches_finite_differences() {
        let dims = [1, 4, 3, 3];
        let p = CbamParams::zeros(4, 2, 3).unwrap();
        let obj = CbamObjective {
            dims,
            template: p.clone(),
            weights: Tensor4::filled(dims, 1.0),
        };
        let input = Tensor4::random_uniform(dims, -1.0, 1.0, 10);
        let r = grad_check(&obj, &CbamObjective::point(&input, &p), 1e-6).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
        // Zero weights block the attention paths back to the input, leaving
        // the direct product of two 0.5 gates.
        let g = obj.gradient(&CbamObjective::point(&input, &p)).unwrap();
        assert!(g[..36].iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn blob_round_trip() {
        let p = CbamParams::seeded(8, 4, 7, 5).unwrap();
        let blob = p.to_blob();
        assert_eq!(CbamParams::from_blob(&blob).unwrap(), p);
        let hlen = u64::from_le_bytes(blob[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&blob[8..8 + hlen]).unwrap();
        assert_eq!(header["tensors"][2]["shape"], serde_json::json!([2, 7, 7]));
        assert_eq!(blob.len(), 8 + hlen + 8 * p.param_count());
        assert!(CbamParams::from_blob(&blob[..blob.len() - 1]).is_err());
        assert!(CbamParams::from_blob(&[1, 2]).is_err());
    }
}
