//! Transmitter-conditioned calibration network.
//!
//! A small MLP maps the positionally embedded primitive center and
//! transmitter position to additive deltas on log-scale, quaternion and
//! complex signal. All weights live in one flat vector (layer by layer,
//! row-major weight then bias) so optimizers and checkpoints see a single
//! slice.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quat_norm, quat_normalize, Aabb, Quat, Vec3};
use crate::scene::GaussianPrimitive;

/// 3 log-scale + 4 quaternion + 2 signal (re, im).
pub const CALIBRATION_WIDTH: usize = 9;
/// Below this norm `rotation + delta_quat` is treated as degenerate.
pub const DEGENERATE_QUAT_NORM: f64 = 1e-8;
/// Rows per block for cache-free inference.
const INFERENCE_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Silu => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Silu),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "silu" => Some(Activation::Silu),
            _ => None,
        }
    }
}

/// Affine map `(x - center) / scale` applied before embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNorm {
    pub center: Vec3,
    pub scale: f64,
}

impl InputNorm {
    pub const IDENTITY: InputNorm = InputNorm {
        center: Vec3::new(0.0, 0.0, 0.0),
        scale: 1.0,
    };

    /// Maps the box into `[-1, 1]` along its longest axis.
    pub fn from_aabb(b: &Aabb) -> Self {
        let half = b.half_extent().max();
        Self {
            center: b.center(),
            scale: if half > 0.0 { half } else { 1.0 },
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        (x - self.center) / self.scale
    }
}

pub fn embedding_len(levels: usize) -> usize {
    3 + 6 * levels
}

/// `v` followed by `sin(2^k pi v), cos(2^k pi v)` for `k = 0..levels`.
pub fn positional_embedding(v: &Vec3, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(embedding_len(levels));
    write_embedding(v, levels, &mut out);
    out
}

fn write_embedding(v: &Vec3, levels: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(v.as_slice());
    let mut freq = std::f64::consts::PI;
    for _ in 0..levels {
        out.extend(v.iter().map(|x| (freq * x).sin()));
        out.extend(v.iter().map(|x| (freq * x).cos()));
        freq *= 2.0;
    }
}

/// Gradient on `v` given a gradient on its embedding.
pub fn positional_embedding_backward(v: &Vec3, levels: usize, d_emb: &[f64]) -> Vec3 {
    debug_assert_eq!(d_emb.len(), embedding_len(levels));
    let mut d = Vec3::new(d_emb[0], d_emb[1], d_emb[2]);
    let mut freq = std::f64::consts::PI;
    for k in 0..levels {
        let base = 3 + 6 * k;
        for c in 0..3 {
            let (s, co) = (freq * v[c]).sin_cos();
            d[c] += freq * (co * d_emb[base + c] - s * d_emb[base + 3 + c]);
        }
        freq *= 2.0;
    }
    d
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Calibration {
    pub delta_log_scale: Vec3,
    pub delta_quat: Quat,
    pub delta_signal: Complex64,
}

impl Calibration {
    fn from_row(r: ArrayView1<f64>) -> Self {
        Self {
            delta_log_scale: Vec3::new(r[0], r[1], r[2]),
            delta_quat: [r[3], r[4], r[5], r[6]],
            delta_signal: Complex64::new(r[7], r[8]),
        }
    }

    fn to_row(self) -> [f64; CALIBRATION_WIDTH] {
        let l = self.delta_log_scale;
        let q = self.delta_quat;
        [l.x, l.y, l.z, q[0], q[1], q[2], q[3], self.delta_signal.re, self.delta_signal.im]
    }

    pub fn is_finite(&self) -> bool {
        self.to_row().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct DeformationNet {
    /// Layer widths from input to output; `dims[0] = 2 * embedding_len`.
    dims: Vec<usize>,
    theta: Vec<f64>,
    embedding_levels: usize,
    activation: Activation,
    mu_norm: InputNorm,
    tx_norm: InputNorm,
    /// Bumped on every mutable access to the weights.
    generation: u64,
}

impl PartialEq for DeformationNet {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.theta == other.theta
            && self.embedding_levels == other.embedding_levels
            && self.activation == other.activation
            && self.mu_norm == other.mu_norm
            && self.tx_norm == other.tx_norm
    }
}

#[derive(Clone, Debug)]
pub struct DeformCache {
    generation: u64,
    p_tx: Vec3,
    mus_norm: Vec<Vec3>,
    x_mu: Array2<f64>,
    e_p: Array1<f64>,
    /// Pre-activations of hidden layers.
    zs: Vec<Array2<f64>>,
    /// Post-activations of hidden layers.
    acts: Vec<Array2<f64>>,
}

impl DeformCache {
    pub fn len(&self) -> usize {
        self.x_mu.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformGrads {
    /// Same layout as the net's flat weight vector.
    pub theta: Vec<f64>,
    pub mu: Vec<Vec3>,
    pub p_tx: Vec3,
}

impl DeformationNet {
    /// Fan-in scaled uniform init for hidden layers; the output layer starts
    /// at zero so an untrained net leaves primitives undeformed.
    pub fn new(
        embedding_levels: usize,
        hidden_width: usize,
        hidden_layers: usize,
        activation: Activation,
        mu_norm: InputNorm,
        tx_norm: InputNorm,
        seed: u64,
    ) -> Result<Self> {
        if hidden_width == 0 || hidden_layers == 0 {
            return Err(Error::invalid("deformation net needs at least one nonempty hidden layer"));
        }
        let mut dims = vec![2 * embedding_len(embedding_levels)];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(CALIBRATION_WIDTH);
        let mut net = Self::zeros_with_dims(dims, embedding_levels, activation, mu_norm, tx_norm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.dims.len() - 2;
        let mut off = 0;
        for l in 0..net.dims.len() - 1 {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            let count = fan_in * fan_out;
            if l < last {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for w in &mut net.theta[off..off + count] {
                    *w = rng.gen_range(-bound..bound);
                }
            }
            off += count + fan_out;
        }
        Ok(net)
    }

    fn zeros_with_dims(
        dims: Vec<usize>,
        embedding_levels: usize,
        activation: Activation,
        mu_norm: InputNorm,
        tx_norm: InputNorm,
    ) -> Result<Self> {
        if dims.len() < 2
            || dims[0] != 2 * embedding_len(embedding_levels)
            || *dims.last().unwrap() != CALIBRATION_WIDTH
            || dims.iter().any(|d| *d == 0)
        {
            return Err(Error::invalid(format!(
                "layer widths {dims:?} do not chain from the embedding to the calibration head"
            )));
        }
        if !(mu_norm.scale > 0.0) || !(tx_norm.scale > 0.0) {
            return Err(Error::invalid("input normalization scale must be positive"));
        }
        let len = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims,
            theta: vec![0.0; len],
            embedding_levels,
            activation,
            mu_norm,
            tx_norm,
            generation: 0,
        })
    }

    /// Rebuilds a net from serialized parts, validating the shapes.
    pub fn from_parts(
        dims: Vec<usize>,
        theta: Vec<f64>,
        embedding_levels: usize,
        activation: Activation,
        mu_norm: InputNorm,
        tx_norm: InputNorm,
    ) -> Result<Self> {
        let mut net = Self::zeros_with_dims(dims, embedding_levels, activation, mu_norm, tx_norm)?;
        if theta.len() != net.theta.len() {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                net.theta.len(),
                theta.len()
            )));
        }
        net.theta = theta;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.theta
    }

    pub fn embedding_levels(&self) -> usize {
        self.embedding_levels
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn mu_norm(&self) -> InputNorm {
        self.mu_norm
    }

    pub fn tx_norm(&self) -> InputNorm {
        self.tx_norm
    }

    fn emb_len(&self) -> usize {
        embedding_len(self.embedding_levels)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.dims.len());
        let mut off = 0;
        for w in self.dims.windows(2) {
            offs.push(off);
            off += w[0] * w[1] + w[1];
        }
        offs
    }

    fn layer<'a>(&self, theta: &'a [f64], off: usize, l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let w = ArrayView2::from_shape((o, i), &theta[off..off + o * i]).expect("layer shape");
        let b = ArrayView1::from(&theta[off + o * i..off + o * i + o]);
        (w, b)
    }

    /// Calibration for a single primitive.
    pub fn forward(&self, mu: &Vec3, p_tx: &Vec3) -> Calibration {
        self.forward_batch_inference(std::slice::from_ref(mu), p_tx)[0]
    }

    fn embed_inputs(&self, mus: &[Vec3], p_tx: &Vec3) -> (Vec<Vec3>, Array2<f64>, Array1<f64>) {
        let e = self.emb_len();
        let mus_norm: Vec<Vec3> = mus.iter().map(|m| self.mu_norm.apply(m)).collect();
        let mut flat = Vec::with_capacity(mus.len() * e);
        for m in &mus_norm {
            write_embedding(m, self.embedding_levels, &mut flat);
        }
        let x_mu = Array2::from_shape_vec((mus.len(), e), flat).expect("embedding shape");
        let e_p = Array1::from(positional_embedding(&self.tx_norm.apply(p_tx), self.embedding_levels));
        (mus_norm, x_mu, e_p)
    }

    /// Runs all hidden layers and the head; returns hidden pre-activations,
    /// activations and the output.
    fn run(&self, x_mu: &Array2<f64>, e_p: &Array1<f64>, keep: bool) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let e = self.emb_len();
        let offs = self.layer_offsets();
        let (w0, b0) = self.layer(&self.theta, offs[0], 0);
        let c = w0.slice(s![.., e..]).dot(e_p) + b0;
        let mut z = x_mu.dot(&w0.slice(s![.., ..e]).t()) + &c;
        let (mut zs, mut acts) = (Vec::new(), Vec::new());
        for l in 1..self.dims.len() - 1 {
            let a = z.mapv(|v| self.activation.apply(v));
            let (w, b) = self.layer(&self.theta, offs[l], l);
            let next = a.dot(&w.t()) + &b;
            if keep {
                zs.push(z);
                acts.push(a);
            }
            z = next;
        }
        (zs, acts, z)
    }

    /// Calibrations for many primitives at one transmitter, with the
    /// activations needed by [`DeformationNet::backward_batch`].
    pub fn forward_batch(&self, mus: &[Vec3], p_tx: &Vec3) -> (Vec<Calibration>, DeformCache) {
        let (mus_norm, x_mu, e_p) = self.embed_inputs(mus, p_tx);
        let (zs, acts, out) = self.run(&x_mu, &e_p, true);
        let cals = out.rows().into_iter().map(Calibration::from_row).collect();
        let cache = DeformCache {
            generation: self.generation,
            p_tx: *p_tx,
            mus_norm,
            x_mu,
            e_p,
            zs,
            acts,
        };
        (cals, cache)
    }

    /// Forward pass in fixed-size blocks without keeping activations.
    pub fn forward_batch_inference(&self, mus: &[Vec3], p_tx: &Vec3) -> Vec<Calibration> {
        let mut out = Vec::with_capacity(mus.len());
        for chunk in mus.chunks(INFERENCE_CHUNK) {
            let (_, x_mu, e_p) = self.embed_inputs(chunk, p_tx);
            let (_, _, z) = self.run(&x_mu, &e_p, false);
            out.extend(z.rows().into_iter().map(Calibration::from_row));
        }
        out
    }

    /// Reverse pass. The cache must come from `forward_batch` on this net
    /// with unchanged weights.
    pub fn backward_batch(&self, cache: &DeformCache, d_cal: &[Calibration]) -> Result<DeformGrads> {
        if cache.generation != self.generation {
            return Err(Error::Contract(
                "deformation cache is stale: weights changed since the forward pass".into(),
            ));
        }
        let n = cache.len();
        if d_cal.len() != n {
            return Err(Error::Contract(format!(
                "{} upstream gradients for a batch of {n}",
                d_cal.len()
            )));
        }
        let e = self.emb_len();
        let offs = self.layer_offsets();
        let mut d_theta = vec![0.0; self.theta.len()];
        let flat: Vec<f64> = d_cal.iter().flat_map(|c| c.to_row()).collect();
        let mut g = Array2::from_shape_vec((n, CALIBRATION_WIDTH), flat).expect("gradient shape");

        for l in (1..self.dims.len() - 1).rev() {
            let (w, _) = self.layer(&self.theta, offs[l], l);
            let a_prev = &cache.acts[l - 1];
            let dw = g.t().dot(a_prev);
            let db = g.sum_axis(Axis(0));
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            d_theta[offs[l]..offs[l] + o * i].copy_from_slice(dw.as_standard_layout().as_slice().unwrap());
            d_theta[offs[l] + o * i..offs[l] + o * i + o].copy_from_slice(db.as_slice().unwrap());
            let mut g_prev = g.dot(&w);
            let act = self.activation;
            g_prev.zip_mut_with(&cache.zs[l - 1], |gv, z| *gv *= act.grad(*z));
            g = g_prev;
        }

        let (w0, _) = self.layer(&self.theta, offs[0], 0);
        let h = self.dims[1];
        let in0 = self.dims[0];
        let dw_mu = g.t().dot(&cache.x_mu);
        let gsum = g.sum_axis(Axis(0));
        for r in 0..h {
            let row = &mut d_theta[offs[0] + r * in0..offs[0] + (r + 1) * in0];
            for c in 0..e {
                row[c] = dw_mu[(r, c)];
                row[e + c] = gsum[r] * cache.e_p[c];
            }
        }
        d_theta[offs[0] + h * in0..offs[0] + h * in0 + h].copy_from_slice(gsum.as_slice().unwrap());

        let dx_mu = g.dot(&w0.slice(s![.., ..e]));
        let mu = (0..n)
            .map(|i| {
                let row = dx_mu.row(i);
                let d = positional_embedding_backward(
                    &cache.mus_norm[i],
                    self.embedding_levels,
                    row.as_slice().expect("contiguous row"),
                );
                d / self.mu_norm.scale
            })
            .collect();
        let de_p = w0.slice(s![.., e..]).t().dot(&gsum);
        let p_norm = self.tx_norm.apply(&cache.p_tx);
        let p_tx = positional_embedding_backward(&p_norm, self.embedding_levels, de_p.as_slice().unwrap())
            / self.tx_norm.scale;
        Ok(DeformGrads {
            theta: d_theta,
            mu,
            p_tx,
        })
    }
}

/// Per-transmitter primitive parameters after calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deformed {
    pub log_scale: Vec3,
    /// Unit quaternion.
    pub rotation: Quat,
    pub signal: Complex64,
    /// `rotation + delta_quat` before normalization.
    quat_sum: Quat,
    degenerate: bool,
}

impl Deformed {
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }
}

pub fn apply_calibration(p: &GaussianPrimitive, cal: &Calibration) -> Deformed {
    let mut sum = p.rotation;
    for k in 0..4 {
        sum[k] += cal.delta_quat[k];
    }
    let degenerate = quat_norm(&sum) < DEGENERATE_QUAT_NORM;
    let rotation = if degenerate {
        quat_normalize(&p.rotation)
    } else {
        quat_normalize(&sum)
    };
    Deformed {
        log_scale: p.log_scale + cal.delta_log_scale,
        rotation,
        signal: p.signal + cal.delta_signal,
        quat_sum: sum,
        degenerate,
    }
}

/// Gradients flowing out of [`apply_calibration`]: the base parameters and
/// the calibration receive the same log-scale and signal gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationGrads {
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub signal: Complex64,
    pub calibration: Calibration,
}

fn normalize_backward(v: &Quat, d_unit: &Quat) -> Quat {
    let n = quat_norm(v);
    let q = [v[0] / n, v[1] / n, v[2] / n, v[3] / n];
    let dot: f64 = (0..4).map(|k| q[k] * d_unit[k]).sum();
    [
        (d_unit[0] - q[0] * dot) / n,
        (d_unit[1] - q[1] * dot) / n,
        (d_unit[2] - q[2] * dot) / n,
        (d_unit[3] - q[3] * dot) / n,
    ]
}

/// `d_signal` uses the real-pair convention `re + j im` for `(dL/dre, dL/dim)`.
pub fn apply_calibration_backward(
    p: &GaussianPrimitive,
    deformed: &Deformed,
    d_log_scale: &Vec3,
    d_rotation: &Quat,
    d_signal: Complex64,
) -> CalibrationGrads {
    let (d_base_rot, d_delta_quat) = if deformed.degenerate {
        (normalize_backward(&p.rotation, d_rotation), [0.0; 4])
    } else {
        let d = normalize_backward(&deformed.quat_sum, d_rotation);
        (d, d)
    };
    CalibrationGrads {
        log_scale: *d_log_scale,
        rotation: d_base_rot,
        signal: d_signal,
        calibration: Calibration {
            delta_log_scale: *d_log_scale,
            delta_quat: d_delta_quat,
            delta_signal: d_signal,
        },
    }
}
