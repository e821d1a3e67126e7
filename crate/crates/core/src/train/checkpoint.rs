//! `WRFC` model checkpoints.
//!
//! Layout (little-endian): magic `WRFC`, version u16, SHA-256 of the config
//! text, config text (u32 length + UTF-8), iteration u64, spectrum scale
//! f64, receiver origin and orientation (12 f64), primitive count u32,
//! primitive arrays as f32 (mu, log_scale, rotation, opacity, signal,
//! mask; 14 values per primitive), the deformation net (embedding levels,
//! activation tag, layer widths, input normalizations, weights as f32),
//! then a presence byte and the optional optimizer section (f64 moments
//! and densification statistics).

use std::path::Path;

use nalgebra::Matrix3;

use crate::deform::{Activation, DeformationNet, InputNorm};
use crate::error::{Error, Result};
use crate::geometry::{ReceiverFrame, Vec3};
use crate::scene::{GaussianPrimitive, Scene};
use crate::train::config::TrainConfig;
use crate::train::densify::GradStats;
use crate::train::optim::{Group, Moments, OptimizerState};

pub const MAGIC: &[u8; 4] = b"WRFC";
pub const VERSION: u16 = 1;
/// f32 values stored per primitive.
pub const FLOATS_PER_PRIMITIVE: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub optimizer: OptimizerState,
    pub grad_stats: GradStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed training iterations.
    pub iteration: u64,
    /// Divisor that maps measured spectra to the unit range the model
    /// was trained on.
    pub spectrum_scale: f64,
    pub scene: Scene,
    pub net: DeformationNet,
    pub state: Option<TrainState>,
}

/// Byte counts of the encoded sections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SectionSizes {
    pub header: usize,
    pub primitives: usize,
    pub net: usize,
    pub state: usize,
}

impl SectionSizes {
    pub fn total(&self) -> usize {
        self.header + self.primitives + self.net + self.state
    }

    /// Everything except the fixed-size network and the optimizer state.
    pub fn model_without_net(&self) -> usize {
        self.header + self.primitives
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.bytes(&u32::try_from(v).expect("count exceeds u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.bytes(&(v as f32).to_le_bytes());
    }
    fn len(&self) -> usize {
        self.0.len()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, msg)
    }
}

fn write_norm(w: &mut Writer, n: &InputNorm) {
    n.center.iter().for_each(|v| w.f64(*v));
    w.f64(n.scale);
}

impl Checkpoint {
    fn encode_sections(&self, with_state: bool) -> (Vec<u8>, SectionSizes) {
        let mut w = Writer(Vec::new());
        let mut sizes = SectionSizes::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.bytes(&self.config.hash());
        let text = self.config.to_text();
        w.u32(text.len());
        w.bytes(text.as_bytes());
        w.u64(self.iteration);
        w.f64(self.spectrum_scale);
        self.scene.receiver.origin.iter().for_each(|v| w.f64(*v));
        self.scene.receiver.orientation.iter().for_each(|v| w.f64(*v));
        w.u32(self.scene.len());
        sizes.header = w.len();

        for group in Group::ALL {
            let mut vals = Vec::with_capacity(self.scene.len() * group.width());
            for p in &self.scene.primitives {
                group.read(p, &mut vals);
            }
            vals.iter().for_each(|v| w.f32(*v));
        }
        sizes.primitives = w.len() - sizes.header;

        let net = &self.net;
        w.u32(net.embedding_levels());
        w.u8(net.activation().tag());
        w.u32(net.dims().len());
        net.dims().iter().for_each(|d| w.u32(*d));
        write_norm(&mut w, &net.mu_norm());
        write_norm(&mut w, &net.tx_norm());
        w.u32(net.theta().len());
        net.theta().iter().for_each(|v| w.f32(*v));
        sizes.net = w.len() - sizes.header - sizes.primitives;

        match (&self.state, with_state) {
            (Some(st), true) => {
                w.u8(1);
                w.u64(st.optimizer.step);
                for m in st.optimizer.groups.iter().chain(std::iter::once(&st.optimizer.theta)) {
                    m.m.iter().for_each(|v| w.f64(*v));
                    m.v.iter().for_each(|v| w.f64(*v));
                }
                st.grad_stats.sum.iter().for_each(|v| w.f64(*v));
                st.grad_stats.count.iter().for_each(|c| w.bytes(&c.to_le_bytes()));
            }
            _ => w.u8(0),
        }
        sizes.state = w.len() - sizes.header - sizes.primitives - sizes.net;
        (w.0, sizes)
    }

    /// Encodes the checkpoint; the optimizer section is written only when
    /// present and `with_state` is set.
    pub fn encode(&self, with_state: bool) -> Vec<u8> {
        self.encode_sections(with_state).0
    }

    pub fn section_sizes(&self, with_state: bool) -> SectionSizes {
        self.encode_sections(with_state).1
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.err("bad magic, not a checkpoint"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported checkpoint version {version}")));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let len = r.u32()?;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("config text is not UTF-8"))?;
        let config = TrainConfig::parse(text).map_err(|e| r.err(format!("stored config: {e}")))?;
        if config.hash() != hash {
            return Err(r.err("config hash mismatch"));
        }
        let iteration = r.u64()?;
        let spectrum_scale = r.f64()?;
        let origin = r.vec3()?;
        let orientation = Matrix3::from_column_slice(&r.f64s(9)?);
        let n = r.u32()?;

        let mut primitives = vec![GaussianPrimitive::isotropic(Vec3::zeros(), 1.0); n];
        for group in Group::ALL {
            let w = group.width();
            let vals: Vec<f64> = (0..n * w).map(|_| r.f32()).collect::<Result<_>>()?;
            for (p, v) in primitives.iter_mut().zip(vals.chunks(w)) {
                group.write(p, v);
            }
        }
        let scene = Scene::new(primitives, ReceiverFrame::new(origin, orientation));

        let levels = r.u32()?;
        let activation = Activation::from_tag(r.u8()?).ok_or_else(|| r.err("unknown activation tag"))?;
        let n_dims = r.u32()?;
        let dims: Vec<usize> = (0..n_dims).map(|_| r.u32()).collect::<Result<_>>()?;
        let mu_norm = InputNorm {
            center: r.vec3()?,
            scale: r.f64()?,
        };
        let tx_norm = InputNorm {
            center: r.vec3()?,
            scale: r.f64()?,
        };
        let theta_len = r.u32()?;
        let theta: Vec<f64> = (0..theta_len).map(|_| r.f32()).collect::<Result<_>>()?;
        let net = DeformationNet::from_parts(dims, theta, levels, activation, mu_norm, tx_norm)
            .map_err(|e| r.err(e.to_string()))?;

        let state = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut groups = Vec::with_capacity(Group::ALL.len());
                for g in Group::ALL {
                    let m = r.f64s(n * g.width())?;
                    let v = r.f64s(n * g.width())?;
                    groups.push(Moments::from_parts(g.width(), m, v)?);
                }
                let m = r.f64s(theta_len)?;
                let v = r.f64s(theta_len)?;
                let theta = Moments::from_parts(1, m, v)?;
                let sum = r.f64s(n)?;
                let count = (0..n)
                    .map(|_| Ok(u32::from_le_bytes(r.take(4)?.try_into().unwrap())))
                    .collect::<Result<_>>()?;
                Some(TrainState {
                    optimizer: OptimizerState { step, groups, theta },
                    grad_stats: GradStats { sum, count },
                })
            }
            t => return Err(r.err(format!("bad optimizer section flag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after checkpoint"));
        }
        Ok(Self {
            config,
            iteration,
            spectrum_scale,
            scene,
            net,
            state,
        })
    }

    pub fn save(&self, path: &Path, with_state: bool) -> Result<()> {
        std::fs::write(path, self.encode(with_state)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}
