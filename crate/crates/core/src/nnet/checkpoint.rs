//! Versioned binary checkpoints: architecture tag, every parameter tensor,
//! batch-norm running statistics, frozen flags, and a trailing checksum.
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::layers::{BatchNorm2d, Conv2d, Dense, DropoutLayer, GlobalAvgPool, Layer, MaxPool2, Relu};
use super::model::Model;

const MAGIC: &[u8; 4] = b"MRCP";
const VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_BN: u8 = 1;
const KIND_RELU: u8 = 2;
const KIND_POOL: u8 = 3;
const KIND_GAP: u8 = 4;
const KIND_DROPOUT: u8 = 5;
const KIND_DENSE: u8 = 6;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1_0000_0000_01b3);
    }
    hash
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_vec(&mut self, values: &[f64]) {
        self.buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            self.f64(*v);
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "unexpected end of file at offset {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let len = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize;
        if len > 1 << 28 {
            return Err(Error::CorruptCheckpoint(format!("implausible tensor length {len}")));
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("architecture tag is not utf-8".into()))
    }
}

/// Serialize the model to bytes.
pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(model.arch_tag());
    w.u32(model.input_size() as u32);
    w.u32(model.num_classes() as u32);
    w.u32(model.backbone_len() as u32);
    w.u32(model.layers.len() as u32);
    for layer in &model.layers {
        match layer {
            Layer::Conv2d(l) => {
                w.u8(KIND_CONV);
                w.u8(l.frozen as u8);
                w.u32(l.in_channels as u32);
                w.u32(l.out_channels as u32);
                w.u32(l.kernel as u32);
                w.u32(l.stride as u32);
                w.u32(l.pad as u32);
                w.f64_vec(&l.weights);
                w.f64_vec(&l.bias);
            }
            Layer::BatchNorm(l) => {
                w.u8(KIND_BN);
                w.u8(l.frozen as u8);
                w.u32(l.channels as u32);
                w.f64(l.momentum);
                w.f64(l.eps);
                w.f64_vec(&l.gamma);
                w.f64_vec(&l.beta);
                w.f64_vec(&l.running_mean);
                w.f64_vec(&l.running_var);
            }
            Layer::Relu(_) => {
                w.u8(KIND_RELU);
                w.u8(0);
            }
            Layer::MaxPool(_) => {
                w.u8(KIND_POOL);
                w.u8(0);
            }
            Layer::GlobalAvgPool(_) => {
                w.u8(KIND_GAP);
                w.u8(0);
            }
            Layer::Dropout(l) => {
                w.u8(KIND_DROPOUT);
                w.u8(0);
                w.f64(l.rate);
            }
            Layer::Dense(l) => {
                w.u8(KIND_DENSE);
                w.u8(l.frozen as u8);
                w.u32(l.in_features as u32);
                w.u32(l.out_features as u32);
                w.f64_vec(&l.weights);
                w.f64_vec(&l.bias);
            }
        }
    }
    let checksum = fnv1a64(&w.buf);
    w.buf.extend_from_slice(&checksum.to_le_bytes());
    w.buf
}

/// Reconstruct a model from checkpoint bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::CorruptCheckpoint("file too short".into()));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
    if fnv1a64(payload) != stored {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: payload, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let arch_tag = r.str()?;
    let input_size = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let backbone_len = r.u32()? as usize;
    let num_layers = r.u32()? as usize;
    if num_layers > 1024 {
        return Err(Error::CorruptCheckpoint(format!("implausible layer count {num_layers}")));
    }
    let mut rng = crate::rng::DetRng::new(0);
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let kind = r.u8()?;
        let frozen = r.u8()? != 0;
        let layer = match kind {
            KIND_CONV => {
                let in_channels = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let kernel = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let pad = r.u32()? as usize;
                let mut l = Conv2d::new(in_channels, out_channels, kernel, stride, pad, &mut rng);
                l.weights = r.f64_vec()?;
                l.bias = r.f64_vec()?;
                if l.weights.len() != out_channels * in_channels * kernel * kernel
                    || l.bias.len() != out_channels
                {
                    return Err(Error::CorruptCheckpoint("conv tensor sizes disagree with header".into()));
                }
                l.grad_weights = vec![0.0; l.weights.len()];
                l.grad_bias = vec![0.0; l.bias.len()];
                l.frozen = frozen;
                Layer::Conv2d(l)
            }
            KIND_BN => {
                let channels = r.u32()? as usize;
                let mut l = BatchNorm2d::new(channels);
                l.momentum = r.f64()?;
                l.eps = r.f64()?;
                l.gamma = r.f64_vec()?;
                l.beta = r.f64_vec()?;
                l.running_mean = r.f64_vec()?;
                l.running_var = r.f64_vec()?;
                for v in [&l.gamma, &l.beta, &l.running_mean, &l.running_var] {
                    if v.len() != channels {
                        return Err(Error::CorruptCheckpoint("batch norm tensor sizes disagree".into()));
                    }
                }
                l.frozen = frozen;
                Layer::BatchNorm(l)
            }
            KIND_RELU => Layer::Relu(Relu::default()),
            KIND_POOL => Layer::MaxPool(MaxPool2::default()),
            KIND_GAP => Layer::GlobalAvgPool(GlobalAvgPool::default()),
            KIND_DROPOUT => {
                let rate = r.f64()?;
                Layer::Dropout(
                    DropoutLayer::new(rate)
                        .map_err(|_| Error::CorruptCheckpoint(format!("bad dropout rate {rate}")))?,
                )
            }
            KIND_DENSE => {
                let in_features = r.u32()? as usize;
                let out_features = r.u32()? as usize;
                let mut l = Dense::new(in_features, out_features, &mut rng);
                l.weights = r.f64_vec()?;
                l.bias = r.f64_vec()?;
                if l.weights.len() != in_features * out_features || l.bias.len() != out_features {
                    return Err(Error::CorruptCheckpoint("dense tensor sizes disagree with header".into()));
                }
                l.grad_weights = vec![0.0; l.weights.len()];
                l.grad_bias = vec![0.0; l.bias.len()];
                l.frozen = frozen;
                Layer::Dense(l)
            }
            other => {
                return Err(Error::CorruptCheckpoint(format!("unknown layer kind {other}")));
            }
        };
        layers.push(layer);
    }
    if r.pos != payload.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes after last layer".into()));
    }
    if backbone_len > layers.len() {
        return Err(Error::CorruptCheckpoint("backbone length exceeds layer count".into()));
    }
    Ok(Model::from_parts(layers, backbone_len, arch_tag, input_size, num_classes))
}

/// Write a checkpoint file.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint file.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
