//! `PDLSMDL1` model files: magic, u32 version, little-endian payload, then a
//! u64 checksum (leading eight bytes of the payload's SHA-256).

use std::path::Path;

use sha2::{Digest, Sha256};

use super::atomic_write;
use crate::calibration::{McConfig, Threshold, ThresholdSet, ThresholdTargets};
use crate::error::{Error, Result};
use crate::hierarchy::{PdlsModel, Preprocessing};
use crate::mil::{AttentionParams, BagModel, TaskHead};
use crate::nn::{Activation, Dense, Matrix, Mlp};
use crate::qc::RefColorStats;

pub const MODEL_MAGIC: &[u8; 8] = b"PDLSMDL1";
pub const MODEL_VERSION: u32 = 1;
pub const PREPROCESSING_MAGIC: &[u8; 8] = b"PDLSPRE1";

pub fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows());
        self.u32(m.cols());
        self.f64s(m.data());
    }

    fn bag_model(&mut self, m: &BagModel) {
        self.u32(m.encoder.layers.len());
        for l in &m.encoder.layers {
            self.u8(match l.activation {
                Activation::Identity => 0,
                Activation::Relu => 1,
            });
            self.matrix(&l.weight);
            self.f64s(&l.bias);
        }
        self.matrix(&m.attention.v);
        self.matrix(&m.attention.u);
        self.f64s(&m.attention.w);
        self.u32(m.heads.len());
        for h in &m.heads {
            self.str(&h.name);
            self.matrix(&h.weight);
            self.f64s(&h.bias);
        }
    }

    fn preprocessing(&mut self, p: &Preprocessing) {
        self.bool(p.reference_color.is_some());
        if let Some(c) = &p.reference_color {
            self.f64s(&c.mean);
            self.f64s(&c.std);
        }
        self.bool(p.ink_detector.is_some());
        if let Some(m) = &p.ink_detector {
            self.bag_model(m);
        }
        self.bool(p.blur_threshold.is_some());
        if let Some(b) = p.blur_threshold {
            self.f64(b);
        }
    }

    fn threshold(&mut self, t: &Threshold) {
        self.f64(t.value);
        self.bool(t.attainable);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8 name"))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(corrupt(format!("invalid flag byte {v}"))),
        }
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let r = self.u32()?;
        let c = self.u32()?;
        let n = r.checked_mul(c).ok_or_else(|| corrupt("matrix size overflow"))?;
        Matrix::from_vec(r, c, self.f64s(n)?)
    }

    fn bag_model(&mut self) -> Result<BagModel> {
        let n_layers = self.u32()?;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        let mut prev: Option<usize> = None;
        for _ in 0..n_layers {
            let activation = match self.u8()? {
                0 => Activation::Identity,
                1 => Activation::Relu,
                v => return Err(corrupt(format!("unknown activation {v}"))),
            };
            let weight = self.matrix()?;
            if prev.is_some_and(|p| p != weight.cols()) {
                return Err(corrupt("encoder layer widths do not chain"));
            }
            prev = Some(weight.rows());
            let bias = self.f64s(weight.rows())?;
            layers.push(Dense {
                weight,
                bias,
                activation,
            });
        }
        let dim = prev.ok_or_else(|| corrupt("encoder has no layers"))?;
        let v = self.matrix()?;
        let u = self.matrix()?;
        if v.cols() != dim || u.shape() != v.shape() {
            return Err(corrupt("attention shape mismatch"));
        }
        let w = self.f64s(v.rows())?;
        let n_heads = self.u32()?;
        let mut heads = Vec::with_capacity(n_heads.min(64));
        for _ in 0..n_heads {
            let name = self.str()?;
            let weight = self.matrix()?;
            if weight.cols() != dim {
                return Err(corrupt(format!("head {name} width mismatch")));
            }
            let bias = self.f64s(weight.rows())?;
            heads.push(TaskHead { name, weight, bias });
        }
        Ok(BagModel {
            encoder: Mlp { layers },
            attention: AttentionParams { v, u, w },
            heads,
        })
    }

    fn preprocessing(&mut self) -> Result<Preprocessing> {
        let reference_color = if self.bool()? {
            let mean = self.f64s(3)?.try_into().expect("three values");
            let std = self.f64s(3)?.try_into().expect("three values");
            Some(RefColorStats { mean, std })
        } else {
            None
        };
        let ink_detector = if self.bool()? { Some(self.bag_model()?) } else { None };
        let blur_threshold = if self.bool()? { Some(self.f64()?) } else { None };
        Ok(Preprocessing {
            reference_color,
            ink_detector,
            blur_threshold,
        })
    }

    fn threshold(&mut self) -> Result<Threshold> {
        Ok(Threshold {
            value: self.f64()?,
            attainable: self.bool()?,
        })
    }
}

fn encode_payload(model: &PdlsModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(model.mc.passes);
    w.f64(model.mc.dropout);
    w.u64(model.mc.seed);
    for m in [&model.upstream, &model.suspect, &model.rest] {
        w.bag_model(m);
    }
    match &model.thresholds {
        None => w.bool(false),
        Some(t) => {
            w.bool(true);
            t.accuracy.iter().for_each(|x| w.threshold(x));
            w.threshold(&t.ppv_high);
            w.f64s(&t.targets.accuracy);
            w.f64(t.targets.ppv_high);
        }
    }
    w.preprocessing(&model.preprocessing);
    w.buf
}

fn decode_payload(payload: &[u8]) -> Result<PdlsModel> {
    let mut r = Reader { buf: payload, pos: 0 };
    let mc = McConfig {
        passes: r.u32()?,
        dropout: r.f64()?,
        seed: r.u64()?,
    };
    let upstream = r.bag_model()?;
    let suspect = r.bag_model()?;
    let rest = r.bag_model()?;
    let thresholds = if r.bool()? {
        let mut accuracy = [Threshold {
            value: 0.0,
            attainable: true,
        }; 6];
        for t in &mut accuracy {
            *t = r.threshold()?;
        }
        let ppv_high = r.threshold()?;
        let acc = r.f64s(6)?;
        let targets = ThresholdTargets {
            accuracy: acc.try_into().expect("six values"),
            ppv_high: r.f64()?,
        };
        Some(ThresholdSet {
            accuracy,
            ppv_high,
            targets,
        })
    } else {
        None
    };
    let preprocessing = r.preprocessing()?;
    if r.pos != payload.len() {
        return Err(corrupt(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    Ok(PdlsModel {
        upstream,
        suspect,
        rest,
        thresholds,
        mc,
        preprocessing,
    })
}

fn seal(magic: &[u8; 8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 20);
    out.extend_from_slice(magic);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&checksum(payload).to_le_bytes());
    out
}

fn open<'a>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<&'a [u8]> {
    if bytes.len() < 20 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != magic {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let (payload, tail) = bytes[12..].split_at(bytes.len() - 20);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if stored != checksum(payload) {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(payload)
}

pub fn encode_model(model: &PdlsModel) -> Vec<u8> {
    seal(MODEL_MAGIC, &encode_payload(model))
}

pub fn decode_model(bytes: &[u8]) -> Result<PdlsModel> {
    decode_payload(open(MODEL_MAGIC, bytes)?)
}

pub fn save_model(model: &PdlsModel, path: &Path) -> Result<()> {
    atomic_write(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<PdlsModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Preprocessing models alone, in the same envelope under `PDLSPRE1`.
pub fn save_preprocessing(p: &Preprocessing, path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.preprocessing(p);
    atomic_write(path, &seal(PREPROCESSING_MAGIC, &w.buf))
}

pub fn load_preprocessing(path: &Path) -> Result<Preprocessing> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let payload = open(PREPROCESSING_MAGIC, &bytes)?;
    let mut r = Reader { buf: payload, pos: 0 };
    let p = r.preprocessing()?;
    if r.pos != payload.len() {
        return Err(corrupt(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    Ok(p)
}
