//! Datasets as a CSV manifest plus a `PDLSEMB1` embedding file.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::data::{SpecimenBag, Split};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::taxonomy::SpecimenClass;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"PDLSEMB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub specimen_id: String,
    pub lab_id: String,
    pub class: String,
    pub diagnosis: String,
    pub split: String,
    pub n_tiles: usize,
    /// Byte offset of the specimen's record in the embedding file.
    pub offset: u64,
}

fn inconsistent(specimen: &str, detail: impl Into<String>) -> Error {
    Error::Inconsistent {
        specimen: specimen.to_string(),
        detail: detail.into(),
    }
}

pub fn encode_embeddings(bags: &[SpecimenBag]) -> Result<(Vec<u8>, Vec<u64>)> {
    let mut buf = Vec::new();
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(bags.len() as u32).to_le_bytes());
    let mut offsets = Vec::with_capacity(bags.len());
    for b in bags {
        if b.specimen_id.len() > usize::from(u16::MAX) {
            return Err(inconsistent(&b.specimen_id, "id longer than 65535 bytes"));
        }
        offsets.push(buf.len() as u64);
        buf.extend_from_slice(&(b.specimen_id.len() as u16).to_le_bytes());
        buf.extend_from_slice(b.specimen_id.as_bytes());
        buf.extend_from_slice(&(b.tiles.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(b.tiles.cols() as u32).to_le_bytes());
        for &v in b.tiles.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok((buf, offsets))
}

/// Records keyed by specimen id, with their offsets.
pub fn decode_embeddings(bytes: &[u8]) -> Result<HashMap<String, (u64, Matrix)>> {
    let bad = |msg: &str| inconsistent("<embedding file>", msg);
    if bytes.len() < 12 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(bad("missing PDLSEMB1 header"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut pos = 12usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated record"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let mut out = HashMap::with_capacity(count);
    let mut dim = None;
    let mut offset = 12u64;
    for _ in 0..count {
        let id_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("non-UTF-8 specimen id"))?;
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if *dim.get_or_insert(d) != d {
            return Err(inconsistent(&id, format!("embedding width {d} differs from {}", dim.unwrap())));
        }
        let size = n.checked_mul(d).and_then(|v| v.checked_mul(4)).ok_or_else(|| bad("record size overflow"))?;
        let data = take(size)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let record_len = 2 + id_len + 8 + size;
        if out.insert(id.clone(), (offset, Matrix::from_vec(n, d, data)?)).is_some() {
            return Err(inconsistent(&id, "duplicate embedding record"));
        }
        offset += record_len as u64;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(out)
}

pub fn save_dataset(bags: &[SpecimenBag], manifest: &Path, embeddings: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for b in bags {
        if !seen.insert(b.specimen_id.as_str()) {
            return Err(inconsistent(&b.specimen_id, "duplicate specimen id"));
        }
    }
    let (emb, offsets) = encode_embeddings(bags)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (b, off) in bags.iter().zip(offsets) {
        w.serialize(ManifestRow {
            specimen_id: b.specimen_id.clone(),
            lab_id: b.lab_id.clone(),
            class: b.label.code().to_string(),
            diagnosis: b.diagnosis.clone(),
            split: b.split.code().to_string(),
            n_tiles: b.tiles.rows(),
            offset: off,
        })?;
    }
    let csv_bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    atomic_write(embeddings, &emb)?;
    atomic_write(manifest, &csv_bytes)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(file).deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

/// Load bags in manifest order. Hidden diagnostic-tile metadata is not
/// stored and comes back empty.
pub fn load_dataset(manifest: &Path, embeddings: &Path) -> Result<Vec<SpecimenBag>> {
    let rows = read_manifest(manifest)?;
    let bytes = std::fs::read(embeddings).map_err(|e| Error::io(embeddings, e))?;
    let mut records = decode_embeddings(&bytes)?;
    let mut seen = HashSet::new();
    let mut bags = Vec::with_capacity(rows.len());
    for row in rows {
        if !seen.insert(row.specimen_id.clone()) {
            return Err(inconsistent(&row.specimen_id, "duplicate manifest row"));
        }
        let (offset, tiles) = records
            .remove(&row.specimen_id)
            .ok_or_else(|| inconsistent(&row.specimen_id, "no embedding record"))?;
        if tiles.rows() != row.n_tiles {
            return Err(inconsistent(
                &row.specimen_id,
                format!("manifest lists {} tiles, embedding file has {}", row.n_tiles, tiles.rows()),
            ));
        }
        if offset != row.offset {
            return Err(inconsistent(
                &row.specimen_id,
                format!("manifest offset {} but record starts at {offset}", row.offset),
            ));
        }
        let bag = SpecimenBag {
            label: SpecimenClass::from_code(&row.class)?,
            split: row.split.parse::<Split>()?,
            specimen_id: row.specimen_id,
            lab_id: row.lab_id,
            diagnosis: row.diagnosis,
            tiles,
            diagnostic_tiles: Vec::new(),
        };
        bags.push(bag);
    }
    if let Some(extra) = records.keys().min() {
        return Err(inconsistent(extra, "embedding record without manifest row"));
    }
    Ok(bags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, PrototypeSet, SynthParams};

    fn bags() -> Vec<SpecimenBag> {
        let params = SynthParams {
            dim: 8,
            per_class: 2,
            min_tiles: 3,
            max_tiles: 6,
            ..SynthParams::default()
        };
        let protos = PrototypeSet::from_params(&params, 1).unwrap();
        gen_dataset(&[2; 6], &protos, &params, 1).unwrap()
    }

    #[test]
    fn round_trip_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let (m, e) = (dir.path().join("m.csv"), dir.path().join("e.bin"));
        let orig = bags();
        save_dataset(&orig, &m, &e).unwrap();
        let back = load_dataset(&m, &e).unwrap();
        assert_eq!(back.len(), orig.len());
        for (a, b) in orig.iter().zip(&back) {
            assert_eq!((&a.specimen_id, a.label, a.split, &a.diagnosis), (&b.specimen_id, b.label, b.split, &b.diagnosis));
            for (x, y) in a.tiles.data().iter().zip(b.tiles.data()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
        let text = std::fs::read_to_string(&m).unwrap();
        assert!(text.starts_with("specimen_id,lab_id,class,diagnosis,split,n_tiles,offset"));
    }

    #[test]
    fn missing_record_names_specimen() {
        let dir = tempfile::tempdir().unwrap();
        let (m, e) = (dir.path().join("m.csv"), dir.path().join("e.bin"));
        let orig = bags();
        save_dataset(&orig, &m, &e).unwrap();
        let (emb, _) = encode_embeddings(&orig[..orig.len() - 1]).unwrap();
        std::fs::write(&e, emb).unwrap();
        match load_dataset(&m, &e) {
            Err(Error::Inconsistent { specimen, .. }) => assert_eq!(specimen, orig.last().unwrap().specimen_id),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixed_widths_are_rejected() {
        let mut b = bags();
        b[1].tiles = Matrix::zeros(2, 5);
        let (emb, _) = encode_embeddings(&b).unwrap();
        match decode_embeddings(&emb) {
            Err(Error::Inconsistent { specimen, .. }) => assert_eq!(specimen, b[1].specimen_id),
            other => panic!("{other:?}"),
        }
    }
}
