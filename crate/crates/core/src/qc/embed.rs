use std::collections::HashMap;

use rand::Rng as _;

use super::image::{Tile, TILE_SIZE};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{derive, rng_from};

pub const EMBED_DIM: usize = 1024;
/// Nonzeros per projection row.
pub const PROJECTION_NNZ: usize = 256;

/// Seeded sparse random projection: every row has `nnz` entries of
/// `±1/√nnz`, so each row has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub input_dim: usize,
    pub rows: Vec<Vec<(u32, f64)>>,
    pub seed: u64,
}

impl Projection {
    pub fn new(input_dim: usize, output_dim: usize, nnz: usize, seed: u64) -> Result<Self> {
        if nnz == 0 || nnz > input_dim || output_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot project {input_dim} inputs to {output_dim} with {nnz} nonzeros per row"
            )));
        }
        let scale = 1.0 / (nnz as f64).sqrt();
        let rows = (0..output_dim)
            .map(|r| {
                let mut rng = rng_from(derive(seed, r as u64));
                let mut idx = rand::seq::index::sample(&mut rng, input_dim, nnz).into_vec();
                idx.sort_unstable();
                idx.into_iter()
                    .map(|i| (i as u32, if rng.random_bool(0.5) { scale } else { -scale }))
                    .collect()
            })
            .collect();
        Ok(Self { input_dim, rows, seed })
    }

    pub fn output_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(i, w)| w * x[i as usize]).sum())
            .collect()
    }
}

/// Flattened tile scaled to zero mean and unit standard deviation; a flat
/// tile becomes all zeros.
pub fn normalized_pixels(tile: &Tile) -> Vec<f64> {
    let mut v: Vec<f64> = tile.image.pixels.iter().flat_map(|p| p.map(f64::from)).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in &mut v {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
    v
}

pub enum Embedder {
    /// Sparse projection of the normalized tile followed by `tanh`.
    Builtin(Projection),
    /// Precomputed vectors keyed by (specimen id, tile index).
    External {
        dim: usize,
        vectors: HashMap<(String, usize), Vec<f64>>,
    },
}

impl Embedder {
    pub fn builtin(seed: u64) -> Self {
        Self::builtin_with(EMBED_DIM, seed)
    }

    pub fn builtin_with(dim: usize, seed: u64) -> Self {
        let input = TILE_SIZE * TILE_SIZE * 3;
        Embedder::Builtin(Projection::new(input, dim, PROJECTION_NNZ.min(input), seed).expect("valid sizes"))
    }

    /// External embedder over per-specimen tile matrices.
    pub fn external(bags: impl IntoIterator<Item = (String, Matrix)>) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (id, m) in bags {
            if *dim.get_or_insert(m.cols()) != m.cols() {
                return Err(Error::Inconsistent {
                    specimen: id,
                    detail: format!("embedding width {} differs from {}", m.cols(), dim.unwrap()),
                });
            }
            for r in 0..m.rows() {
                vectors.insert((id.clone(), r), m.row(r).to_vec());
            }
        }
        Ok(Embedder::External {
            dim: dim.unwrap_or(EMBED_DIM),
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Builtin(p) => p.output_dim(),
            Embedder::External { dim, .. } => *dim,
        }
    }

    /// One row per tile. External lookups use the tile's position in
    /// `tiles` as its index.
    pub fn embed(&self, specimen_id: &str, tiles: &[Tile]) -> Result<Matrix> {
        let mut out = Matrix::zeros(tiles.len(), self.dim());
        for (i, t) in tiles.iter().enumerate() {
            let v = match self {
                Embedder::Builtin(p) => {
                    if t.image.width != TILE_SIZE || t.image.height != TILE_SIZE {
                        return Err(Error::Image(format!(
                            "tile is {}x{}, expected {TILE_SIZE}x{TILE_SIZE}",
                            t.image.width, t.image.height
                        )));
                    }
                    p.apply(&normalized_pixels(t)).into_iter().map(f64::tanh).collect()
                }
                Embedder::External { vectors, .. } => vectors
                    .get(&(specimen_id.to_string(), i))
                    .cloned()
                    .ok_or_else(|| Error::MissingEmbedding {
                        specimen: specimen_id.to_string(),
                        tile: i,
                    })?,
            };
            out.row_mut(i).copy_from_slice(&v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qc::image::RgbImage;

    #[test]
    fn projection_rows_have_unit_norm() {
        let p = Projection::new(1000, 64, 50, 4).unwrap();
        for row in &p.rows {
            let n: f64 = row.iter().map(|(_, w)| w * w).sum();
            assert!((n - 1.0).abs() < 1e-12);
            assert_eq!(row.len(), 50);
        }
        assert!(Projection::new(10, 4, 11, 0).is_err());
    }

    #[test]
    fn flat_tile_embeds_to_zero() {
        let e = Embedder::builtin_with(32, 1);
        let m = e.embed("s", &[Tile::new(RgbImage::filled(128, 128, [0, 0, 0]))]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_is_pure() {
        let mut img = RgbImage::filled(128, 128, [200, 150, 190]);
        img.set(5, 9, [10, 20, 30]);
        let t = Tile::new(img);
        let a = Embedder::builtin_with(32, 7).embed("x", &[t.clone(), t.clone()]).unwrap();
        assert_eq!(a.row(0), a.row(1));
        assert_eq!(a, Embedder::builtin_with(32, 7).embed("y", &[t.clone(), t]).unwrap());
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn external_lookup() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let e = Embedder::external([("a".to_string(), m)]).unwrap();
        let tile = Tile::new(RgbImage::filled(128, 128, [0, 0, 0]));
        let out = e.embed("a", &[tile.clone(), tile.clone()]).unwrap();
        assert_eq!(out.row(1), &[4.0, 5.0, 6.0]);
        assert!(matches!(
            e.embed("a", &[tile.clone(), tile.clone(), tile]),
            Err(Error::MissingEmbedding { tile: 2, .. })
        ));
    }
}
