//! Business embeddings fused with graph features.
//!
//! The embedding file is CSV with header `business_id,image:1000,text:256`
//! followed by one record per business: the string id, 1000 image values,
//! then 256 text values. Fused rows are `[image | text | graph features]`.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, N_FEATURES};
use crate::ingest::IdMap;
use crate::matrix::Matrix;
use crate::models::{fit_mlp, MlpModel, TrainConfig};

pub const IMAGE_DIM: usize = 1000;
pub const TEXT_DIM: usize = 256;
pub const EMBEDDING_DIM: usize = IMAGE_DIM + TEXT_DIM;
pub const FUSED_WIDTH: usize = EMBEDDING_DIM + N_FEATURES;

#[derive(Debug, Clone, PartialEq)]
pub struct BusinessEmbedding {
    pub image: Vec<f64>,
    pub text: Vec<f64>,
}

/// Embeddings keyed by the external business id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    entries: HashMap<String, BusinessEmbedding>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, business_id: &str) -> Option<&BusinessEmbedding> {
        self.entries.get(business_id)
    }

    pub fn insert(&mut self, business_id: impl Into<String>, e: BusinessEmbedding) -> Result<Option<BusinessEmbedding>> {
        if e.image.len() != IMAGE_DIM || e.text.len() != TEXT_DIM {
            return Err(Error::Shape {
                expected: EMBEDDING_DIM,
                got: e.image.len() + e.text.len(),
            });
        }
        Ok(self.entries.insert(business_id.into(), e))
    }
}

fn header_dim(field: Option<&str>, name: &str) -> Option<usize> {
    field?.strip_prefix(name)?.strip_prefix(':')?.parse().ok()
}

pub fn read_embeddings<R: Read>(reader: R) -> Result<EmbeddingTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let mut table = EmbeddingTable::default();
    let header = match records.next() {
        None => return Ok(table),
        Some(h) => h?,
    };
    let declared = (header_dim(header.get(1), "image"), header_dim(header.get(2), "text"));
    if header.get(0) != Some("business_id") || declared != (Some(IMAGE_DIM), Some(TEXT_DIM)) || header.len() != 3 {
        return Err(Error::Schema {
            line: 1,
            field: format!("embedding header must be `business_id,image:{IMAGE_DIM},text:{TEXT_DIM}`"),
        });
    }
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        let id = rec.get(0).unwrap_or_default();
        if rec.len() != 1 + EMBEDDING_DIM {
            return Err(Error::Schema {
                line,
                field: format!(
                    "record for business `{id}` has {} values, expected {EMBEDDING_DIM}",
                    rec.len().saturating_sub(1)
                ),
            });
        }
        let mut values = Vec::with_capacity(EMBEDDING_DIM);
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad embedding value `{field}` for business `{id}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation {
                    line,
                    message: format!("non-finite embedding value for business `{id}`"),
                });
            }
            values.push(v);
        }
        let text = values.split_off(IMAGE_DIM);
        if table.insert(id, BusinessEmbedding { image: values, text })?.is_some() {
            warn!("duplicate embedding for business `{id}` at line {line}; keeping the later record");
        }
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    read_embeddings(std::fs::File::open(path)?)
}

/// Concatenates embeddings with the (already standardized) graph features.
/// Returns the fused design matrix and the number of rows whose business had
/// no embedding and received zero vectors.
pub fn fuse(features: &FeatureMatrix, table: &EmbeddingTable, ids: &IdMap) -> Result<(Matrix, usize)> {
    let mut data = vec![0.0; features.len() * FUSED_WIDTH];
    let missing: usize = data
        .par_chunks_mut(FUSED_WIDTH)
        .zip(&features.rows)
        .map(|(out, row)| {
            out[EMBEDDING_DIM..].copy_from_slice(&row.features);
            let name = ids
                .business_name(row.business)
                .ok_or_else(|| Error::lookup("business", row.business.0))?;
            match table.get(name) {
                Some(e) => {
                    out[..IMAGE_DIM].copy_from_slice(&e.image);
                    out[IMAGE_DIM..EMBEDDING_DIM].copy_from_slice(&e.text);
                    Ok(0)
                }
                None => Ok(1),
            }
        })
        .sum::<Result<usize>>()?;
    if missing > 0 {
        warn!("{missing} of {} rows have no business embedding; using zero vectors", features.len());
    }
    Ok((Matrix::new(features.len(), FUSED_WIDTH, data)?, missing))
}

pub fn fit_fused_mlp(x: &Matrix, y: &[f64], cfg: &TrainConfig) -> Result<MlpModel> {
    x.expect_cols(FUSED_WIDTH)?;
    fit_mlp(x, y, cfg)
}
