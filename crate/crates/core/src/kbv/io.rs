//! Versioned binary model file. Header: `d, |E_kept|, 2|R|, seed, min_count`,
//! then the remaining hyperparameters, kept entity ids with their counts, and
//! the parameter blocks.

use std::io::{Read, Write};

use super::{EmbeddingVocab, KbvConfig, KbvModel};
use crate::binio;
use crate::error::{Error, Result};
use crate::kg::EntityId;

const MAGIC: &[u8; 4] = b"KBVM";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &KbvModel, w: &mut W) -> Result<()> {
    binio::write_magic(w, MAGIC, VERSION)?;
    binio::write_u64(w, model.dim as u64)?;
    binio::write_u64(w, model.vocab.len() as u64)?;
    binio::write_u64(w, 2 * model.num_relations as u64)?;
    binio::write_u64(w, model.config.seed)?;
    binio::write_u64(w, model.config.min_count as u64)?;
    binio::write_f64s(w, &[model.config.learning_rate])?;
    binio::write_u64(w, model.config.epochs as u64)?;
    binio::write_u64(w, model.config.negatives as u64)?;
    binio::write_u32(w, model.config.ignore_confidence as u32)?;
    let ids: Vec<u32> = model.vocab.entities().iter().map(|e| e.0).collect();
    binio::write_u32s(w, &ids)?;
    let counts: Vec<u32> = model.vocab.counts().iter().map(|&c| c as u32).collect();
    binio::write_u32s(w, &counts)?;
    for block in [
        &model.entity,
        &model.relation,
        &model.d_e,
        &model.d_r,
        &model.b_c,
        &model.b_p,
    ] {
        binio::write_f64s(w, block)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<KbvModel> {
    binio::read_magic(r, MAGIC, VERSION)?;
    let dim = binio::read_u64(r)? as usize;
    let n = binio::read_u64(r)? as usize;
    let rel_rows = binio::read_u64(r)? as usize;
    let seed = binio::read_u64(r)?;
    let min_count = binio::read_u64(r)? as usize;
    let lr = binio::read_f64s(r)?;
    let epochs = binio::read_u64(r)? as usize;
    let negatives = binio::read_u64(r)? as usize;
    let ignore_confidence = binio::read_u32(r)? != 0;
    let ids = binio::read_u32s(r)?;
    let counts = binio::read_u32s(r)?;
    if lr.len() != 1 || ids.len() != n || counts.len() != n || !rel_rows.is_multiple_of(2) {
        return Err(Error::Format("inconsistent validation model header".into()));
    }
    let vocab = EmbeddingVocab::from_parts(
        ids.into_iter().map(EntityId).collect(),
        counts.into_iter().map(|c| c as usize).collect(),
        min_count,
    );
    let mut read_block = |len: usize, name: &str| -> Result<Vec<f64>> {
        let v = binio::read_f64s(r)?;
        if v.len() != len {
            return Err(Error::Format(format!(
                "{name}: expected {len} values, found {}",
                v.len()
            )));
        }
        Ok(v)
    };
    let entity = read_block(n * dim, "entity embeddings")?;
    let relation = read_block(rel_rows * dim, "relation embeddings")?;
    let d_e = read_block(dim, "D_e")?;
    let d_r = read_block(dim, "D_r")?;
    let b_c = read_block(dim, "b_c")?;
    let b_p = read_block(n, "b_p")?;
    Ok(KbvModel {
        vocab,
        num_relations: rel_rows / 2,
        dim,
        entity,
        relation,
        d_e,
        d_r,
        b_c,
        b_p,
        config: KbvConfig {
            dim,
            learning_rate: lr[0],
            epochs,
            negatives,
            min_count,
            seed,
            ignore_confidence,
        },
    })
}
