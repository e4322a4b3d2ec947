//! Model persistence: binary parameters plus a JSON sidecar holding the
//! configuration and the vocabulary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::morphnet::{ModelConfig, MorphModel};
use crate::tensorcore::{read_params, write_params, FloatWidth};
use crate::textcore::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: ModelConfig,
    pub seed: u64,
    pub float_bits: u32,
    pub vocab_hash: String,
    /// `(token, count)` in id order, specials included.
    pub vocab: Vec<(String, u64)>,
}

pub fn vocab_hash(vocab: &Vocabulary) -> String {
    let mut h = Sha256::new();
    for (token, count) in vocab.ranked() {
        h.update(token.as_bytes());
        h.update(*b"\t");
        h.update(count.to_string().as_bytes());
        h.update(*b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `<checkpoint>.json`
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn sidecar(model: &MorphModel, width: FloatWidth) -> Sidecar {
    Sidecar {
        config: model.config,
        seed: model.config.seed,
        float_bits: if width == FloatWidth::F32 { 32 } else { 64 },
        vocab_hash: vocab_hash(&model.vocab),
        vocab: model.vocab.ranked().map(|(t, c)| (t.to_owned(), c)).collect(),
    }
}

pub fn write_model<W: Write, S: Write>(model: &MorphModel, params: W, mut meta: S, width: FloatWidth) -> Result<()> {
    write_params(params, &model.params, width)?;
    serde_json::to_writer_pretty(&mut meta, &sidecar(model, width))?;
    meta.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read, S: Read>(params: R, meta: S) -> Result<MorphModel> {
    let side: Sidecar = serde_json::from_reader(meta)?;
    let vocab = Vocabulary::from_ranked(side.vocab)?;
    let hash = vocab_hash(&vocab);
    if hash != side.vocab_hash {
        return Err(Error::format("model sidecar", format!("vocabulary hash {hash} != recorded {}", side.vocab_hash)));
    }
    MorphModel::from_params(side.config, vocab, read_params(params)?)
}

pub fn save_model(model: &MorphModel, path: &Path, width: FloatWidth) -> Result<()> {
    let mut params = BufWriter::new(File::create(path)?);
    let mut meta = BufWriter::new(File::create(sidecar_path(path))?);
    write_model(model, &mut params, &mut meta, width)?;
    params.flush()?;
    meta.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MorphModel> {
    let params = BufReader::new(File::open(path)?);
    let meta = BufReader::new(File::open(sidecar_path(path))?);
    read_model(params, meta)
}
