//! MinHash signatures and LSH banding over sentence token sets.
//!
//! The index is a candidate generator only: every query result is verified
//! with exact Jaccard similarity before it is returned, so precision is exact
//! and recall is governed by the band shape.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::textcore::{jaccard, Sentence};

pub const DEFAULT_PERMUTATIONS: usize = 50;
pub const DEFAULT_BANDS: usize = 25;
pub const DEFAULT_ROWS: usize = 2;

const INDEX_MAGIC: &[u8; 8] = b"MKLSHIDX";
const INDEX_VERSION: u32 = 1;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

// FNV-1a gives a stable base hash independent of the std hasher's version.
fn token_base_hash(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinHashParams {
    pub num_perm: usize,
    pub seed: u64,
}

impl Default for MinHashParams {
    fn default() -> Self {
        MinHashParams { num_perm: DEFAULT_PERMUTATIONS, seed: 1 }
    }
}

impl MinHashParams {
    fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.num_perm as u64).map(move |p| splitmix64(self.seed ^ splitmix64(p)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinHashSignature {
    values: Vec<u64>,
    seed: u64,
}

impl MinHashSignature {
    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_perm(&self) -> usize {
        self.values.len()
    }
}

/// Computes the signature of the sentence's token set.
///
/// Permutation `p` is modelled by a keyed 64-bit mix of the token's base hash,
/// with keys derived from the seed by a counter.
pub fn signature(s: &Sentence, params: MinHashParams) -> MinHashSignature {
    let bases: Vec<u64> = s.token_set().iter().map(|t| token_base_hash(t)).collect();
    let values = params
        .keys()
        .map(|key| bases.iter().map(|&b| splitmix64(b ^ key)).min().unwrap_or(u64::MAX))
        .collect();
    MinHashSignature { values, seed: params.seed }
}

/// Fraction of matching components, an unbiased Jaccard estimate.
pub fn estimate_similarity(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.seed != b.seed || a.values.len() != b.values.len() {
        return Err(Error::ParamMismatch(format!(
            "(perms {}, seed {}) vs (perms {}, seed {})",
            a.values.len(),
            a.seed,
            b.values.len(),
            b.seed
        )));
    }
    let matches = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(matches as f64 / a.values.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LshParams {
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        LshParams {
            num_perm: DEFAULT_PERMUTATIONS,
            bands: DEFAULT_BANDS,
            rows: DEFAULT_ROWS,
            seed: 1,
        }
    }
}

impl LshParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_perm == 0 || self.bands * self.rows != self.num_perm {
            return Err(Error::InvalidParam(format!(
                "bands ({}) x rows ({}) must equal permutations ({})",
                self.bands, self.rows, self.num_perm
            )));
        }
        Ok(())
    }

    pub fn minhash(&self) -> MinHashParams {
        MinHashParams { num_perm: self.num_perm, seed: self.seed }
    }

    /// Probability that a pair with Jaccard `s` shares at least one bucket.
    pub fn collision_probability(&self, s: f64) -> f64 {
        1.0 - (1.0 - s.powi(self.rows as i32)).powi(self.bands as i32)
    }
}

/// MinHash LSH index with an id-keyed sentence store for exact verification.
#[derive(Debug)]
pub struct LshIndex {
    params: LshParams,
    buckets: Vec<HashMap<u64, Vec<u64>>>,
    store: BTreeMap<u64, (Sentence, MinHashSignature)>,
}

impl LshIndex {
    pub fn new(params: LshParams) -> Result<Self> {
        params.validate()?;
        Ok(LshIndex { params, buckets: vec![HashMap::new(); params.bands], store: BTreeMap::new() })
    }

    /// Indexes `corpus` with ids equal to line positions.
    pub fn build(corpus: &[Sentence], params: LshParams) -> Result<Self> {
        let mh = params.minhash();
        let sigs: Vec<MinHashSignature> = corpus.par_iter().map(|s| signature(s, mh)).collect();
        let mut index = Self::new(params)?;
        for (id, (s, sig)) in corpus.iter().zip(sigs).enumerate() {
            index.insert_signed(id as u64, s.clone(), sig)?;
        }
        Ok(index)
    }

    pub fn params(&self) -> LshParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Sentence> {
        self.store.get(&id).map(|(s, _)| s)
    }

    pub fn signature_of(&self, id: u64) -> Option<&MinHashSignature> {
        self.store.get(&id).map(|(_, sig)| sig)
    }

    /// Sentences in id order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &Sentence)> {
        self.store.iter().map(|(&id, (s, _))| (id, s))
    }

    fn band_keys<'a>(&self, sig: &'a MinHashSignature) -> impl Iterator<Item = u64> + 'a {
        let rows = self.params.rows;
        sig.values.chunks(rows).enumerate().map(|(band, chunk)| {
            chunk.iter().fold(splitmix64(band as u64), |h, &v| splitmix64(h ^ v))
        })
    }

    pub fn insert(&mut self, id: u64, s: Sentence) -> Result<()> {
        let sig = signature(&s, self.params.minhash());
        self.insert_signed(id, s, sig)
    }

    fn insert_signed(&mut self, id: u64, s: Sentence, sig: MinHashSignature) -> Result<()> {
        if self.store.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let keys: Vec<u64> = self.band_keys(&sig).collect();
        for (band, key) in keys.into_iter().enumerate() {
            self.buckets[band].entry(key).or_default().push(id);
        }
        self.store.insert(id, (s, sig));
        Ok(())
    }

    /// Ids sharing at least one band bucket with `s`, sorted and unique.
    pub fn candidates(&self, s: &Sentence) -> Vec<u64> {
        let sig = signature(s, self.params.minhash());
        let mut out: Vec<u64> = self
            .band_keys(&sig)
            .enumerate()
            .filter_map(|(band, key)| self.buckets[band].get(&key))
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// All indexed ids whose exact Jaccard with `s` is strictly above `eps`,
    /// in id order.
    pub fn query(&self, s: &Sentence, eps: f64) -> Vec<(u64, f64)> {
        self.candidates(s)
            .into_iter()
            .filter_map(|id| {
                let j = jaccard(s, &self.store[&id].0);
                (j > eps).then_some((id, j))
            })
            .collect()
    }

    /// Serializes the header and id-sorted signatures (little-endian).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.params;
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(p.num_perm as u32).to_le_bytes())?;
        w.write_all(&(p.bands as u32).to_le_bytes())?;
        w.write_all(&(p.rows as u32).to_le_bytes())?;
        w.write_all(&p.seed.to_le_bytes())?;
        w.write_all(&(self.store.len() as u64).to_le_bytes())?;
        for (&id, (_, sig)) in &self.store {
            w.write_all(&id.to_le_bytes())?;
            for v in &sig.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Rebuilds an index from a persisted file and the corpus it was built
    /// over. Every stored signature is checked against the corpus sentence
    /// with the same id.
    pub fn read_from<R: Read>(mut r: R, corpus: &[Sentence]) -> Result<Self> {
        let persisted = PersistedIndex::read(&mut r)?;
        if persisted.records.len() != corpus.len() {
            return Err(Error::IndexMismatch(format!(
                "index holds {} sentences, corpus has {}",
                persisted.records.len(),
                corpus.len()
            )));
        }
        let mut index = Self::new(persisted.params)?;
        for (id, values) in persisted.records {
            let s = corpus.get(id as usize).ok_or_else(|| {
                Error::IndexMismatch(format!("id {id} out of corpus range"))
            })?;
            let sig = signature(s, persisted.params.minhash());
            if sig.values != values {
                return Err(Error::IndexMismatch(format!("signature of id {id} differs")));
            }
            index.insert_signed(id, s.clone(), sig)?;
        }
        Ok(index)
    }
}

struct PersistedIndex {
    params: LshParams,
    records: Vec<(u64, Vec<u64>)>,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl PersistedIndex {
    fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::format("index", "bad magic"));
        }
        let version = read_u32(r)?;
        if version != INDEX_VERSION {
            return Err(Error::format("index", format!("unsupported version {version}")));
        }
        let num_perm = read_u32(r)? as usize;
        let bands = read_u32(r)? as usize;
        let rows = read_u32(r)? as usize;
        let seed = read_u64(r)?;
        let count = read_u64(r)?;
        let params = LshParams { num_perm, bands, rows, seed };
        params.validate()?;
        let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
        for _ in 0..count {
            let id = read_u64(r)?;
            let values = (0..num_perm).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
            records.push((id, values));
        }
        Ok(PersistedIndex { params, records })
    }
}
