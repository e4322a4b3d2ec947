//! Morphing-sequence mining, path validation and two non-neural baselines.
//!
//! A mined path is a random walk over the corpus where every hop keeps
//! Jaccard similarity above `eps` with the previous sentence and strictly
//! lowers similarity to the walk's first sentence.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simindex::LshIndex;
use crate::textcore::{jaccard, Sentence, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Mined,
    Generated,
    Baseline,
}

/// `[X_start, X_1, …, X_end]`; at least two sentences and no two adjacent
/// sentences with equal token sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MorphSequence {
    sentences: Vec<Sentence>,
    provenance: Provenance,
}

impl MorphSequence {
    pub fn new(sentences: Vec<Sentence>, provenance: Provenance) -> Result<Self> {
        if sentences.len() < 2 {
            return Err(Error::InvalidParam(format!(
                "a morphing sequence needs at least 2 sentences, got {}",
                sentences.len()
            )));
        }
        if let Some(i) = sentences.windows(2).position(|w| w[0].same_set(&w[1])) {
            return Err(Error::InvalidParam(format!(
                "sentences {i} and {} have identical token sets",
                i + 1
            )));
        }
        Ok(MorphSequence { sentences, provenance })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn source(&self) -> &Sentence {
        &self.sentences[0]
    }

    pub fn target(&self) -> &Sentence {
        self.sentences.last().expect("non-empty")
    }

    /// Number of hops, i.e. the walk length `i` of the mining loop.
    pub fn steps(&self) -> usize {
        self.sentences.len() - 1
    }

    /// Sentences strictly between source and target.
    pub fn intermediates(&self) -> &[Sentence] {
        &self.sentences[1..self.sentences.len() - 1]
    }

    fn key(&self) -> Vec<&[String]> {
        self.sentences.iter().map(Sentence::tokens).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    id: u64,
    sentences: Vec<Sentence>,
    provenance: Provenance,
}

/// JSON Lines, one `{"id", "sentences", "provenance"}` object per line;
/// ids are positions in `seqs`.
pub fn write_sequences<W: Write>(mut w: W, seqs: &[MorphSequence]) -> Result<()> {
    for (id, seq) in seqs.iter().enumerate() {
        let rec = SequenceRecord {
            id: id as u64,
            sentences: seq.sentences.clone(),
            provenance: seq.provenance,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sequences<R: BufRead>(r: R) -> Result<Vec<MorphSequence>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("sequence file", format!("line {}: {e}", n + 1)))?;
        out.push(MorphSequence::new(rec.sentences, rec.provenance)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MiningParams {
    pub eps: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub repeats: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams { eps: 0.5, t_min: 4, t_max: 8, repeats: 10, count: 10_000_000, seed: 1 }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParam(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.t_min < 1 || self.t_min > self.t_max {
            return Err(Error::InvalidParam(format!(
                "need 1 <= t_min <= t_max, got {} and {}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MiningStats {
    pub sources: usize,
    pub walks: usize,
    pub accepted_walks: usize,
    pub sequences: usize,
    pub mean_steps: f64,
    pub mean_sentence_len: f64,
    pub toward_target_fraction: f64,
}

const SOURCE_CHUNK: usize = 256;

fn walk_seed(seed: u64, source: u64) -> u64 {
    let mut z = seed ^ source.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Extracts morphing sequences from `corpus` by seeded random walks.
///
/// Sources are visited in a seeded random order. Each source gets
/// `repeats` walks driven by its own rng, so the output does not depend on
/// how many workers run the walks. Walks with a step count in
/// `[t_min, t_max]` are kept; repeated paths are dropped; at most `count`
/// sequences are returned.
pub fn mine(
    corpus: &[Sentence],
    index: &LshIndex,
    params: &MiningParams,
) -> Result<(Vec<MorphSequence>, MiningStats)> {
    params.validate()?;
    if index.len() != corpus.len() {
        return Err(Error::IndexMismatch(format!(
            "index holds {} sentences, corpus has {}",
            index.len(),
            corpus.len()
        )));
    }
    for (id, s) in index.iter() {
        if corpus.get(id as usize) != Some(s) {
            return Err(Error::IndexMismatch(format!("sentence {id} differs from the corpus")));
        }
    }

    let mut order: Vec<u64> = (0..corpus.len() as u64).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));

    let neighbours = |id: u64| -> Vec<u64> {
        index
            .query(&corpus[id as usize], params.eps)
            .into_iter()
            .filter(|&(n, _)| n != id)
            .map(|(n, _)| n)
            .collect()
    };

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut stats = MiningStats::default();
    'chunks: for chunk in order.chunks(SOURCE_CHUNK) {
        let found: Vec<(usize, Vec<Vec<u64>>)> = chunk
            .par_iter()
            .map(|&src| {
                let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(params.seed, src));
                let mut kept = Vec::new();
                for _ in 0..params.repeats {
                    let path = random_walk(corpus, src, params, &neighbours, &mut rng);
                    let steps = path.len() - 1;
                    if (params.t_min..=params.t_max).contains(&steps) {
                        kept.push(path);
                    }
                }
                (params.repeats, kept)
            })
            .collect();
        for (walks, paths) in found {
            stats.sources += 1;
            stats.walks += walks;
            stats.accepted_walks += paths.len();
            for path in paths {
                let sentences: Vec<Sentence> =
                    path.iter().map(|&id| corpus[id as usize].clone()).collect();
                let seq = MorphSequence::new(sentences, Provenance::Mined)?;
                if seen.insert(seq.key().into_iter().map(<[String]>::to_vec).collect::<Vec<_>>())
                {
                    out.push(seq);
                    if out.len() >= params.count {
                        break 'chunks;
                    }
                }
            }
        }
    }

    stats.sequences = out.len();
    if !out.is_empty() {
        let n = out.len() as f64;
        stats.mean_steps = out.iter().map(|s| s.steps() as f64).sum::<f64>() / n;
        let (tok, sent) = out.iter().flat_map(|s| s.sentences()).fold((0usize, 0usize), |a, s| {
            (a.0 + s.len(), a.1 + 1)
        });
        stats.mean_sentence_len = tok as f64 / sent as f64;
        stats.toward_target_fraction =
            out.iter().filter(|s| validate(s, params.eps).toward_target).count() as f64 / n;
    }
    Ok((out, stats))
}

fn random_walk<R: Rng>(
    corpus: &[Sentence],
    source: u64,
    params: &MiningParams,
    neighbours: &impl Fn(u64) -> Vec<u64>,
    rng: &mut R,
) -> Vec<u64> {
    let start = &corpus[source as usize];
    let mut path = vec![source];
    let mut prev = source;
    let mut prev_sim = 1.0;
    while path.len() - 1 < params.t_max {
        let moves: Vec<(u64, f64)> = neighbours(prev)
            .into_iter()
            .map(|id| (id, jaccard(&corpus[id as usize], start)))
            .filter(|&(_, sim)| sim < prev_sim)
            .collect();
        let Some(&(next, sim)) = moves.choose(rng) else { break };
        path.push(next);
        prev = next;
        prev_sim = sim;
    }
    path
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub smooth: bool,
    pub away_from_source: bool,
    pub toward_target: bool,
}

impl ValidationReport {
    pub fn all(&self) -> bool {
        self.smooth && self.away_from_source && self.toward_target
    }
}

/// Checks adjacency similarity `> eps`, strictly falling similarity to the
/// source and strictly rising similarity to the target.
pub fn validate(seq: &MorphSequence, eps: f64) -> ValidationReport {
    let s = seq.sentences();
    let (start, end) = (seq.source(), seq.target());
    let to_start: Vec<f64> = s.iter().map(|x| jaccard(x, start)).collect();
    let to_end: Vec<f64> = s.iter().map(|x| jaccard(x, end)).collect();
    ValidationReport {
        smooth: s.windows(2).all(|w| jaccard(&w[0], &w[1]) > eps),
        away_from_source: to_start.windows(2).all(|w| w[1] < w[0]),
        toward_target: to_end.windows(2).all(|w| w[1] > w[0]),
    }
}

/// Greedy retrieval baseline: repeatedly hop to the indexed neighbour most
/// similar to the target, as long as that strictly improves on the current
/// sentence and the current sentence is not yet within `eps` of the target.
pub fn retrieval_morph(
    source: &Sentence,
    target: &Sentence,
    index: &LshIndex,
    eps: f64,
) -> Result<MorphSequence> {
    if source.same_set(target) {
        return Err(Error::InvalidParam("source and target have identical token sets".into()));
    }
    let mut path = vec![source.clone()];
    let mut current = source.clone();
    let mut current_sim = jaccard(&current, target);
    while current_sim <= eps && !index.is_empty() {
        let best = index
            .query(&current, eps)
            .into_iter()
            .filter_map(|(id, _)| {
                let cand = index.get(id)?;
                Some((id, jaccard(cand, target)))
            })
            .filter(|&(_, sim)| sim > current_sim)
            // highest similarity, smallest id on ties
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((id, sim)) = best else { break };
        current = index.get(id).expect("queried id").clone();
        current_sim = sim;
        path.push(current.clone());
    }
    path.push(target.clone());
    MorphSequence::new(path, Provenance::Baseline)
}

/// Word vectors keyed by a vocabulary.
#[derive(Clone, Copy)]
pub struct Embeddings<'a> {
    pub vocab: &'a Vocabulary,
    /// Row-major `[vocab.len(), dim]`.
    pub table: &'a [f64],
    pub dim: usize,
}

impl Embeddings<'_> {
    /// Mean of the token embeddings; out-of-vocabulary tokens use the UNK row.
    pub fn sentence_vector(&self, s: &Sentence) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for id in self.vocab.encode(s) {
            let row = &self.table[id as usize * self.dim..(id as usize + 1) * self.dim];
            v.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let n = s.len() as f64;
        v.iter_mut().for_each(|a| *a /= n);
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `(1 - t/n)·source + (t/n)·target`.
pub fn interpolate(source: &[f64], target: &[f64], t: usize, n: usize) -> Vec<f64> {
    let w = t as f64 / n as f64;
    source.iter().zip(target).map(|(s, e)| (1.0 - w) * s + w * e).collect()
}

/// Nearest-neighbour retrieval over mean-embedding sentence vectors.
pub struct InterpolationBaseline<'a> {
    embeddings: Embeddings<'a>,
    corpus: Vec<(u64, &'a Sentence, Vec<f64>)>,
}

impl<'a> InterpolationBaseline<'a> {
    pub fn new(embeddings: Embeddings<'a>, index: &'a LshIndex) -> Self {
        let corpus =
            index.iter().map(|(id, s)| (id, s, embeddings.sentence_vector(s))).collect();
        InterpolationBaseline { embeddings, corpus }
    }

    /// Corpus sentence with the highest cosine similarity to `v`
    /// (smallest id on ties).
    pub fn nearest(&self, v: &[f64]) -> Option<(u64, &'a Sentence)> {
        let mut best: Option<(u64, &Sentence, f64)> = None;
        for (id, s, vec) in &self.corpus {
            let c = cosine(v, vec);
            if best.is_none_or(|(_, _, b)| c > b) {
                best = Some((*id, s, c));
            }
        }
        best.map(|(id, s, _)| (id, s))
    }

    pub fn morph(&self, source: &Sentence, target: &Sentence, n_steps: usize) -> Result<MorphSequence> {
        if source.same_set(target) {
            return Err(Error::InvalidParam("source and target have identical token sets".into()));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParam("interpolation needs at least one step".into()));
        }
        let (vs, vt) =
            (self.embeddings.sentence_vector(source), self.embeddings.sentence_vector(target));
        let mut path = vec![source.clone()];
        for t in 1..n_steps {
            if let Some((_, s)) = self.nearest(&interpolate(&vs, &vt, t, n_steps)) {
                if !path.last().expect("non-empty").same_set(s) {
                    path.push(s.clone());
                }
            }
        }
        if path.len() > 1 && path.last().expect("non-empty").same_set(target) {
            path.pop();
        }
        path.push(target.clone());
        MorphSequence::new(path, Provenance::Baseline)
    }
}

pub fn interpolation_morph(
    source: &Sentence,
    target: &Sentence,
    embeddings: Embeddings<'_>,
    index: &LshIndex,
    n_steps: usize,
) -> Result<MorphSequence> {
    InterpolationBaseline::new(embeddings, index).morph(source, target, n_steps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<MorphSequence>,
    pub valid: Vec<MorphSequence>,
    pub test: Vec<MorphSequence>,
}

/// Seeded random disjoint split into `(train, valid, test)` sizes.
pub fn split(
    sequences: &[MorphSequence],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<Split> {
    let need = sizes.0 + sizes.1 + sizes.2;
    if need > sequences.len() {
        return Err(Error::InsufficientData(format!(
            "split needs {need} sequences, only {} available",
            sequences.len()
        )));
    }
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| -> Vec<MorphSequence> {
        order[range].iter().map(|&i| sequences[i].clone()).collect()
    };
    Ok(Split {
        train: take(0..sizes.0),
        valid: take(sizes.0..sizes.0 + sizes.1),
        test: take(sizes.0 + sizes.1..need),
    })
}
