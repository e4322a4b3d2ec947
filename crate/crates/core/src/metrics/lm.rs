use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphnet::io::{sidecar_path, vocab_hash};
use crate::morphnet::layers::{Gru, Init};
use crate::tensorcore::{read_params, reduce_grads, write_params, FloatWidth, AdamConfig, AdamState, ParamId, ParamStore, Tape, Tensor, Var};
use crate::textcore::{Sentence, Vocabulary, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { emb_dim: 300, hidden_dim: 512, init_scale: 0.08, seed: 1 }
    }
}

/// Two stacked GRUs over word embeddings with a softmax output layer.
#[derive(Clone, Debug)]
pub struct FluencyLm {
    pub config: LmConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    embedding: ParamId,
    layers: [Gru; 2],
    out_w: ParamId,
    out_b: ParamId,
}

impl FluencyLm {
    pub fn new(config: LmConfig, vocab: Vocabulary) -> Result<Self> {
        if config.emb_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::InvalidParam("language model dimensions must be positive".into()));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init { store: &mut params, rng: &mut rng, scale: config.init_scale };
        let (v, e, h) = (vocab.len(), config.emb_dim, config.hidden_dim);
        let embedding = init.param("lm.embedding", &[v, e])?;
        let layers = [Gru::register(&mut init, "lm.gru1", e, h, true)?, Gru::register(&mut init, "lm.gru2", h, h, true)?];
        let out_w = init.param("lm.output.w", &[v, h])?;
        let out_b = init.param("lm.output.b", &[v])?;
        Ok(FluencyLm { config, vocab, params, embedding, layers, out_w, out_b })
    }

    /// A model whose every next-token distribution is uniform.
    pub fn uniform(config: LmConfig, vocab: Vocabulary) -> Result<Self> {
        let mut lm = Self::new(config, vocab)?;
        lm.params.get_mut(lm.out_w).fill(0.0);
        lm.params.get_mut(lm.out_b).fill(0.0);
        Ok(lm)
    }

    fn nll_on(&self, tape: &mut Tape, ids: &[u32]) -> Result<(Var, usize)> {
        let h = self.config.hidden_dim;
        let mut state = [tape.constant(Tensor::zeros(&[h]))?, tape.constant(Tensor::zeros(&[h]))?];
        let (w, b) = (tape.param(self.out_w), tape.param(self.out_b));
        let mut terms = Vec::with_capacity(ids.len() + 1);
        let mut prev = BOS;
        for &gold in ids.iter().chain(std::iter::once(&EOS)) {
            let mut x = tape.gather(self.embedding, prev as usize)?;
            for (layer, s) in self.layers.iter().zip(state.iter_mut()) {
                *s = layer.step(tape, x, *s)?;
                x = *s;
            }
            let logits = tape.matmul(w, x)?;
            let logits = tape.add(logits, b)?;
            let lp = tape.log_softmax(logits)?;
            terms.push(tape.pick(lp, gold as usize)?);
            prev = gold;
        }
        let total = tape.add_n(&terms)?;
        Ok((tape.scale(total, -1.0)?, terms.len()))
    }

    /// Summed NLL of the sentence followed by EOS, and the number of
    /// predicted tokens.
    pub fn sentence_nll(&self, s: &Sentence) -> Result<(f64, usize)> {
        let mut tape = Tape::new(&self.params);
        let (loss, n) = self.nll_on(&mut tape, &self.vocab.encode(s))?;
        Ok((tape.scalar(loss), n))
    }

    /// Per-token NLL over a corpus.
    pub fn corpus_nll(&self, corpus: &[Sentence]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let parts = corpus.par_iter().map(|s| self.sentence_nll(s)).collect::<Result<Vec<_>>>()?;
        let (l, n) = parts.iter().fold((0.0, 0), |(l, n), &(a, b)| (l + a, n + b));
        Ok(l / n as f64)
    }

    pub fn perplexity(&self, corpus: &[Sentence]) -> Result<f64> {
        Ok(self.corpus_nll(corpus)?.exp())
    }
}

#[derive(Serialize, Deserialize)]
struct LmSidecar {
    config: LmConfig,
    vocab_hash: String,
    vocab: Vec<(String, u64)>,
}

pub fn write_lm<W: Write, S: Write>(lm: &FluencyLm, params: W, mut meta: S, width: FloatWidth) -> Result<()> {
    write_params(params, &lm.params, width)?;
    let side = LmSidecar {
        config: lm.config,
        vocab_hash: vocab_hash(&lm.vocab),
        vocab: lm.vocab.ranked().map(|(t, c)| (t.to_owned(), c)).collect(),
    };
    serde_json::to_writer_pretty(&mut meta, &side)?;
    meta.write_all(b"\n")?;
    Ok(())
}

pub fn read_lm<R: Read, S: Read>(params: R, meta: S) -> Result<FluencyLm> {
    let side: LmSidecar = serde_json::from_reader(meta)?;
    let vocab = Vocabulary::from_ranked(side.vocab)?;
    if vocab_hash(&vocab) != side.vocab_hash {
        return Err(Error::format("language model sidecar", "vocabulary hash mismatch"));
    }
    let params = read_params(params)?;
    let mut lm = FluencyLm::new(side.config, vocab)?;
    if params.len() != lm.params.len() {
        return Err(Error::format("language model", "parameter count mismatch"));
    }
    for id in lm.params.ids().collect::<Vec<_>>() {
        let name = lm.params.name(id).to_owned();
        let loaded = params
            .id(&name)
            .map(|i| params.get(i))
            .ok_or_else(|| Error::format("language model", format!("missing parameter {name}")))?;
        if loaded.shape() != lm.params.get(id).shape() {
            return Err(Error::format("language model", format!("{name}: shape mismatch")));
        }
        *lm.params.get_mut(id) = loaded.clone();
    }
    Ok(lm)
}

/// Writes the parameters to `path` and the configuration plus vocabulary to
/// `<path>.json`.
pub fn save_lm(lm: &FluencyLm, path: &Path, width: FloatWidth) -> Result<()> {
    let mut params = BufWriter::new(File::create(path)?);
    let mut meta = BufWriter::new(File::create(sidecar_path(path))?);
    write_lm(lm, &mut params, &mut meta, width)?;
    params.flush()?;
    meta.flush()?;
    Ok(())
}

pub fn load_lm(path: &Path) -> Result<FluencyLm> {
    read_lm(BufReader::new(File::open(path)?), BufReader::new(File::open(sidecar_path(path))?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig { lr: 1e-3, batch_size: 128, max_epochs: 20, patience: 2, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmHistory {
    /// Training perplexity per epoch, measured on the running batches.
    pub train_ppl: Vec<f64>,
    /// Held-out perplexity, index 0 before training.
    pub heldout_ppl: Vec<f64>,
    pub best_epoch: usize,
}

/// Next-token NLL training with Adam, keeping the parameters with the best
/// held-out perplexity.
pub fn train_lm(
    corpus: &[Sentence],
    heldout: &[Sentence],
    vocab: Vocabulary,
    config: LmConfig,
    cfg: &LmTrainConfig,
) -> Result<(FluencyLm, LmHistory)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParam("batch size must be positive".into()));
    }
    let heldout = if heldout.is_empty() { corpus } else { heldout };
    let mut lm = FluencyLm::new(config, vocab)?;
    let mut adam = AdamState::new(&lm.params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = LmHistory { train_ppl: Vec::new(), heldout_ppl: vec![lm.perplexity(heldout)?], best_epoch: 0 };
    let mut best = lm.params.clone();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut tokens) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let lm_ref = &lm;
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new(&lm_ref.params);
                    let (l, n) = lm_ref.nll_on(&mut tape, &lm_ref.vocab.encode(&corpus[i]))?;
                    Ok((tape.backward(l)?, tape.scalar(l), n))
                })
                .collect::<Result<Vec<_>>>()?;
            let grads: Vec<_> = parts.iter().map(|p| p.0.clone()).collect();
            let mut total = reduce_grads(&lm.params, &grads);
            total.scale(1.0 / batch.len() as f64);
            parts.iter().for_each(|p| {
                loss += p.1;
                tokens += p.2;
            });
            adam.step(&mut lm.params, &mut total)?;
        }
        let train_ppl = (loss / tokens as f64).exp();
        let ppl = lm.perplexity(heldout)?;
        info!("lm epoch {epoch}: train ppl {train_ppl:.3}, held-out ppl {ppl:.3}");
        history.train_ppl.push(train_ppl);
        history.heldout_ppl.push(ppl);
        if ppl < history.heldout_ppl[history.best_epoch] {
            history.best_epoch = epoch;
            best = lm.params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    lm.params = best;
    Ok((lm, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::grad_check;
    use crate::textcore::build_vocab;

    fn corpus() -> Vec<Sentence> {
        ["the soup was cold", "the soup was warm", "the tea was warm", "a tea was warm", "the tea is warm"]
            .iter()
            .map(|t| Sentence::from_tokenized(t).unwrap())
            .collect()
    }

    fn small() -> LmConfig {
        LmConfig { emb_dim: 6, hidden_dim: 8, seed: 4, ..LmConfig::default() }
    }

    #[test]
    fn save_and_load() {
        let c = corpus();
        let lm = FluencyLm::new(small(), build_vocab(&c, 100).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.bin");
        save_lm(&lm, &path, FloatWidth::F64).unwrap();
        let back = load_lm(&path).unwrap();
        assert_eq!(back.params, lm.params);
        assert_eq!(back.sentence_nll(&c[1]).unwrap(), lm.sentence_nll(&c[1]).unwrap());
    }

    #[test]
    fn uniform_model_scores_log_v() {
        let c = corpus();
        let lm = FluencyLm::uniform(small(), build_vocab(&c, 100).unwrap()).unwrap();
        let (nll, n) = lm.sentence_nll(&c[0]).unwrap();
        assert_eq!(n, 5);
        assert!((nll / n as f64 - (lm.vocab.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = corpus();
        let lm = FluencyLm::new(small(), build_vocab(&c, 100).unwrap()).unwrap();
        let ids = lm.vocab.encode(&c[2]);
        let mut params = lm.params.clone();
        let report = grad_check(&mut params, |t| Ok(lm.nll_on(t, &ids)?.0), 1e-5, 30, 2).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn training_beats_uniform_and_is_seeded() {
        let c = corpus();
        let vocab = build_vocab(&c, 100).unwrap();
        let cfg = LmTrainConfig { lr: 0.02, batch_size: 2, max_epochs: 8, patience: 8, seed: 3 };
        let (lm, history) = train_lm(&c, &[], vocab.clone(), small(), &cfg).unwrap();
        assert!(lm.perplexity(&c).unwrap() < vocab.len() as f64);
        assert!(history.train_ppl[0] > *history.train_ppl.last().unwrap());
        let (again, h2) = train_lm(&c, &[], vocab, small(), &cfg).unwrap();
        assert_eq!(again.params, lm.params);
        assert_eq!(h2, history);
    }
}
