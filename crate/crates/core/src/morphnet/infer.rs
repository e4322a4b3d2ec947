use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::{MorphSequence, Provenance};
use crate::morphnet::{build_edit_table, Forward, MorphModel};
use crate::tensorcore::{Tape, Tensor, Var};
use crate::textcore::{jaccard, Sentence, BOS, EOS, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphOptions {
    /// 1 decodes greedily.
    pub beam: usize,
    pub max_intermediates: usize,
    /// Stop once an accepted sentence is at least this similar to the target.
    pub stop_jaccard: f64,
}

impl Default for MorphOptions {
    fn default() -> Self {
        MorphOptions { beam: 1, max_intermediates: 10, stop_jaccard: 0.8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphStop {
    NoImprovement,
    CloseEnough,
    StepLimit,
    EmptyOutput,
}

/// Attention weights behind one accepted intermediate sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDump {
    pub step: usize,
    pub beta: BTreeMap<String, f64>,
    pub gamma: BTreeMap<String, f64>,
    /// One row per decoded token (EOS included), over the current sentence.
    pub alpha: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct MorphOutput {
    pub sequence: MorphSequence,
    pub dumps: Vec<StepDump>,
    pub stop: MorphStop,
}

struct Hypothesis {
    tokens: Vec<u32>,
    hidden: Var,
    score: f64,
    alpha: Vec<Vec<f64>>,
    done: bool,
}

fn best_token(log_probs: &[f64]) -> u32 {
    let mut best = (f64::NEG_INFINITY, EOS);
    for (i, &lp) in log_probs.iter().enumerate() {
        let id = i as u32;
        if id == BOS || id == PAD {
            continue;
        }
        if lp > best.0 {
            best = (lp, id);
        }
    }
    best.1
}

fn decode(f: &mut Forward, enc: &crate::morphnet::Encoded, z: Var, max_len: usize, beam: usize) -> Result<Hypothesis> {
    let mut alive = vec![Hypothesis { tokens: Vec::new(), hidden: enc.last, score: 0.0, alpha: Vec::new(), done: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..=max_len {
        let mut next: Vec<Hypothesis> = Vec::new();
        for hyp in alive {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let out = f.decode_step(hyp.hidden, prev, z, enc)?;
            let lp = f.tape.value(out.log_probs).to_vec();
            let mut alpha = hyp.alpha.clone();
            alpha.push(f.tape.value(out.alpha).to_vec());
            let candidates: Vec<u32> = if beam == 1 {
                vec![best_token(&lp)]
            } else {
                let mut ids: Vec<u32> = (0..lp.len() as u32).filter(|&i| i != BOS && i != PAD).collect();
                ids.sort_by(|&a, &b| lp[b as usize].total_cmp(&lp[a as usize]).then(a.cmp(&b)));
                ids.truncate(beam);
                ids
            };
            for id in candidates {
                let mut tokens = hyp.tokens.clone();
                let done = id == EOS || tokens.len() >= max_len;
                if id != EOS {
                    tokens.push(id);
                }
                next.push(Hypothesis {
                    tokens,
                    hidden: out.hidden,
                    score: hyp.score + lp[id as usize],
                    alpha: alpha.clone(),
                    done,
                });
            }
        }
        next.sort_by(|a, b| b.score.total_cmp(&a.score));
        next.truncate(beam);
        let (done, open): (Vec<_>, Vec<_>) = next.into_iter().partition(|h| h.done);
        finished.extend(done);
        alive = open;
        if alive.is_empty() || finished.len() >= beam {
            break;
        }
    }
    finished.extend(alive);
    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(finished.into_iter().next().expect("beam keeps at least one hypothesis"))
}

fn weight_map(words: &[(String, u32)], w: Option<Var>, tape: &Tape) -> BTreeMap<String, f64> {
    match w {
        Some(w) => words.iter().map(|(s, _)| s.clone()).zip(tape.value(w).iter().copied()).collect(),
        None => BTreeMap::new(),
    }
}

/// Iteratively edits `source` toward `target`. Each step decodes a new
/// sentence from the current one; a step that does not raise the Jaccard
/// similarity to the target is discarded and ends the loop, as does an
/// empty decode, reaching `stop_jaccard`, or `max_intermediates` accepted
/// sentences. The target is always appended.
pub fn morph(model: &MorphModel, source: &Sentence, target: &Sentence, opts: &MorphOptions) -> Result<MorphOutput> {
    if source.same_set(target) {
        return Err(Error::InvalidParam("source and target have the same token set".into()));
    }
    if opts.beam == 0 {
        return Err(Error::InvalidParam("beam width must be positive".into()));
    }
    let mut z_value = vec![0.0; model.config.edit_dim];
    let mut current = source.clone();
    let mut path = vec![source.clone()];
    let mut dumps = Vec::new();
    let stop = loop {
        if path.len() > opts.max_intermediates {
            break MorphStop::StepLimit;
        }
        let mut tape = Tape::new(&model.params);
        let mut f = Forward::new(&mut tape, model);
        let enc = f.encode(&model.vocab.encode(&current))?;
        let table = build_edit_table(&current, target, &model.vocab);
        let diff = f.diff_vector(&table, enc.last)?;
        let z_prev = f.tape.constant(Tensor::vector(z_value.clone()))?;
        let z = f.edit_vector_step(enc.last, diff.d, z_prev)?;
        let max_len = 2 * current.len() + 5;
        let best = decode(&mut f, &enc, z, max_len, opts.beam)?;
        if best.tokens.is_empty() {
            break MorphStop::EmptyOutput;
        }
        let words = best.tokens.iter().map(|&id| model.vocab.token(id).to_owned()).collect();
        let next = Sentence::new(words)?;
        let sim = jaccard(&next, target);
        if sim <= jaccard(&current, target) {
            break MorphStop::NoImprovement;
        }
        z_value = f.tape.value(z).to_vec();
        if next.same_set(target) {
            // identical to the target up to order and repetition: the target closes the path
            break MorphStop::CloseEnough;
        }
        dumps.push(StepDump {
            step: path.len(),
            beta: weight_map(&table.delete, diff.beta, f.tape),
            gamma: weight_map(&table.insert, diff.gamma, f.tape),
            alpha: best.alpha,
        });
        path.push(next.clone());
        current = next;
        if sim >= opts.stop_jaccard {
            break MorphStop::CloseEnough;
        }
    };
    path.push(target.clone());
    Ok(MorphOutput { sequence: MorphSequence::new(path, Provenance::Generated)?, dumps, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphnet::ModelConfig;
    use crate::textcore::build_vocab;

    fn s(t: &str) -> Sentence {
        Sentence::from_tokenized(t).unwrap()
    }

    fn vocab() -> crate::textcore::Vocabulary {
        let corpus = [s("the soup was cold and bland"), s("the tea was very warm and sweet")];
        build_vocab(&corpus, 100).unwrap()
    }

    fn model() -> MorphModel {
        let c = ModelConfig { emb_dim: 6, hidden_dim: 8, edit_dim: 4, attn_dim: 6, seed: 9, ..ModelConfig::desk() };
        MorphModel::new(c, vocab()).unwrap()
    }

    /// A model whose decoder deterministically emits `words` then EOS: one-hot
    /// embeddings and an output layer that reads only the previous token.
    fn scripted(words: &[&str]) -> MorphModel {
        let vocab = vocab();
        let v = vocab.len();
        let c = ModelConfig { emb_dim: v, hidden_dim: 4, edit_dim: 3, attn_dim: 4, seed: 9, ..ModelConfig::desk() };
        let mut m = MorphModel::new(c, vocab).unwrap();
        let emb = m.params.get_mut(m.layers.emb_encoder).data_mut();
        emb.iter_mut().enumerate().for_each(|(k, x)| *x = if k / v == k % v { 1.0 } else { 0.0 });
        let width = v + 2 * c.hidden_dim;
        let mut next = vec![BOS];
        next.extend(words.iter().map(|w| m.vocab.id(w)));
        next.push(EOS);
        let w = m.params.get_mut(m.layers.out_w).data_mut();
        w.fill(0.0);
        for pair in next.windows(2) {
            w[pair[1] as usize * width + pair[0] as usize] = 60.0;
        }
        m.params.get_mut(m.layers.out_b).fill(0.0);
        m
    }

    #[test]
    fn close_first_step_gives_three_sentences() {
        let m = scripted(&["the", "tea", "was", "warm"]);
        let out = morph(&m, &s("the soup was cold"), &s("the tea was very warm"), &MorphOptions::default()).unwrap();
        assert_eq!(out.stop, MorphStop::CloseEnough);
        assert_eq!(
            out.sequence.sentences(),
            [s("the soup was cold"), s("the tea was warm"), s("the tea was very warm")]
        );
        assert_eq!(out.dumps.len(), 1);
        assert_eq!(out.dumps[0].step, 1);
        assert_eq!(out.dumps[0].alpha.len(), 5);
        let beta: Vec<&str> = out.dumps[0].beta.keys().map(String::as_str).collect();
        assert_eq!(beta, ["cold", "soup"]);
    }

    #[test]
    fn non_improving_step_is_discarded() {
        let m = scripted(&["soup", "was", "cold"]);
        let out = morph(&m, &s("the soup was cold"), &s("the tea was warm"), &MorphOptions::default()).unwrap();
        assert_eq!(out.stop, MorphStop::NoImprovement);
        assert_eq!(out.sequence.sentences(), [s("the soup was cold"), s("the tea was warm")]);
        assert!(out.dumps.is_empty());
    }

    #[test]
    fn empty_decode_stops() {
        let m = scripted(&[]);
        let out = morph(&m, &s("the soup was cold"), &s("the tea was warm"), &MorphOptions::default()).unwrap();
        assert_eq!(out.stop, MorphStop::EmptyOutput);
        assert_eq!(out.sequence.sentences().len(), 2);
    }

    #[test]
    fn rejects_identical_endpoints() {
        let m = model();
        assert!(morph(&m, &s("a b"), &s("b a"), &MorphOptions::default()).is_err());
        let opts = MorphOptions { beam: 0, ..Default::default() };
        assert!(morph(&m, &s("a b"), &s("c"), &opts).is_err());
    }

    #[test]
    fn untrained_model_respects_the_contract() {
        let m = model();
        for opts in [MorphOptions::default(), MorphOptions { beam: 3, ..Default::default() }] {
            let out = morph(&m, &s("the soup was cold and bland"), &s("the tea was warm and sweet"), &opts).unwrap();
            let seq = out.sequence.sentences();
            assert!(seq.len() - 2 <= 10);
            let sims: Vec<f64> = seq[..seq.len() - 1].iter().map(|x| jaccard(x, seq.last().unwrap())).collect();
            assert!(sims.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(out.dumps.len(), seq.len() - 2);
            for d in &out.dumps {
                for row in &d.alpha {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn step_limit_caps_intermediates() {
        let m = scripted(&["the", "tea", "was", "warm"]);
        let opts = MorphOptions { max_intermediates: 0, ..Default::default() };
        let out = morph(&m, &s("the soup was cold"), &s("the tea was very warm"), &opts).unwrap();
        assert_eq!(out.stop, MorphStop::StepLimit);
        assert_eq!(out.sequence.sentences().len(), 2);
    }
}
