//! Synthetic corpora for smoke tests and benchmarks.
//!
//! A corpus is a set of substitution chains. Each chain starts from
//! `sentence_len` distinct words and replaces one not-yet-touched position
//! per step with a word unused in the chain, so consecutive sentences have
//! Jaccard similarity `(n-1)/(n+1)` and similarity to the chain start falls
//! strictly along the chain.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::Sentence;

const WORDS: &[&str] = &[
    "the", "a", "my", "our", "this", "that", "soup", "tea", "pizza", "bread", "salad", "staff", "waiter", "room",
    "table", "menu", "price", "view", "music", "owner", "was", "is", "felt", "looked", "seemed", "stayed", "very",
    "quite", "really", "too", "so", "rather", "warm", "cold", "fresh", "bland", "sweet", "salty", "friendly", "rude",
    "quick", "slow", "cheap", "pricey", "clean", "dirty", "quiet", "loud", "and", "but", "yet", "also", "still",
    "again", "today", "tonight", "here", "there", "always", "never", "great", "awful", "nice", "fine", "odd", "good",
    "bad", "new", "old", "small", "large", "dark", "bright", "busy", "empty", "cosy", "cramped", "lovely", "plain",
    "spicy", "crisp", "soft", "hard", "rich", "light", "heavy", "smooth", "strong", "weak", "dry", "wet", "late",
    "early", "long", "short", "best",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub chains: usize,
    pub sentence_len: usize,
    /// Substitutions per chain; a chain has this many sentences plus one.
    pub substitutions: usize,
    /// Size of the word pool, at most the built-in list length.
    pub vocab_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { chains: 100, sentence_len: 6, substitutions: 6, vocab_words: WORDS.len(), seed: 1 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_words > WORDS.len() {
            return Err(Error::InvalidParam(format!("at most {} words available", WORDS.len())));
        }
        if self.sentence_len == 0 || self.substitutions > self.sentence_len {
            return Err(Error::InvalidParam("need 0 < substitutions <= sentence_len".into()));
        }
        if self.sentence_len + self.substitutions > self.vocab_words {
            return Err(Error::InvalidParam("word pool too small for one chain".into()));
        }
        Ok(())
    }
}

/// The chains, each starting at its seed sentence.
pub fn chains(cfg: &SynthConfig) -> Result<Vec<Vec<Sentence>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool = &WORDS[..cfg.vocab_words];
    let mut out = Vec::with_capacity(cfg.chains);
    for _ in 0..cfg.chains {
        let words: Vec<&str> = pool.choose_multiple(&mut rng, cfg.sentence_len + cfg.substitutions).copied().collect();
        let (start, fresh) = words.split_at(cfg.sentence_len);
        let mut positions: Vec<usize> = (0..cfg.sentence_len).collect();
        positions.shuffle(&mut rng);
        let mut current: Vec<String> = start.iter().map(|w| w.to_string()).collect();
        let mut chain = vec![Sentence::new(current.clone())?];
        for (&pos, &w) in positions.iter().zip(fresh) {
            current[pos] = w.to_owned();
            chain.push(Sentence::new(current.clone())?);
        }
        out.push(chain);
    }
    Ok(out)
}

/// All chain sentences, chain by chain.
pub fn corpus(cfg: &SynthConfig) -> Result<Vec<Sentence>> {
    Ok(chains(cfg)?.into_iter().flatten().collect())
}
