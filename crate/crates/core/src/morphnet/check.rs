use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::miner::{MorphSequence, Provenance};
use crate::morphnet::{Forward, ModelConfig, MorphModel};
use crate::tensorcore::{grad_check, GradCheckReport};
use crate::textcore::{Sentence, Vocabulary, SPECIALS};

/// Full-loss gradient check on a random model over a synthetic vocabulary
/// of `vocab_size` entries (specials included) and a random 4-sentence
/// sequence drawn from it.
#[derive(Clone, Copy, Debug)]
pub struct GradientCheck {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub per_group: usize,
    pub step: f64,
    pub seed: u64,
}

impl GradientCheck {
    pub fn run(&self) -> Result<GradCheckReport> {
        let words = self.vocab_size.checked_sub(SPECIALS.len()).filter(|&n| n >= 6).ok_or_else(|| {
            Error::InvalidParam(format!("vocabulary needs at least {} entries", SPECIALS.len() + 6))
        })?;
        let names: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_ranked(names.iter().map(|w| (w.clone(), 1)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut sentences: Vec<Sentence> = Vec::new();
        while sentences.len() < 4 {
            let s = Sentence::new(names.choose_multiple(&mut rng, 5).cloned().collect())?;
            if sentences.last().is_none_or(|p| !p.same_set(&s)) {
                sentences.push(s);
            }
        }
        let seq = MorphSequence::new(sentences, Provenance::Generated)?;
        let model = MorphModel::new(ModelConfig { seed: self.seed, ..self.config }, vocab)?;
        let mut params = model.params.clone();
        grad_check(
            &mut params,
            |tape| Ok(Forward::new(tape, &model).sequence_nll(&seq)?.loss),
            self.step,
            self.per_group,
            self.seed,
        )
    }
}
