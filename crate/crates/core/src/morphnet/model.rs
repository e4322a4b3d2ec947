//! The morphing network: encoder, edit-table attention, edit-vector
//! recurrence and the attentional editing decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::MorphSequence;
use crate::morphnet::layers::{AdditiveScore, Gru, Init};
use crate::tensorcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::textcore::{Sentence, Vocabulary, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub edit_dim: usize,
    pub attn_dim: usize,
    /// One embedding table for encoder input, decoder input and edit tables.
    pub share_embeddings: bool,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn full() -> Self {
        ModelConfig {
            emb_dim: 300,
            hidden_dim: 512,
            edit_dim: 256,
            attn_dim: 512,
            share_embeddings: true,
            init_scale: 0.08,
            seed: 1,
        }
    }

    pub fn desk() -> Self {
        ModelConfig { emb_dim: 32, hidden_dim: 64, edit_dim: 16, attn_dim: 64, ..Self::full() }
    }

    /// Width of the diff vector: insertion half plus deletion half.
    pub fn diff_dim(&self) -> usize {
        2 * self.emb_dim
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Layers {
    pub emb_encoder: ParamId,
    pub emb_decoder: ParamId,
    pub emb_edit: ParamId,
    pub encoder: Gru,
    pub decoder: Gru,
    pub delete_attn: AdditiveScore,
    pub insert_attn: AdditiveScore,
    pub edit_gru: Gru,
    pub dec_attn: AdditiveScore,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl Layers {
    fn register<R: Rng>(init: &mut Init<'_, R>, c: &ModelConfig, vocab: usize) -> Result<Self> {
        let (e, h, z, a) = (c.emb_dim, c.hidden_dim, c.edit_dim, c.attn_dim);
        let emb_encoder = init.param("embedding", &[vocab, e])?;
        let (emb_decoder, emb_edit) = if c.share_embeddings {
            (emb_encoder, emb_encoder)
        } else {
            (init.param("embedding.decoder", &[vocab, e])?, init.param("embedding.edit", &[vocab, e])?)
        };
        Ok(Layers {
            emb_encoder,
            emb_decoder,
            emb_edit,
            encoder: Gru::register(init, "encoder", e, h, true)?,
            decoder: Gru::register(init, "decoder", e + z, h, true)?,
            delete_attn: AdditiveScore::register(init, "edit_attn.delete", e, h, a)?,
            insert_attn: AdditiveScore::register(init, "edit_attn.insert", e, h, a)?,
            edit_gru: Gru::register(init, "edit_gru", h + c.diff_dim(), z, false)?,
            dec_attn: AdditiveScore::register(init, "dec_attn", h, h, a)?,
            out_w: init.param("output.w", &[vocab, e + 2 * h])?,
            out_b: init.param("output.b", &[vocab])?,
        })
    }

    fn lookup(store: &ParamStore, c: &ModelConfig) -> Option<Self> {
        let emb_encoder = store.id("embedding")?;
        let (emb_decoder, emb_edit) = if c.share_embeddings {
            (emb_encoder, emb_encoder)
        } else {
            (store.id("embedding.decoder")?, store.id("embedding.edit")?)
        };
        Some(Layers {
            emb_encoder,
            emb_decoder,
            emb_edit,
            encoder: Gru::lookup(store, "encoder", true)?,
            decoder: Gru::lookup(store, "decoder", true)?,
            delete_attn: AdditiveScore::lookup(store, "edit_attn.delete")?,
            insert_attn: AdditiveScore::lookup(store, "edit_attn.insert")?,
            edit_gru: Gru::lookup(store, "edit_gru", false)?,
            dec_attn: AdditiveScore::lookup(store, "dec_attn")?,
            out_w: store.id("output.w")?,
            out_b: store.id("output.b")?,
        })
    }
}

/// Trainable parameters plus the vocabulary they are indexed by.
#[derive(Clone, Debug)]
pub struct MorphModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub(crate) layers: Layers,
}

impl MorphModel {
    /// Fresh model with parameters uniform in `±init_scale`, seeded by
    /// `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        if config.emb_dim == 0 || config.hidden_dim == 0 || config.edit_dim == 0 || config.attn_dim == 0 {
            return Err(Error::InvalidParam("model dimensions must be positive".into()));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init { store: &mut params, rng: &mut rng, scale: config.init_scale };
        let layers = Layers::register(&mut init, &config, vocab.len())?;
        Ok(MorphModel { config, vocab, params, layers })
    }

    /// Wraps parameters loaded from a checkpoint, checking every shape.
    pub fn from_params(config: ModelConfig, vocab: Vocabulary, params: ParamStore) -> Result<Self> {
        let expected = MorphModel::new(config, vocab.clone())?;
        if params.len() != expected.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} parameters, model needs {}", params.len(), expected.params.len()),
            ));
        }
        for (_, name, t) in expected.params.iter() {
            let id = params
                .id(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter {name}")))?;
            if params.get(id).shape() != t.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("{name}: shape {:?}, expected {:?}", params.get(id).shape(), t.shape()),
                ));
            }
        }
        let layers = Layers::lookup(&params, &config)
            .ok_or_else(|| Error::format("checkpoint", "incomplete parameter set"))?;
        Ok(MorphModel { config, vocab, params, layers })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Teacher-forced NLL of a whole sequence, summed over tokens, with the
    /// number of predicted tokens.
    pub fn sequence_nll(&self, seq: &MorphSequence) -> Result<(f64, usize)> {
        let mut tape = Tape::new(&self.params);
        let out = Forward::new(&mut tape, self).sequence_nll(seq)?;
        Ok((tape.scalar(out.loss), out.tokens))
    }
}

/// Insertion words (in the target, not the current sentence) and deletion
/// words (in the current sentence, not the target), each in first-occurrence
/// order with their vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditTable {
    pub insert: Vec<(String, u32)>,
    pub delete: Vec<(String, u32)>,
}

fn first_occurrence_minus(from: &Sentence, minus: &Sentence, vocab: &Vocabulary) -> Vec<(String, u32)> {
    let mut out: Vec<(String, u32)> = Vec::new();
    for t in from.tokens() {
        if !minus.contains(t) && !out.iter().any(|(w, _)| w == t) {
            out.push((t.clone(), vocab.id(t)));
        }
    }
    out
}

pub fn build_edit_table(current: &Sentence, target: &Sentence, vocab: &Vocabulary) -> EditTable {
    EditTable {
        insert: first_occurrence_minus(target, current, vocab),
        delete: first_occurrence_minus(current, target, vocab),
    }
}

pub struct Encoded {
    pub states: Vec<Var>,
    pub last: Var,
    /// Key projections for decoder attention, one per state.
    keys: Vec<Var>,
}

pub struct DiffOut {
    pub d: Var,
    /// Weights over `table.delete`, absent when the set is empty.
    pub beta: Option<Var>,
    /// Weights over `table.insert`, absent when the set is empty.
    pub gamma: Option<Var>,
}

pub struct DecodeOut {
    pub hidden: Var,
    pub log_probs: Var,
    pub alpha: Var,
}

pub struct NllOut {
    pub loss: Var,
    pub tokens: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Replace every edit vector by zeros (plain attention seq2seq).
    pub zero_edit_vector: bool,
    /// Inverted-dropout rate on embedding lookups; zero disables it.
    pub dropout: f64,
}

/// Records the network's computations on a tape.
pub struct Forward<'t, 's, 'm> {
    pub tape: &'t mut Tape<'s>,
    model: &'m MorphModel,
    pub options: ForwardOptions,
    rng: Option<ChaCha8Rng>,
}

impl<'t, 's, 'm> Forward<'t, 's, 'm> {
    pub fn new(tape: &'t mut Tape<'s>, model: &'m MorphModel) -> Self {
        Forward { tape, model, options: ForwardOptions::default(), rng: None }
    }

    pub fn with_options(mut self, options: ForwardOptions, seed: u64) -> Self {
        self.options = options;
        if options.dropout > 0.0 {
            self.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        }
        self
    }

    fn embed(&mut self, table: ParamId, id: u32) -> Result<Var> {
        let e = self.tape.gather(table, id as usize)?;
        match self.rng.as_mut() {
            Some(rng) => {
                let keep = 1.0 - self.options.dropout;
                let n = self.tape.shape(e)[0];
                let mask = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                let mask = self.tape.vector(mask)?;
                self.tape.mul(e, mask)
            }
            None => Ok(e),
        }
    }

    fn zeros(&mut self, n: usize) -> Result<Var> {
        self.tape.constant(Tensor::zeros(&[n]))
    }

    pub fn zero_edit_state(&mut self) -> Result<Var> {
        self.zeros(self.model.config.edit_dim)
    }

    /// GRU encoder over token ids; one hidden state per token.
    pub fn encode(&mut self, ids: &[u32]) -> Result<Encoded> {
        if ids.is_empty() {
            return Err(Error::EmptySentence);
        }
        let l = &self.model.layers;
        let mut h = self.zeros(self.model.config.hidden_dim)?;
        let mut states = Vec::with_capacity(ids.len());
        let mut keys = Vec::with_capacity(ids.len());
        for &id in ids {
            let x = self.embed(l.emb_encoder, id)?;
            h = l.encoder.step(self.tape, x, h)?;
            states.push(h);
            keys.push(l.dec_attn.project_key(self.tape, h)?);
        }
        Ok(Encoded { last: h, states, keys })
    }

    fn attend_words(&mut self, words: &[(String, u32)], h_last: Var, insert: bool) -> Result<(Var, Option<Var>)> {
        let l = &self.model.layers;
        let attn = if insert { &l.insert_attn } else { &l.delete_attn };
        if words.is_empty() {
            return Ok((self.zeros(self.model.config.emb_dim)?, None));
        }
        let embs = words
            .iter()
            .map(|&(_, id)| self.embed(l.emb_edit, id))
            .collect::<Result<Vec<_>>>()?;
        let keys = embs.iter().map(|&e| attn.project_key(self.tape, e)).collect::<Result<Vec<_>>>()?;
        let query = attn.project_query(self.tape, h_last)?;
        let w = attn.weights(self.tape, &keys, query)?;
        Ok((self.tape.weighted_sum(w, &embs)?, Some(w)))
    }

    /// Attention-weighted insertion and deletion averages, concatenated
    /// (insertion half first). An empty word set contributes zeros.
    pub fn diff_vector(&mut self, table: &EditTable, h_last: Var) -> Result<DiffOut> {
        let (ins, gamma) = self.attend_words(&table.insert, h_last, true)?;
        let (del, beta) = self.attend_words(&table.delete, h_last, false)?;
        let d = self.tape.concat(&[ins, del])?;
        Ok(DiffOut { d, beta, gamma })
    }

    /// One step of the edit-vector recurrence with input `h ⊕ d`.
    pub fn edit_vector_step(&mut self, h: Var, d: Var, z_prev: Var) -> Result<Var> {
        if self.options.zero_edit_vector {
            return self.zero_edit_state();
        }
        let x = self.tape.concat(&[h, d])?;
        self.model.layers.edit_gru.step(self.tape, x, z_prev)
    }

    /// Advances the decoder by one token and returns the next-token
    /// log-distribution over the whole vocabulary.
    pub fn decode_step(&mut self, prev_hidden: Var, prev_token: u32, z: Var, enc: &Encoded) -> Result<DecodeOut> {
        let l = &self.model.layers;
        let y_prev = self.embed(l.emb_decoder, prev_token)?;
        let input = self.tape.concat(&[y_prev, z])?;
        let hidden = l.decoder.step(self.tape, input, prev_hidden)?;
        let query = l.dec_attn.project_query(self.tape, hidden)?;
        let alpha = l.dec_attn.weights(self.tape, &enc.keys, query)?;
        let context = self.tape.weighted_sum(alpha, &enc.states)?;
        let features = self.tape.concat(&[y_prev, hidden, context])?;
        let w = self.tape.param(l.out_w);
        let b = self.tape.param(l.out_b);
        let logits = self.tape.matmul(w, features)?;
        let logits = self.tape.add(logits, b)?;
        let log_probs = self.tape.log_softmax(logits)?;
        Ok(DecodeOut { hidden, log_probs, alpha })
    }

    /// Teacher-forced NLL of `target` (framed by BOS/EOS) given the encoded
    /// prototype and edit vector.
    pub fn sentence_nll(&mut self, enc: &Encoded, z: Var, target: &[u32]) -> Result<NllOut> {
        let mut hidden = enc.last;
        let mut prev = BOS;
        let mut terms = Vec::with_capacity(target.len() + 1);
        for &gold in target.iter().chain(std::iter::once(&EOS)) {
            let out = self.decode_step(hidden, prev, z, enc)?;
            terms.push(self.tape.pick(out.log_probs, gold as usize)?);
            hidden = out.hidden;
            prev = gold;
        }
        let total = self.tape.add_n(&terms)?;
        Ok(NllOut { loss: self.tape.scale(total, -1.0)?, tokens: terms.len() })
    }

    /// Sum over consecutive pairs `X_j → X_{j+1}` of the teacher-forced NLL,
    /// with one edit-vector recurrence per sequence starting from zeros and
    /// edit tables comparing `X_j` with the final sentence.
    pub fn sequence_nll(&mut self, seq: &MorphSequence) -> Result<NllOut> {
        let vocab = &self.model.vocab;
        let sentences = seq.sentences();
        let end = seq.target();
        let ids: Vec<Vec<u32>> = sentences.iter().map(|s| vocab.encode(s)).collect();
        let mut z = self.zero_edit_state()?;
        let mut losses = Vec::with_capacity(sentences.len() - 1);
        let mut tokens = 0;
        for j in 0..sentences.len() - 1 {
            let enc = self.encode(&ids[j])?;
            let table = build_edit_table(&sentences[j], end, vocab);
            let diff = self.diff_vector(&table, enc.last)?;
            z = self.edit_vector_step(enc.last, diff.d, z)?;
            let nll = self.sentence_nll(&enc, z, &ids[j + 1])?;
            losses.push(nll.loss);
            tokens += nll.tokens;
        }
        Ok(NllOut { loss: self.tape.add_n(&losses)?, tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::Provenance;
    use crate::tensorcore::grad_check;
    use crate::textcore::build_vocab;

    fn s(t: &str) -> Sentence {
        Sentence::from_tokenized(t).unwrap()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig { emb_dim: 5, hidden_dim: 6, edit_dim: 3, attn_dim: 4, seed: 3, ..ModelConfig::full() }
    }

    fn tiny_model() -> MorphModel {
        let corpus = vec![
            s("the noodles and pork belly was my favourite ."),
            s("love how friendly the staff is !"),
        ];
        MorphModel::new(tiny_config(), build_vocab(&corpus, 100).unwrap()).unwrap()
    }

    #[test]
    fn full_size_shapes() {
        let vocab = build_vocab(&[s("a b c")], 10).unwrap();
        let m = MorphModel::new(ModelConfig::full(), vocab).unwrap();
        let shape = |n: &str| m.params.get(m.params.id(n).unwrap()).shape().to_vec();
        assert_eq!(shape("embedding"), [7, 300]);
        assert_eq!(shape("encoder.w_update"), [512, 812]);
        assert_eq!(shape("edit_gru.w_update"), [256, 512 + 600 + 256]);
        assert_eq!(shape("decoder.w_cand"), [512, 300 + 256 + 512]);
        assert_eq!(shape("edit_attn.delete.w_key"), [512, 300]);
        assert_eq!(shape("dec_attn.v"), [512]);
        assert_eq!(shape("output.w"), [7, 300 + 1024]);
    }

    #[test]
    fn unshared_embeddings_register_three_tables() {
        let vocab = build_vocab(&[s("a b c")], 10).unwrap();
        let c = ModelConfig { share_embeddings: false, ..tiny_config() };
        let m = MorphModel::new(c, vocab).unwrap();
        assert!(m.params.id("embedding.decoder").is_some());
        assert!(m.params.id("embedding.edit").is_some());
    }

    #[test]
    fn edit_table_on_table1_sentences() {
        let m = tiny_model();
        let src = s("the noodles and pork belly was my favourite .");
        let tgt = s("love how friendly the staff is !");
        let t = build_edit_table(&src, &tgt, &m.vocab);
        let words = |v: &[(String, u32)]| v.iter().map(|(w, _)| w.clone()).collect::<Vec<_>>();
        assert_eq!(words(&t.insert), ["love", "how", "friendly", "staff", "is", "!"]);
        assert_eq!(words(&t.delete), ["noodles", "and", "pork", "belly", "was", "my", "favourite", "."]);

        let same = build_edit_table(&src, &src, &m.vocab);
        assert!(same.insert.is_empty() && same.delete.is_empty());

        let a = s("a b");
        let b = s("c d c");
        let t = build_edit_table(&a, &b, &m.vocab);
        assert_eq!(words(&t.insert), ["c", "d"]);
        assert_eq!(words(&t.delete), ["a", "b"]);
        let swapped = build_edit_table(&b, &a, &m.vocab);
        assert_eq!(swapped.insert, t.delete);
        assert_eq!(swapped.delete, t.insert);
    }

    #[test]
    fn encoder_shapes_and_zero_fixed_point() {
        let mut m = tiny_model();
        let ids = m.vocab.encode(&s("the pork was my favourite ."));
        {
            let mut tape = Tape::new(&m.params);
            let mut f = Forward::new(&mut tape, &m);
            let enc = f.encode(&ids).unwrap();
            assert_eq!(enc.states.len(), 6);
            assert!(enc.states.iter().all(|&h| f.tape.shape(h) == [6]));
            assert!(f.encode(&[]).is_err());
        }
        m.params.zero_all();
        let mut tape = Tape::new(&m.params);
        let mut f = Forward::new(&mut tape, &m);
        let enc = f.encode(&ids).unwrap();
        for &h in &enc.states {
            assert!(f.tape.value(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encoder_is_order_sensitive() {
        let m = tiny_model();
        let a = m.vocab.encode(&s("the pork was good"));
        let b = m.vocab.encode(&s("good was pork the"));
        let mut tape = Tape::new(&m.params);
        let mut f = Forward::new(&mut tape, &m);
        let (ea, eb) = (f.encode(&a).unwrap(), f.encode(&b).unwrap());
        assert_ne!(f.tape.value(ea.last), f.tape.value(eb.last));
    }

    #[test]
    fn diff_vector_weights_and_halves() {
        let m = tiny_model();
        let cur = s("the pork was my favourite .");
        let tgt = s("the staff is friendly !");
        let mut tape = Tape::new(&m.params);
        let mut f = Forward::new(&mut tape, &m);
        let enc = f.encode(&m.vocab.encode(&cur)).unwrap();
        let out = f.diff_vector(&build_edit_table(&cur, &tgt, &m.vocab), enc.last).unwrap();
        assert_eq!(f.tape.shape(out.d), [10]);
        for w in [out.beta.unwrap(), out.gamma.unwrap()] {
            assert!((f.tape.value(w).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        // single deletion word: its embedding exactly; no insertion words: zeros
        let cur = s("the pork was");
        let tgt = s("the pork");
        let table = build_edit_table(&cur, &tgt, &m.vocab);
        let enc = f.encode(&m.vocab.encode(&cur)).unwrap();
        let out = f.diff_vector(&table, enc.last).unwrap();
        let d = f.tape.value(out.d).to_vec();
        assert!(d[..5].iter().all(|&v| v == 0.0));
        assert!(out.gamma.is_none());
        let emb = m.params.get(m.layers.emb_edit).row(m.vocab.id("was") as usize);
        assert_eq!(&d[5..], emb);
    }

    #[test]
    fn edit_gate_endpoints() {
        let mut m = tiny_model();
        let (hd, zd) = (m.config.hidden_dim + m.config.diff_dim(), m.config.edit_dim);
        let z_prev = vec![0.5; zd];
        // update gate driven to 0 through the z_prev columns
        {
            let w = m.params.get_mut(m.layers.edit_gru.w_update).data_mut();
            for r in 0..zd {
                for c in 0..hd + zd {
                    w[r * (hd + zd) + c] = if c >= hd { -1e4 } else { 0.0 };
                }
            }
        }
        let run = |m: &MorphModel| {
            let mut tape = Tape::new(&m.params);
            let mut f = Forward::new(&mut tape, m);
            let h = f.tape.vector(vec![0.3; m.config.hidden_dim]).unwrap();
            let d = f.tape.vector(vec![-0.2; m.config.diff_dim()]).unwrap();
            let zp = f.tape.vector(z_prev.clone()).unwrap();
            let z = f.edit_vector_step(h, d, zp).unwrap();
            // the candidate, computed from the same parameters by hand
            let x: Vec<f64> = [vec![0.3; m.config.hidden_dim], vec![-0.2; m.config.diff_dim()]].concat();
            let wr = m.params.get(m.layers.edit_gru.w_reset);
            let wh = m.params.get(m.layers.edit_gru.w_cand);
            let xz: Vec<f64> = [x.clone(), z_prev.clone()].concat();
            let r: Vec<f64> = (0..zd)
                .map(|i| crate::tensorcore::sigmoid(wr.row(i).iter().zip(&xz).map(|(a, b)| a * b).sum()))
                .collect();
            let xrz: Vec<f64> = [x, r.iter().zip(&z_prev).map(|(a, b)| a * b).collect()].concat();
            let cand: Vec<f64> =
                (0..zd).map(|i| wh.row(i).iter().zip(&xrz).map(|(a, b)| a * b).sum::<f64>().tanh()).collect();
            (f.tape.value(z).to_vec(), cand)
        };
        let (z, _) = run(&m);
        assert_eq!(z, z_prev);

        {
            let w = m.params.get_mut(m.layers.edit_gru.w_update).data_mut();
            w.iter_mut().for_each(|v| *v = if *v < 0.0 { 1e4 } else { 0.0 });
        }
        let (z, cand) = run(&m);
        for (a, b) in z.iter().zip(&cand) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_step_distributions() {
        let m = tiny_model();
        let mut tape = Tape::new(&m.params);
        let mut f = Forward::new(&mut tape, &m);
        let enc = f.encode(&m.vocab.encode(&s("the pork was good"))).unwrap();
        let z = f.zero_edit_state().unwrap();
        let out = f.decode_step(enc.last, BOS, z, &enc).unwrap();
        let p: Vec<f64> = f.tape.value(out.log_probs).iter().map(|v| v.exp()).collect();
        assert_eq!(p.len(), m.vocab_size());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((f.tape.value(out.alpha).iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // a lone encoder state receives all the attention
        let one = f.encode(&[m.vocab.id("pork")]).unwrap();
        let out = f.decode_step(one.last, BOS, z, &one).unwrap();
        assert_eq!(f.tape.value(out.alpha), [1.0]);
    }

    #[test]
    fn uniform_output_gives_log_v() {
        let mut m = tiny_model();
        m.params.get_mut(m.layers.out_w).fill(0.0);
        m.params.get_mut(m.layers.out_b).fill(0.0);
        let seq = MorphSequence::new(
            vec![s("the pork was good"), s("the pork was very good"), s("the staff was very good")],
            Provenance::Mined,
        )
        .unwrap();
        let (loss, tokens) = m.sequence_nll(&seq).unwrap();
        assert_eq!(tokens, 6 + 6);
        let per = loss / tokens as f64;
        assert!((per - (m.vocab_size() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_edit_vector_ignores_the_table() {
        let m = tiny_model();
        let pair = |end: &str, zero: bool| {
            let seq = MorphSequence::new(
                vec![s("the pork was good"), s("the pork was very good"), s(end)],
                Provenance::Mined,
            )
            .unwrap();
            let mut tape = Tape::new(&m.params);
            let opts = ForwardOptions { zero_edit_vector: zero, ..Default::default() };
            let mut f = Forward::new(&mut tape, &m).with_options(opts, 0);
            // NLL of the first hop only depends on the end through the table
            let enc = f.encode(&m.vocab.encode(seq.source())).unwrap();
            let table = build_edit_table(seq.source(), seq.target(), &m.vocab);
            let diff = f.diff_vector(&table, enc.last).unwrap();
            let z0 = f.zero_edit_state().unwrap();
            let z = f.edit_vector_step(enc.last, diff.d, z0).unwrap();
            let out = f.sentence_nll(&enc, z, &m.vocab.encode(&seq.sentences()[1])).unwrap();
            f.tape.scalar(out.loss)
        };
        let (a, b) = (pair("love how friendly the staff is !", true), pair("my favourite .", true));
        assert_eq!(a, b);
        let (a, b) = (pair("love how friendly the staff is !", false), pair("my favourite .", false));
        assert_ne!(a, b);
    }

    #[test]
    fn sequence_nll_gradients_match_finite_differences() {
        let m = tiny_model();
        let seq = MorphSequence::new(
            vec![s("the pork was good"), s("the pork was very good"), s("the staff was very good !")],
            Provenance::Mined,
        )
        .unwrap();
        let mut params = m.params.clone();
        let report = grad_check(
            &mut params,
            |tape| {
                let mut f = Forward::new(tape, &m);
                Ok(f.sequence_nll(&seq)?.loss)
            },
            1e-5,
            40,
            4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:#?}");
    }

    #[test]
    fn short_sequence_rejected() {
        assert!(MorphSequence::new(vec![s("a")], Provenance::Mined).is_err());
    }

    #[test]
    fn params_round_trip_shape_check() {
        let m = tiny_model();
        let back = MorphModel::from_params(m.config, m.vocab.clone(), m.params.clone()).unwrap();
        assert_eq!(back.params, m.params);
        let wrong = ModelConfig { hidden_dim: 7, ..m.config };
        assert!(MorphModel::from_params(wrong, m.vocab.clone(), m.params.clone()).is_err());
    }
}
