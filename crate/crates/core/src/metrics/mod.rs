//! Path quality scores: fluency under a reference language model and
//! smoothness as Jaccard distance between neighbouring sentences.

mod lm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::MorphSequence;
use crate::textcore::overlap;

pub use lm::{load_lm, read_lm, save_lm, train_lm, write_lm, FluencyLm, LmConfig, LmHistory, LmTrainConfig};

/// How token NLLs combine into one sentence score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenReduce {
    #[default]
    Mean,
    Sum,
}

pub fn sentence_fluency(s: &crate::textcore::Sentence, lm: &FluencyLm, reduce: TokenReduce) -> Result<f64> {
    let (nll, n) = lm.sentence_nll(s)?;
    Ok(match reduce {
        TokenReduce::Mean => nll / n as f64,
        TokenReduce::Sum => nll,
    })
}

/// Mean sentence score over the intermediate sentences.
pub fn fluency(seq: &MorphSequence, lm: &FluencyLm, reduce: TokenReduce) -> Result<f64> {
    let mid = seq.intermediates();
    if mid.is_empty() {
        return Err(Error::InsufficientData("fluency needs at least one intermediate sentence".into()));
    }
    let scores = mid.iter().map(|s| sentence_fluency(s, lm, reduce)).collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub max: f64,
    pub avg: f64,
}

/// Jaccard distances of the hops into `X_1 … X_{end-1}`, plus the final hop
/// into `X_end` when `include_final` is set.
pub fn smoothness(seq: &MorphSequence, include_final: bool) -> Result<Smoothness> {
    let s = seq.sentences();
    let hops = if include_final { s.len() - 1 } else { s.len() - 2 };
    if hops == 0 {
        return Err(Error::InsufficientData("smoothness needs at least one intermediate sentence".into()));
    }
    let d: Vec<(u128, u128)> = (1..=hops)
        .map(|i| {
            let (inter, union) = overlap(&s[i - 1], &s[i]);
            ((union - inter) as u128, union as u128)
        })
        .collect();
    let as_f64 = |(n, d): (u128, u128)| n as f64 / d as f64;
    let max = d.iter().map(|&f| as_f64(f)).fold(0.0, f64::max);
    // distances are small fractions, so the mean is summed exactly and rounded once
    let avg = match exact_sum(&d) {
        Some((n, den)) => as_f64((n, den * hops as u128)),
        None => d.iter().map(|&f| as_f64(f)).sum::<f64>() / hops as f64,
    };
    Ok(Smoothness { max, avg })
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn exact_sum(fractions: &[(u128, u128)]) -> Option<(u128, u128)> {
    fractions.iter().try_fold((0u128, 1u128), |(n, d), &(a, b)| {
        let g = gcd(d, b);
        let den = (d / g).checked_mul(b)?;
        let num = n.checked_mul(b / g)?.checked_add(a.checked_mul(d / g)?)?;
        let r = gcd(num, den).max(1);
        Some((num / r, den / r))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Absent without a language model or when no path has intermediates.
    pub fluency: Option<f64>,
    pub smoothness_max: Option<f64>,
    pub smoothness_avg: Option<f64>,
    /// Final hop into the target included.
    pub smoothness_max_extended: f64,
    pub smoothness_avg_extended: f64,
    /// Mean number of intermediate sentences.
    pub mean_steps: f64,
    pub n: usize,
    /// Paths without intermediates, left out of fluency and the literal
    /// smoothness averages.
    pub without_intermediates: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Corpus-level averages of the per-path scores, in path order.
pub fn evaluate(paths: &[MorphSequence], lm: Option<&FluencyLm>, reduce: TokenReduce) -> Result<EvalReport> {
    if paths.is_empty() {
        return Err(Error::InsufficientData("no paths to evaluate".into()));
    }
    let scored: Vec<&MorphSequence> = paths.iter().filter(|p| !p.intermediates().is_empty()).collect();
    let literal = scored.iter().map(|p| smoothness(p, false)).collect::<Result<Vec<_>>>()?;
    let extended = paths.iter().map(|p| smoothness(p, true)).collect::<Result<Vec<_>>>()?;
    let fluency = match lm {
        Some(lm) => {
            let f = scored.par_iter().map(|p| fluency(p, lm, reduce)).collect::<Result<Vec<_>>>()?;
            mean(&f)
        }
        None => None,
    };
    let steps: Vec<f64> = paths.iter().map(|p| p.intermediates().len() as f64).collect();
    Ok(EvalReport {
        fluency,
        smoothness_max: mean(&literal.iter().map(|s| s.max).collect::<Vec<_>>()),
        smoothness_avg: mean(&literal.iter().map(|s| s.avg).collect::<Vec<_>>()),
        smoothness_max_extended: mean(&extended.iter().map(|s| s.max).collect::<Vec<_>>()).unwrap_or(0.0),
        smoothness_avg_extended: mean(&extended.iter().map(|s| s.avg).collect::<Vec<_>>()).unwrap_or(0.0),
        mean_steps: mean(&steps).unwrap_or(0.0),
        n: paths.len(),
        without_intermediates: paths.len() - scored.len(),
    })
}

/// Plain-text table with one row per labelled report.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"));
    let header = ["Model", "Fluency", "Smoothness_max", "Smoothness_avg", "Steps", "N"];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for (name, r) in rows {
        table.push(vec![
            name.to_string(),
            cell(r.fluency),
            cell(r.smoothness_max),
            cell(r.smoothness_avg),
            format!("{:.2}", r.mean_steps),
            r.n.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::Provenance;
    use crate::textcore::{build_vocab, jaccard_distance, Sentence};
    use proptest::prelude::*;

    fn s(t: &str) -> Sentence {
        Sentence::from_tokenized(t).unwrap()
    }

    fn chain() -> MorphSequence {
        let c = ["a b c d", "a b c e", "a b f e", "a g f e", "h g f e"];
        MorphSequence::new(c.iter().map(|t| s(t)).collect(), Provenance::Mined).unwrap()
    }

    #[test]
    fn chain_smoothness() {
        for include in [false, true] {
            let sm = smoothness(&chain(), include).unwrap();
            assert_eq!(sm, Smoothness { max: 0.4, avg: 0.4 });
        }
        let two = MorphSequence::new(vec![s("a b"), s("a c")], Provenance::Mined).unwrap();
        assert!(smoothness(&two, false).is_err());
        let ext = smoothness(&two, true).unwrap();
        assert!((ext.max - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_lm_fluency_is_log_v() {
        let seq = chain();
        let vocab = build_vocab(seq.sentences(), 100).unwrap();
        let lm = FluencyLm::uniform(LmConfig { emb_dim: 4, hidden_dim: 5, ..LmConfig::default() }, vocab).unwrap();
        let f = fluency(&seq, &lm, TokenReduce::Mean).unwrap();
        assert!((f - (lm.vocab.len() as f64).ln()).abs() < 1e-12);
        let summed = fluency(&seq, &lm, TokenReduce::Sum).unwrap();
        assert!((summed - 5.0 * (lm.vocab.len() as f64).ln()).abs() < 1e-12);
        let two = MorphSequence::new(vec![s("a b"), s("a c")], Provenance::Mined).unwrap();
        assert!(fluency(&two, &lm, TokenReduce::Mean).is_err());
    }

    #[test]
    fn evaluate_single_and_duplicated() {
        let seq = chain();
        let vocab = build_vocab(seq.sentences(), 100).unwrap();
        let lm = FluencyLm::new(LmConfig { emb_dim: 4, hidden_dim: 5, ..LmConfig::default() }, vocab).unwrap();
        let one = evaluate(std::slice::from_ref(&seq), Some(&lm), TokenReduce::Mean).unwrap();
        assert_eq!(one.fluency.unwrap(), fluency(&seq, &lm, TokenReduce::Mean).unwrap());
        assert_eq!(one.smoothness_max, Some(0.4));
        assert_eq!(one.mean_steps, 3.0);
        let two = evaluate(&[seq.clone(), seq], Some(&lm), TokenReduce::Mean).unwrap();
        assert_eq!(EvalReport { n: 1, ..two }, one);
        assert!(evaluate(&[], None, TokenReduce::Mean).is_err());
    }

    #[test]
    fn evaluate_counts_paths_without_intermediates() {
        let direct = MorphSequence::new(vec![s("a b"), s("c d")], Provenance::Baseline).unwrap();
        let r = evaluate(&[chain(), direct], None, TokenReduce::Mean).unwrap();
        assert_eq!(r.without_intermediates, 1);
        assert_eq!(r.smoothness_max, Some(0.4));
        assert_eq!(r.smoothness_max_extended, 0.7);
        assert_eq!(r.mean_steps, 1.5);
        assert!(r.fluency.is_none());
    }

    #[test]
    fn table_is_aligned() {
        let r = evaluate(&[chain()], None, TokenReduce::Mean).unwrap();
        let t = render_table(&[("retrieval", &r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Model"));
        assert!(lines[2].contains("0.400"));
        assert_eq!(lines[0].len(), lines[2].len());
    }

    fn arb_sequence() -> impl Strategy<Value = MorphSequence> {
        prop::collection::vec(prop::collection::vec(0u8..8, 1..6), 3..8).prop_filter_map("adjacent sets differ", |rows| {
            let sents: Vec<Sentence> = rows
                .iter()
                .map(|r| Sentence::new(r.iter().map(|t| format!("w{t}")).collect()).unwrap())
                .collect();
            MorphSequence::new(sents, Provenance::Generated).ok()
        })
    }

    proptest! {
        #[test]
        fn max_dominates_avg(seq in arb_sequence(), include in any::<bool>()) {
            let sm = smoothness(&seq, include).unwrap();
            prop_assert!(sm.max >= sm.avg);
            prop_assert!((0.0..=1.0).contains(&sm.avg) && (0.0..=1.0).contains(&sm.max));
            let s = seq.sentences();
            let d = jaccard_distance(&s[0], &s[1]);
            prop_assert!(sm.max >= d);
        }
    }
}
