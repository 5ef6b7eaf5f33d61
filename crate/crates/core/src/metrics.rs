//! Segment-level and affix-level precision, recall and F1.

use std::collections::HashSet;
use std::fmt;

use crate::corpus::{Sentence, Span};
use crate::error::{Error, Result};

/// Micro-averaged precision, recall and F1 with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrfResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrfResult {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PrfResult {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

impl fmt::Display for PrfResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P {:.4} R {:.4} F {:.4}",
            self.precision, self.recall, self.f1
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Level {
    #[default]
    Word,
    Morph,
}

impl Level {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Level::Word),
            "morph" => Ok(Level::Morph),
            other => Err(Error::Config(format!("unknown evaluation level {other:?}"))),
        }
    }
}

/// How the stem of a word is picked among its morphs. Morphs left of the
/// stem are prefixes, morphs right of it suffixes.
#[derive(Debug, Clone, Copy, Default)]
pub enum StemRule {
    /// Longest morph, leftmost on ties.
    #[default]
    LongestLeftmost,
    /// Longest morph, rightmost on ties.
    LongestRightmost,
    /// The first morph of every word.
    First,
    Custom(fn(&[Span]) -> usize),
}

impl StemRule {
    pub fn stem_index(&self, morphs: &[Span]) -> usize {
        match self {
            StemRule::LongestLeftmost => {
                let mut best = 0;
                for (i, m) in morphs.iter().enumerate() {
                    if m.len() > morphs[best].len() {
                        best = i;
                    }
                }
                best
            }
            StemRule::LongestRightmost => {
                let mut best = 0;
                for (i, m) in morphs.iter().enumerate() {
                    if m.len() >= morphs[best].len() {
                        best = i;
                    }
                }
                best
            }
            StemRule::First => 0,
            StemRule::Custom(f) => f(morphs),
        }
    }
}

/// A segment keyed by its absolute unit span; morph segments also carry the
/// enclosing word.
type SegmentKey = (Span, Span);

fn segments(s: &Sentence, level: Level) -> Vec<SegmentKey> {
    match (level, s.absolute_morphs()) {
        (Level::Morph, Some(m)) => m,
        // sentences without morph annotation: each word is one morph
        _ => s.words.iter().map(|w| (*w, *w)).collect(),
    }
}

fn affixes(s: &Sentence, rule: StemRule) -> Vec<SegmentKey> {
    let mut out = Vec::new();
    let Some(morphs) = &s.morphs else {
        return out;
    };
    for (w, list) in s.words.iter().zip(morphs) {
        if list.is_empty() {
            continue;
        }
        let stem = rule.stem_index(list);
        out.extend(
            list.iter()
                .enumerate()
                .filter(|(i, _)| *i != stem)
                .map(|(_, m)| (*w, m.shift(w.start))),
        );
    }
    out
}

fn count_matches(
    gold: &[Sentence],
    pred: &[Sentence],
    extract: impl Fn(&Sentence) -> Vec<SegmentKey>,
) -> Result<PrfResult> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            found: pred.len(),
        });
    }
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.units != p.units {
            return Err(Error::AlignmentError { sentence: i });
        }
        let gs: HashSet<SegmentKey> = extract(g).into_iter().collect();
        let ps = extract(p);
        tp += ps.iter().filter(|k| gs.contains(k)).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    Ok(PrfResult::from_counts(tp, n_pred - tp, n_gold - tp))
}

/// Exact-span segment matching, micro-averaged over the corpus. At morph
/// level a morph also has to sit in the same word.
pub fn segment_prf(gold: &[Sentence], pred: &[Sentence], level: Level) -> Result<PrfResult> {
    count_matches(gold, pred, |s| segments(s, level))
}

/// Precision, recall and F1 over prefixes and suffixes, with stems picked by
/// the longest-morph rule.
pub fn affix_prf(gold: &[Sentence], pred: &[Sentence]) -> Result<PrfResult> {
    affix_prf_with(gold, pred, StemRule::default())
}

pub fn affix_prf_with(gold: &[Sentence], pred: &[Sentence], rule: StemRule) -> Result<PrfResult> {
    count_matches(gold, pred, |s| affixes(s, rule))
}

/// Per-sentence TSV lines: index, tp, fp, fn, gold line, predicted line.
pub fn diff_report(
    gold: &[Sentence],
    pred: &[Sentence],
    level: Level,
    unit_mode: bool,
) -> Result<String> {
    let mut out = String::from("sentence\ttp\tfp\tfn\tgold\tpred\n");
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let r = segment_prf(std::slice::from_ref(g), std::slice::from_ref(p), level)
            .map_err(|_| Error::AlignmentError { sentence: i })?;
        let render = |s: &Sentence| match level {
            Level::Word => s.to_word_line(unit_mode),
            Level::Morph => s.to_morph_line(unit_mode),
        };
        out.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{}\t{}\n",
            r.tp,
            r.fp,
            r.fn_,
            render(g),
            render(p)
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_morpheme_line, parse_word_line};
    use proptest::prelude::*;

    fn words(line: &str) -> Sentence {
        parse_word_line(line, false).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn word_level_hand_case() {
        let r = segment_prf(&[words("ab c")], &[words("a b c")], Level::Word).unwrap();
        assert!(close(r.precision, 1.0 / 3.0));
        assert!(close(r.recall, 0.5));
        assert!(close(r.f1, 0.4));
        assert_eq!((r.tp, r.fp, r.fn_), (1, 2, 1));
    }

    #[test]
    fn perfect_and_empty() {
        let g = vec![words("ab c"), words("abc d e")];
        let r = segment_prf(&g, &g, Level::Word).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = segment_prf(&[], &[], Level::Word).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.to_string(), "P 0.0000 R 0.0000 F 0.0000");
    }

    #[test]
    fn misaligned_streams() {
        assert!(matches!(
            segment_prf(&[words("ab")], &[words("ac")], Level::Word),
            Err(Error::AlignmentError { sentence: 0 })
        ));
        assert!(matches!(
            segment_prf(&[words("ab")], &[], Level::Word),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn affix_hand_case() {
        let g = parse_morpheme_line("kremppo//j//a").unwrap();
        let p = parse_morpheme_line("kremppoj//a").unwrap();
        assert_eq!(affixes(&g, StemRule::default()).len(), 2);
        let r = affix_prf(&[g], &[p]).unwrap();
        assert!(close(r.precision, 1.0));
        assert!(close(r.recall, 0.5));
        assert!(close(r.f1, 2.0 / 3.0));
    }

    #[test]
    fn affix_figure_sentence_and_single_morphs() {
        let g = parse_morpheme_line("elämä tu//o kremppo//j//a mukana//an .").unwrap();
        let r = affix_prf(std::slice::from_ref(&g), std::slice::from_ref(&g)).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.tp, 4);
        let s = parse_morpheme_line("abc de").unwrap();
        assert!(affixes(&s, StemRule::default()).is_empty());
    }

    #[test]
    fn stem_rules() {
        let m = [Span::new(0, 2), Span::new(2, 4), Span::new(4, 5)];
        assert_eq!(StemRule::LongestLeftmost.stem_index(&m), 0);
        assert_eq!(StemRule::LongestRightmost.stem_index(&m), 1);
        assert_eq!(StemRule::First.stem_index(&m), 0);
        assert_eq!(StemRule::Custom(|m| m.len() - 1).stem_index(&m), 2);
    }

    #[test]
    fn morph_level_matches_word_level_for_single_morphs() {
        let g = parse_morpheme_line("ab c de").unwrap();
        let p = parse_morpheme_line("a bc de").unwrap();
        let w = segment_prf(
            std::slice::from_ref(&g),
            std::slice::from_ref(&p),
            Level::Word,
        )
        .unwrap();
        let m = segment_prf(&[g], &[p], Level::Morph).unwrap();
        assert_eq!(w, m);
    }

    #[test]
    fn morph_needs_same_word() {
        // same morph span, different enclosing word
        let g = parse_morpheme_line("ab c").unwrap();
        let p = parse_morpheme_line("a//b c").unwrap();
        let r = segment_prf(&[g], &[p], Level::Morph).unwrap();
        assert_eq!(r.tp, 1);
    }

    #[test]
    fn report() {
        let out = diff_report(&[words("ab c")], &[words("a b c")], Level::Word, false).unwrap();
        assert_eq!(out.lines().nth(1).unwrap(), "0\t1\t2\t1\tab c\ta b c");
    }

    fn arb_segmentation(n: usize) -> impl Strategy<Value = Sentence> {
        prop::collection::vec(any::<bool>(), n - 1).prop_map(move |cuts| {
            let mut words = vec![vec![]];
            for i in 0..n {
                words
                    .last_mut()
                    .unwrap()
                    .push(((b'a' + i as u8) as char).to_string());
                if i + 1 < n && cuts[i] {
                    words.push(vec![]);
                }
            }
            Sentence::from_words(words).unwrap()
        })
    }

    proptest! {
        #[test]
        fn swap_symmetry(g in arb_segmentation(8), p in arb_segmentation(8)) {
            let a = segment_prf(std::slice::from_ref(&g), std::slice::from_ref(&p), Level::Word).unwrap();
            let b = segment_prf(&[p], &[g], Level::Word).unwrap();
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert!((0.0..=1.0).contains(&a.f1));
            if a.tp == 0 { prop_assert_eq!(a.f1, 0.0); }
        }

        #[test]
        fn adding_a_correct_segment_never_lowers_f(tp in 0usize..20, fp in 0usize..20, fn_ in 1usize..20) {
            let before = PrfResult::from_counts(tp, fp, fn_);
            let after = PrfResult::from_counts(tp + 1, fp, fn_ - 1);
            prop_assert!(after.f1 >= before.f1);
        }
    }
}
