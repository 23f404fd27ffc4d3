//! Brute-force language enumeration by leftmost derivation. Used as the
//! oracle the automaton is checked against, so it shares no code with it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{ConfigWord, Srg};
use crate::error::{Error, Result};

pub const DEFAULT_LANGUAGE_CAP: usize = 13;

/// Terminal words of at most `max_tokens` tokens derivable from the start
/// nonterminal, with the default cap.
pub fn enumerate_language(g: &Srg, max_tokens: usize) -> Result<BTreeSet<ConfigWord>> {
    enumerate_language_capped(g, max_tokens, DEFAULT_LANGUAGE_CAP)
}

pub fn enumerate_language_capped(
    g: &Srg,
    max_tokens: usize,
    cap: usize,
) -> Result<BTreeSet<ConfigWord>> {
    if max_tokens == 0 {
        return Err(Error::Parameter("max_tokens must be positive".into()));
    }
    if max_tokens > cap {
        return Err(Error::Resource(format!(
            "language enumeration up to {max_tokens} tokens exceeds cap {cap}"
        )));
    }
    g.validate()?;
    let min_yield = min_yields(g);

    let mut out = BTreeSet::new();
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut queue = VecDeque::from([vec![g.start.clone()]]);
    while let Some(form) = queue.pop_front() {
        if !seen.insert(form.clone()) {
            continue;
        }
        let Some(pos) = form.iter().position(|s| g.is_nonterminal(s)) else {
            if !form.is_empty() && form.len() <= max_tokens {
                out.insert(ConfigWord::from_tokens(form));
            }
            continue;
        };
        for p in g.productions.iter().filter(|p| p.lhs == form[pos]) {
            let mut next = Vec::with_capacity(form.len() + p.rhs.len());
            next.extend_from_slice(&form[..pos]);
            next.extend(p.rhs.iter().cloned());
            next.extend_from_slice(&form[pos + 1..]);
            let lower: usize = next
                .iter()
                .map(|s| if g.is_nonterminal(s) { min_yield[s] } else { 1 })
                .fold(0usize, |a, b| a.saturating_add(b));
            if lower <= max_tokens {
                queue.push_back(next);
            }
        }
    }
    Ok(out)
}

/// Fewest terminals each nonterminal can yield; `usize::MAX` if it derives
/// no terminal word.
fn min_yields(g: &Srg) -> BTreeMap<String, usize> {
    let mut best: BTreeMap<String, usize> =
        g.nonterminals.iter().map(|n| (n.clone(), usize::MAX)).collect();
    loop {
        let mut changed = false;
        for p in &g.productions {
            let cost = p
                .rhs
                .iter()
                .map(|s| if g.is_nonterminal(s) { best[s] } else { 1 })
                .fold(0usize, |a, b| a.saturating_add(b));
            if cost < best[&p.lhs] {
                best.insert(p.lhs.clone(), cost);
                changed = true;
            }
        }
        if !changed {
            return best;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Sra;

    fn w(s: &str) -> ConfigWord {
        ConfigWord::parse(s, &Srg::manipulator()).unwrap()
    }

    #[test]
    fn max_one_is_base_only() {
        let l = enumerate_language(&Srg::manipulator(), 1).unwrap();
        assert_eq!(l, BTreeSet::from([w("B")]));
    }

    #[test]
    fn max_three_applies_each_production_once() {
        let l = enumerate_language(&Srg::manipulator(), 3).unwrap();
        let expected = BTreeSet::from([w("B"), w("B ε JO"), w("B ε L"), w("B ε EN")]);
        assert_eq!(l, expected);
    }

    #[test]
    fn sizes_follow_three_way_branching() {
        // 1 + 3 + 9 + ... words: one choice of module per appended pair.
        let l = enumerate_language(&Srg::manipulator(), 9).unwrap();
        assert_eq!(l.len(), 1 + 3 + 9 + 27 + 81);
    }

    #[test]
    fn cap_is_enforced() {
        let g = Srg::manipulator();
        assert!(matches!(enumerate_language(&g, 14), Err(Error::Resource(_))));
        assert!(enumerate_language_capped(&g, 14, 15).is_ok());
    }

    #[test]
    fn membership_matches_end_effector_predicate() {
        let g = Srg::manipulator();
        let sra = Sra::from_srg(&g).unwrap();
        for word in enumerate_language(&g, 9).unwrap() {
            assert_eq!(sra.accepts(&word).unwrap().accepted, word.contains("EN"), "{word}");
        }
    }

    #[test]
    fn automaton_language_equals_filtered_grammar_language_to_nine() {
        let g = Srg::manipulator();
        let sra = Sra::from_srg(&g).unwrap();
        let filtered: BTreeSet<_> = enumerate_language(&g, 9)
            .unwrap()
            .into_iter()
            .filter(|w| w.contains("EN"))
            .collect();
        assert_eq!(sra.language(9), filtered);
    }
}
