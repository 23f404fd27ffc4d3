use std::collections::{BTreeMap, BTreeSet};

use super::{ConfigWord, Srg, SymbolKind};
use crate::error::{Error, Result};

/// A state of the reconfiguration automaton: the word assembled so far plus
/// the grammar items still live after reading it. States are produced on
/// demand by [`Sra::step`]; the full state space is never tabulated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SraState {
    word: Vec<String>,
    /// `(production, dot)` pairs.
    items: BTreeSet<(usize, usize)>,
    /// Nonterminals that derive exactly `word`.
    completed: BTreeSet<String>,
}

impl SraState {
    pub fn word(&self) -> ConfigWord {
        ConfigWord::from_tokens(self.word.iter().cloned())
    }

    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    pub fn is_complete(&self, nonterminal: &str) -> bool {
        self.completed.contains(nonterminal)
    }
}

/// Result of running a word through the automaton.
#[derive(Debug, Clone, PartialEq)]
pub struct Acceptance {
    pub accepted: bool,
    /// One state per token, starting at the initial state; present only when
    /// the word is accepted.
    pub run: Option<Vec<SraState>>,
}

/// Structural reconfiguration automaton built from a left-linear [`Srg`].
#[derive(Debug, Clone)]
pub struct Sra {
    srg: Srg,
    /// Productions whose right-hand side starts with a terminal (or is empty).
    base: Vec<usize>,
    /// Productions `X -> Y ...` grouped by their leading nonterminal `Y`.
    extensions: BTreeMap<String, Vec<usize>>,
    initial: SraState,
}

impl Sra {
    pub fn from_srg(g: &Srg) -> Result<Self> {
        g.validate()?;
        let mut base = Vec::new();
        let mut extensions: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in g.productions.iter().enumerate() {
            match p.rhs.first() {
                Some(first) if g.is_nonterminal(first) => {
                    extensions.entry(first.clone()).or_default().push(i)
                }
                _ => base.push(i),
            }
        }
        let mut sra = Sra {
            srg: g.clone(),
            base,
            extensions,
            initial: SraState {
                word: vec![g.initial.clone()],
                items: BTreeSet::new(),
                completed: BTreeSet::new(),
            },
        };
        let empty = sra.empty_state();
        if let Some(q0) = sra.step(&empty, &g.initial) {
            sra.initial = q0;
        }
        Ok(sra)
    }

    pub fn srg(&self) -> &Srg {
        &self.srg
    }

    /// The initial state; its word is the initial symbol.
    pub fn initial(&self) -> &SraState {
        &self.initial
    }

    fn empty_state(&self) -> SraState {
        let items = self.base.iter().map(|&p| (p, 0)).collect();
        let mut s = SraState { word: Vec::new(), items, completed: BTreeSet::new() };
        self.close(&mut s);
        s
    }

    fn close(&self, s: &mut SraState) {
        loop {
            let mut grew = false;
            let done: Vec<String> = s
                .items
                .iter()
                .filter(|(p, d)| *d == self.srg.productions[*p].rhs.len())
                .map(|(p, _)| self.srg.productions[*p].lhs.clone())
                .collect();
            for nt in done {
                if s.completed.insert(nt.clone()) {
                    grew = true;
                    for &p in self.extensions.get(&nt).into_iter().flatten() {
                        s.items.insert((p, 1));
                    }
                }
            }
            if !grew {
                break;
            }
        }
    }

    /// Appends one terminal token; `None` when no production can continue.
    pub fn step(&self, q: &SraState, z: &str) -> Option<SraState> {
        let productions = &self.srg.productions;
        let items: BTreeSet<(usize, usize)> = q
            .items
            .iter()
            .filter(|(p, d)| productions[*p].rhs.get(*d).map(String::as_str) == Some(z))
            .map(|&(p, d)| (p, d + 1))
            .collect();
        if items.is_empty() {
            return None;
        }
        let mut word = q.word.clone();
        word.push(z.to_string());
        let mut next = SraState { word, items, completed: BTreeSet::new() };
        self.close(&mut next);
        Some(next)
    }

    pub fn is_accepting(&self, q: &SraState) -> bool {
        q.completed.contains(&self.srg.start)
            && (self.srg.accept_any.is_empty()
                || q.word.iter().any(|t| self.srg.accept_any.contains(t)))
    }

    /// Runs `w` from the initial state.
    pub fn accepts(&self, w: &ConfigWord) -> Result<Acceptance> {
        for t in w.tokens() {
            match self.srg.kind(t) {
                Some(SymbolKind::Node(_)) | Some(SymbolKind::Edge) => {}
                _ => return Err(Error::Alphabet(t.clone())),
            }
        }
        let rejected = Acceptance { accepted: false, run: None };
        let Some((first, rest)) = w.tokens().split_first() else {
            return Ok(rejected);
        };
        if *first != self.srg.initial {
            return Ok(rejected);
        }
        let mut run = vec![self.initial.clone()];
        for z in rest {
            match self.step(run.last().expect("run is nonempty"), z) {
                Some(q) => run.push(q),
                None => return Ok(rejected),
            }
        }
        if self.is_accepting(run.last().expect("run is nonempty")) {
            Ok(Acceptance { accepted: true, run: Some(run) })
        } else {
            Ok(rejected)
        }
    }

    /// All states reachable from the initial state with at most `max_tokens`
    /// tokens, in breadth-first order.
    pub fn reachable(&self, max_tokens: usize) -> Vec<SraState> {
        if max_tokens == 0 {
            return Vec::new();
        }
        let alphabet = self.srg.alphabet();
        let mut out = vec![self.initial.clone()];
        let mut frontier = vec![self.initial.clone()];
        while let Some(q) = frontier.pop() {
            if q.len() >= max_tokens {
                continue;
            }
            for z in &alphabet {
                if let Some(next) = self.step(&q, z) {
                    out.push(next.clone());
                    frontier.push(next);
                }
            }
        }
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.word.cmp(&b.word)));
        out
    }

    /// Words of at most `max_tokens` tokens accepted by the automaton.
    pub fn language(&self, max_tokens: usize) -> BTreeSet<ConfigWord> {
        self.reachable(max_tokens)
            .into_iter()
            .filter(|q| self.is_accepting(q))
            .map(|q| q.word())
            .collect()
    }
}

/// Builds the automaton equivalent to `g`.
pub fn srg_to_sra(g: &Srg) -> Result<Sra> {
    Sra::from_srg(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Production;

    fn sra() -> Sra {
        Sra::from_srg(&Srg::manipulator()).unwrap()
    }

    fn word(s: &str) -> ConfigWord {
        ConfigWord::parse(s, &Srg::manipulator()).unwrap()
    }

    #[test]
    fn initial_state_is_base() {
        assert_eq!(sra().initial().word().to_string(), "B");
    }

    #[test]
    fn fig1_word_accepted_with_full_run() {
        let w = word("B ε JO ε JO ε JO ε L ε JO ε L ε JO ε EN");
        let a = sra().accepts(&w).unwrap();
        assert!(a.accepted);
        let run = a.run.unwrap();
        assert_eq!(run.len(), w.len());
        assert_eq!(run[0].word().to_string(), "B");
        assert_eq!(run.last().unwrap().word(), w);
    }

    #[test]
    fn rejections() {
        let a = sra();
        assert!(!a.accepts(&word("B")).unwrap().accepted);
        assert!(!a.accepts(&word("JO ε EN")).unwrap().accepted);
        assert!(!a.accepts(&word("B ε")).unwrap().accepted);
        assert!(!a.accepts(&word("B ε JO")).unwrap().accepted);
        assert!(!a.accepts(&word("")).unwrap().accepted);
    }

    #[test]
    fn nonterminal_token_is_alphabet_error() {
        let w = ConfigWord::from_tokens(["B", "ε", "N"]);
        assert_eq!(sra().accepts(&w), Err(Error::Alphabet("N".into())));
    }

    #[test]
    fn empty_production_set_has_only_initial_state() {
        let mut g = Srg::manipulator();
        g.productions.clear();
        let a = Sra::from_srg(&g).unwrap();
        assert_eq!(a.initial().word().to_string(), "B");
        let states = a.reachable(9);
        assert_eq!(states.len(), 1);
        assert!(a.language(9).is_empty());
    }

    #[test]
    fn malformed_production_is_grammar_error() {
        let mut g = Srg::manipulator();
        g.nonterminals.push("M".into());
        g.productions.push(Production::new("N", "M ε L"));
        assert!(matches!(Sra::from_srg(&g), Err(Error::Grammar(_))));
    }

    #[test]
    fn transitions_are_deterministic() {
        let a = sra();
        let q = a.initial().clone();
        assert_eq!(a.step(&q, "ε"), a.step(&q, "ε"));
        assert!(a.step(&q, "JO").is_none());
    }
}
