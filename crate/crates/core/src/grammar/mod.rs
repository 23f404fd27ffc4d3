//! Module catalog, structural reconfiguration grammar and its automaton.
//!
//! Words are whitespace-separated token sequences such as `B ε JO ε L ε EN`;
//! the edge token `ε` is always written out.

mod automaton;
mod language;

pub use automaton::{srg_to_sra, Acceptance, Sra, SraState};
pub use language::{enumerate_language, enumerate_language_capped, DEFAULT_LANGUAGE_CAP};

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a node module contributes to the assembled robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleClass {
    Base,
    Joint,
    Link,
    Effector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSymbol {
    pub tag: String,
    pub class: ModuleClass,
    /// Parameter box for modules that carry a length parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Production {
    pub lhs: String,
    /// Right-hand side symbols. Nonterminals may only appear first.
    pub rhs: Vec<String>,
}

impl Production {
    pub fn new(lhs: &str, rhs: &str) -> Self {
        Production {
            lhs: lhs.to_string(),
            rhs: rhs.split_whitespace().map(str::to_string).collect(),
        }
    }
}

/// Structural reconfiguration grammar together with the accept predicate the
/// automaton uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Srg {
    pub nodes: Vec<NodeSymbol>,
    pub edges: Vec<String>,
    pub nonterminals: Vec<String>,
    pub productions: Vec<Production>,
    /// Initial node symbol every robot word starts with.
    pub initial: String,
    /// Nonterminal the derivation starts from.
    pub start: String,
    /// A terminal word is accepted when it contains at least one of these.
    pub accept_any: Vec<String>,
}

/// Whether a token is a node, an edge or a nonterminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    Node(ModuleClass),
    Edge,
    Nonterminal,
}

impl Srg {
    /// The planar multi-link manipulator grammar:
    /// `N -> B | N ε JO | N ε L | N ε EN`, initial symbol `B`.
    pub fn manipulator() -> Self {
        Srg {
            nodes: vec![
                NodeSymbol { tag: "B".into(), class: ModuleClass::Base, length_bounds: None },
                NodeSymbol { tag: "JO".into(), class: ModuleClass::Joint, length_bounds: None },
                NodeSymbol {
                    tag: "L".into(),
                    class: ModuleClass::Link,
                    length_bounds: Some([0.2, 6.0]),
                },
                NodeSymbol { tag: "EN".into(), class: ModuleClass::Effector, length_bounds: None },
            ],
            edges: vec!["ε".into()],
            nonterminals: vec!["N".into()],
            productions: vec![
                Production::new("N", "B"),
                Production::new("N", "N ε JO"),
                Production::new("N", "N ε L"),
                Production::new("N", "N ε EN"),
            ],
            initial: "B".into(),
            start: "N".into(),
            accept_any: vec!["EN".into()],
        }
    }

    pub fn kind(&self, tag: &str) -> Option<SymbolKind> {
        if let Some(n) = self.nodes.iter().find(|n| n.tag == tag) {
            return Some(SymbolKind::Node(n.class));
        }
        if self.edges.iter().any(|e| e == tag) {
            return Some(SymbolKind::Edge);
        }
        if self.nonterminals.iter().any(|n| n == tag) {
            return Some(SymbolKind::Nonterminal);
        }
        None
    }

    pub fn node(&self, tag: &str) -> Option<&NodeSymbol> {
        self.nodes.iter().find(|n| n.tag == tag)
    }

    pub fn is_terminal(&self, tag: &str) -> bool {
        matches!(self.kind(tag), Some(SymbolKind::Node(_)) | Some(SymbolKind::Edge))
    }

    pub fn is_nonterminal(&self, tag: &str) -> bool {
        matches!(self.kind(tag), Some(SymbolKind::Nonterminal))
    }

    /// Terminal alphabet Z in declaration order: node symbols, then edges.
    pub fn alphabet(&self) -> Vec<String> {
        self.nodes
            .iter()
            .map(|n| n.tag.clone())
            .chain(self.edges.iter().cloned())
            .collect()
    }

    /// Checks the declaration invariants: disjoint symbol sets, `initial` a
    /// node symbol, every production over declared symbols and left-linear,
    /// every nonterminal used on a right-hand side defined by some rule.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for tag in self
            .nodes
            .iter()
            .map(|n| &n.tag)
            .chain(self.edges.iter())
            .chain(self.nonterminals.iter())
        {
            if tag.is_empty() || tag.chars().any(char::is_whitespace) {
                return Err(Error::Grammar(format!("invalid symbol `{tag}`")));
            }
            if !seen.insert(tag.clone()) {
                return Err(Error::Grammar(format!("symbol `{tag}` declared twice")));
            }
        }
        if self.node(&self.initial).is_none() {
            return Err(Error::Grammar(format!(
                "initial symbol `{}` is not a node symbol",
                self.initial
            )));
        }
        if !self.is_nonterminal(&self.start) {
            return Err(Error::Grammar(format!(
                "start symbol `{}` is not a nonterminal",
                self.start
            )));
        }
        for n in &self.nodes {
            if let Some([lo, hi]) = n.length_bounds {
                if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
                    return Err(Error::Grammar(format!(
                        "bad length bounds [{lo}, {hi}] for `{}`",
                        n.tag
                    )));
                }
            } else if n.class == ModuleClass::Link {
                return Err(Error::Grammar(format!("link `{}` has no length bounds", n.tag)));
            }
        }
        let defined: BTreeSet<&str> = self.productions.iter().map(|p| p.lhs.as_str()).collect();
        for p in &self.productions {
            if !self.is_nonterminal(&p.lhs) {
                return Err(Error::Grammar(format!(
                    "production left-hand side `{}` is not a nonterminal",
                    p.lhs
                )));
            }
            for (i, sym) in p.rhs.iter().enumerate() {
                match self.kind(sym) {
                    None => {
                        return Err(Error::Grammar(format!(
                            "production {} -> {} uses undeclared symbol `{sym}`",
                            p.lhs,
                            p.rhs.join(" ")
                        )))
                    }
                    Some(SymbolKind::Nonterminal) => {
                        if i != 0 {
                            return Err(Error::Grammar(format!(
                                "production {} -> {} is not left-linear",
                                p.lhs,
                                p.rhs.join(" ")
                            )));
                        }
                        if !defined.contains(sym.as_str()) {
                            return Err(Error::Grammar(format!(
                                "nonterminal `{sym}` has no rule"
                            )));
                        }
                    }
                    Some(_) => {}
                }
            }
        }
        for tag in &self.accept_any {
            if !self.is_terminal(tag) {
                return Err(Error::Grammar(format!("accept symbol `{tag}` is not terminal")));
            }
        }
        Ok(())
    }

    pub fn link_bounds(&self, tag: &str) -> Option<[f64; 2]> {
        self.node(tag).and_then(|n| n.length_bounds)
    }
}

/// On-disk catalog shape (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    initial: String,
    start: String,
    edges: Vec<String>,
    nonterminals: Vec<String>,
    #[serde(default)]
    accept_any: Vec<String>,
    nodes: Vec<NodeSymbol>,
    productions: Vec<ProductionFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProductionFile {
    lhs: String,
    rhs: String,
}

/// A module catalog: the grammar plus per-module parameter spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub srg: Srg,
}

impl Catalog {
    pub fn manipulator() -> Self {
        Catalog { srg: Srg::manipulator() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| Error::Parse(format!("catalog: {e}")))?;
        let srg = Srg {
            nodes: file.nodes,
            edges: file.edges,
            nonterminals: file.nonterminals,
            productions: file
                .productions
                .iter()
                .map(|p| Production::new(&p.lhs, &p.rhs))
                .collect(),
            initial: file.initial,
            start: file.start,
            accept_any: file.accept_any,
        };
        srg.validate()?;
        Ok(Catalog { srg })
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let s = &self.srg;
        let file = CatalogFile {
            initial: s.initial.clone(),
            start: s.start.clone(),
            edges: s.edges.clone(),
            nonterminals: s.nonterminals.clone(),
            accept_any: s.accept_any.clone(),
            nodes: s.nodes.clone(),
            productions: s
                .productions
                .iter()
                .map(|p| ProductionFile { lhs: p.lhs.clone(), rhs: p.rhs.join(" ") })
                .collect(),
        };
        toml::to_string(&file).expect("catalog serializes")
    }
}

/// A structural configuration: a sequence of terminal tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigWord(Vec<String>);

impl ConfigWord {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ConfigWord(tokens.into_iter().map(Into::into).collect())
    }

    /// Parses a whitespace-separated word, rejecting tokens outside Z.
    pub fn parse(text: &str, srg: &Srg) -> Result<Self> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        for t in &tokens {
            if !srg.is_terminal(t) {
                return Err(Error::Alphabet(t.clone()));
            }
        }
        Ok(ConfigWord(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.iter().any(|t| t == tag)
    }

    /// Checks node/edge alternation, starting and ending with a node.
    pub fn check_alternation(&self, srg: &Srg) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Structure("empty word".into()));
        }
        if self.0.len().is_multiple_of(2) {
            return Err(Error::Structure(format!("`{self}` does not end with a node token")));
        }
        for (i, t) in self.0.iter().enumerate() {
            let kind = srg.kind(t).ok_or_else(|| Error::Alphabet(t.clone()))?;
            let ok = match kind {
                SymbolKind::Node(_) => i % 2 == 0,
                SymbolKind::Edge => i % 2 == 1,
                SymbolKind::Nonterminal => false,
            };
            if !ok {
                return Err(Error::Structure(format!(
                    "token {i} (`{t}`) breaks node/edge alternation in `{self}`"
                )));
            }
        }
        Ok(())
    }

    /// True when the word is a robot: alternating, starts with the initial
    /// symbol and contains it exactly once.
    pub fn is_robot(&self, srg: &Srg) -> bool {
        self.check_alternation(srg).is_ok()
            && self.0.first() == Some(&srg.initial)
            && self.0.iter().filter(|t| **t == srg.initial).count() == 1
    }

    /// Tags of the link modules in assembly order.
    pub fn links<'a>(&'a self, srg: &'a Srg) -> impl Iterator<Item = &'a str> + 'a {
        self.0
            .iter()
            .filter(move |t| matches!(srg.kind(t), Some(SymbolKind::Node(ModuleClass::Link))))
            .map(String::as_str)
    }
}

impl fmt::Display for ConfigWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Number of link modules in `w`; the dimension of its parameter vector.
pub fn link_count(w: &ConfigWord, srg: &Srg) -> usize {
    w.links(srg).count()
}

/// A node- and edge-labeled directed graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub nodes: Vec<String>,
    /// `(from, to, label)`.
    pub edges: Vec<(usize, usize, String)>,
}

impl LabeledGraph {
    pub fn is_chain(&self) -> bool {
        self.edges.len() + 1 == self.nodes.len()
            && self
                .edges
                .iter()
                .enumerate()
                .all(|(i, (a, b, _))| *a == i && *b == i + 1)
    }
}

pub fn word_to_graph(w: &ConfigWord, srg: &Srg) -> Result<LabeledGraph> {
    w.check_alternation(srg)?;
    let toks = w.tokens();
    let nodes = toks.iter().step_by(2).cloned().collect();
    let edges = toks
        .iter()
        .skip(1)
        .step_by(2)
        .enumerate()
        .map(|(i, e)| (i, i + 1, e.clone()))
        .collect();
    Ok(LabeledGraph { nodes, edges })
}

pub fn graph_to_word(g: &LabeledGraph) -> Result<ConfigWord> {
    if g.nodes.is_empty() {
        return Err(Error::Structure("graph has no nodes".into()));
    }
    let mut edges = g.edges.clone();
    edges.sort_by_key(|e| e.0);
    let chain = LabeledGraph { nodes: g.nodes.clone(), edges };
    if !chain.is_chain() {
        return Err(Error::Structure("graph is not a chain".into()));
    }
    let mut tokens = vec![chain.nodes[0].clone()];
    for (i, (_, _, label)) in chain.edges.iter().enumerate() {
        tokens.push(label.clone());
        tokens.push(chain.nodes[i + 1].clone());
    }
    Ok(ConfigWord(tokens))
}
