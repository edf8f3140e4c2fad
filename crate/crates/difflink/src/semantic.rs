//! Prompt parsing, knowledge-graph similarity and user grouping.
//!
//! Prompts are matched against a small concept graph through a surface-word
//! lexicon. Similarity between two prompts is the mean, over best-matched
//! concept pairs, of 1 / (1 + hop distance) in the graph; groups form by
//! greedy agglomeration around the first unassigned prompt so clustering is
//! deterministic in input order.

use crate::diffusion::Condition;
use crate::error::{Error, Result};
use std::collections::{HashMap, VecDeque};

/// Undirected concept graph plus the word lexicon used for prompt matching.
#[derive(Debug, Clone)]
pub struct ConceptGraph {
    ids: Vec<String>,
    labels: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
    lexicon: Vec<(String, usize)>, // surface word -> node, sorted by word
}

impl ConceptGraph {
    pub fn new() -> Self {
        ConceptGraph {
            ids: Vec::new(),
            labels: Vec::new(),
            index: HashMap::new(),
            adjacency: Vec::new(),
            lexicon: Vec::new(),
        }
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn label(&self, id: &str) -> Option<&str> {
        self.index.get(id).map(|&i| self.labels[i].as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adjacency.iter().enumerate() {
            for &b in nbrs {
                if a < b {
                    out.push((self.ids[a].clone(), self.ids[b].clone()));
                }
            }
        }
        out
    }

    pub fn lexicon_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.lexicon
            .iter()
            .map(|(w, i)| (w.as_str(), self.ids[*i].as_str()))
    }

    fn push_node(&mut self, id: &str, label: &str) -> Result<usize> {
        if self.index.contains_key(id) {
            return Err(Error::domain(format!("duplicate concept id {id:?}")));
        }
        let idx = self.ids.len();
        self.ids.push(id.to_string());
        self.labels.push(label.to_string());
        self.index.insert(id.to_string(), idx);
        self.adjacency.push(Vec::new());
        Ok(idx)
    }

    fn push_edge(&mut self, a: &str, b: &str) -> Result<()> {
        let (&ia, &ib) = match (self.index.get(a), self.index.get(b)) {
            (Some(ia), Some(ib)) => (ia, ib),
            _ => {
                return Err(Error::domain(format!(
                    "edge ({a}, {b}) references a missing node"
                )))
            }
        };
        if ia == ib {
            return Err(Error::domain(format!("self-loop on {a:?}")));
        }
        if !self.adjacency[ia].contains(&ib) {
            self.adjacency[ia].push(ib);
            self.adjacency[ib].push(ia);
        }
        Ok(())
    }

    fn push_lexicon(&mut self, word: &str, id: &str) -> Result<()> {
        let &idx = self.index.get(id).ok_or_else(|| {
            Error::domain(format!("lexicon word {word:?} maps to missing node {id:?}"))
        })?;
        let word = word.to_lowercase();
        match self
            .lexicon
            .binary_search_by(|(w, _)| w.as_str().cmp(&word))
        {
            Ok(_) => Err(Error::domain(format!("duplicate lexicon word {word:?}"))),
            Err(pos) => {
                self.lexicon.insert(pos, (word, idx));
                Ok(())
            }
        }
    }

    fn lookup_word(&self, word: &str) -> Option<usize> {
        self.lexicon
            .binary_search_by(|(w, _)| w.as_str().cmp(word))
            .ok()
            .map(|pos| self.lexicon[pos].1)
    }

    /// Hop distances from `from` to every node; usize::MAX = unreachable.
    fn distances(&self, from: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.ids.len()];
        dist[from] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Extend with a node and its edges; existing paths are untouched so
    /// prior similarities never decrease. The node id itself becomes a
    /// lexicon word.
    pub fn add_concept(&self, id: &str, label: &str, edges: &[&str]) -> Result<ConceptGraph> {
        let mut next = self.clone();
        next.push_node(id, label)?;
        for other in edges {
            next.push_edge(id, other)?;
        }
        next.push_lexicon(id, id)?;
        Ok(next)
    }

    /// Parse the structured-text asset format:
    /// `schema_version = 1`, then `node <id> [label...]`,
    /// `edge <a> <b>`, `lex <word> <id>` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<ConceptGraph> {
        let mut graph = ConceptGraph::new();
        let mut saw_version = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            if let Some(rest) = line.strip_prefix("schema_version") {
                let value = rest.trim_start().strip_prefix('=').map(str::trim);
                if value != Some("1") {
                    return Err(err(format!("unsupported schema_version {value:?}")));
                }
                saw_version = true;
                continue;
            }
            if !saw_version {
                return Err(err("file must start with schema_version = 1".into()));
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("node") => {
                    let id = parts.next().ok_or_else(|| err("node needs an id".into()))?;
                    let label = parts.collect::<Vec<_>>().join(" ");
                    let label = if label.is_empty() { id } else { &label };
                    graph.push_node(id, label).map_err(|e| err(e.to_string()))?;
                }
                Some("edge") => {
                    let a = parts
                        .next()
                        .ok_or_else(|| err("edge needs two ids".into()))?;
                    let b = parts
                        .next()
                        .ok_or_else(|| err("edge needs two ids".into()))?;
                    graph.push_edge(a, b).map_err(|e| err(e.to_string()))?;
                }
                Some("lex") => {
                    let word = parts
                        .next()
                        .ok_or_else(|| err("lex needs word and id".into()))?;
                    let id = parts
                        .next()
                        .ok_or_else(|| err("lex needs word and id".into()))?;
                    graph
                        .push_lexicon(word, id)
                        .map_err(|e| err(e.to_string()))?;
                }
                Some(other) => return Err(err(format!("unknown directive {other:?}"))),
                None => unreachable!(),
            }
        }
        if graph.ids.is_empty() {
            return Err(Error::domain("graph has no nodes"));
        }
        Ok(graph)
    }

    /// Render back to the asset format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("schema_version = 1\n");
        for (id, label) in self.ids.iter().zip(&self.labels) {
            out.push_str(&format!("node {id} {label}\n"));
        }
        for (a, b) in self.edges() {
            out.push_str(&format!("edge {a} {b}\n"));
        }
        for (w, id) in self.lexicon_entries() {
            out.push_str(&format!("lex {w} {id}\n"));
        }
        out
    }
}

impl Default for ConceptGraph {
    fn default() -> Self {
        Self::new()
    }
}

/// The concept taxonomy shipped with the simulator: object branches under
/// a common root plus the furniture/place context concepts the stock
/// prompts use. Lives in assets/default_graph.txt, same schema as
/// user-supplied graph files.
pub const DEFAULT_GRAPH_TEXT: &str = include_str!("../assets/default_graph.txt");

pub fn default_graph() -> ConceptGraph {
    ConceptGraph::parse(DEFAULT_GRAPH_TEXT).expect("builtin graph is well-formed")
}

/// A parsed prompt: matched concepts in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub user: String,
    pub text: String,
    pub concepts: Vec<String>,
}

impl PromptSpec {
    /// The concept the prompt is *about*: its first matched concept.
    pub fn object_concept(&self) -> &str {
        &self.concepts[0]
    }

    /// The prompt's sampling condition: full weight on the object concept,
    /// `context_weight` on every later one, normalized.
    pub fn condition(&self, context_weight: f64) -> Result<Condition> {
        Condition::weighted(
            self.concepts
                .iter()
                .enumerate()
                .map(|(i, c)| (c.clone(), if i == 0 { 1.0 } else { context_weight })),
        )
    }
}

/// Case-insensitive whole-word lexicon matching; unknown words are ignored,
/// matched concepts are deduplicated in order of first appearance.
pub fn parse_prompt(user: &str, text: &str, graph: &ConceptGraph) -> Result<PromptSpec> {
    if text.trim().is_empty() {
        return Err(Error::UnschedulablePrompt(text.to_string()));
    }
    let lower = text.to_lowercase();
    let mut concepts: Vec<String> = Vec::new();
    for word in lower.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() {
            continue;
        }
        if let Some(idx) = graph.lookup_word(word) {
            let id = &graph.ids[idx];
            if !concepts.contains(id) {
                concepts.push(id.clone());
            }
        }
    }
    if concepts.is_empty() {
        return Err(Error::UnschedulablePrompt(text.to_string()));
    }
    Ok(PromptSpec {
        user: user.to_string(),
        text: text.to_string(),
        concepts,
    })
}

/// Mean over best-matched concept pairs of 1 / (1 + hop distance),
/// symmetrized; unreachable pairs contribute 0.
pub fn similarity(a: &PromptSpec, b: &PromptSpec, graph: &ConceptGraph) -> f64 {
    let directed = |from: &PromptSpec, to: &PromptSpec| -> f64 {
        let mut total = 0.0;
        for ca in &from.concepts {
            let Some(&ia) = graph.index.get(ca) else {
                continue;
            };
            let dist = graph.distances(ia);
            let best = to
                .concepts
                .iter()
                .filter_map(|cb| graph.index.get(cb))
                .map(|&ib| match dist[ib] {
                    usize::MAX => 0.0,
                    d => 1.0 / (1.0 + d as f64),
                })
                .fold(0.0f64, f64::max);
            total += best;
        }
        total / from.concepts.len() as f64
    };
    0.5 * (directed(a, b) + directed(b, a))
}

/// One group of a cluster assignment; the leader is its first member.
#[derive(Debug, Clone)]
pub struct ClusterGroup {
    pub members: Vec<PromptSpec>,
}

impl ClusterGroup {
    pub fn leader(&self) -> &PromptSpec {
        &self.members[0]
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.user.as_str())
    }
}

/// A partition of the prompts into groups.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub groups: Vec<ClusterGroup>,
}

impl ClusterAssignment {
    /// One group holding all prompts, first prompt leading. Used to force
    /// grouping past the similarity threshold.
    pub fn single_group(prompts: Vec<PromptSpec>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::domain("cannot group zero prompts"));
        }
        Ok(ClusterAssignment {
            groups: vec![ClusterGroup { members: prompts }],
        })
    }
}

/// Greedy agglomeration: the first unassigned prompt seeds a group and leads
/// it; every later unassigned prompt whose similarity to the leader reaches
/// `threshold` joins.
pub fn cluster(
    prompts: &[PromptSpec],
    threshold: f64,
    graph: &ConceptGraph,
) -> Result<ClusterAssignment> {
    if prompts.is_empty() {
        return Err(Error::domain("cannot group zero prompts"));
    }
    let mut assigned = vec![false; prompts.len()];
    let mut groups = Vec::new();
    for i in 0..prompts.len() {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let mut members = vec![prompts[i].clone()];
        for j in i + 1..prompts.len() {
            if !assigned[j] && similarity(&prompts[i], &prompts[j], graph) >= threshold {
                assigned[j] = true;
                members.push(prompts[j].clone());
            }
        }
        groups.push(ClusterGroup { members });
    }
    Ok(ClusterAssignment { groups })
}

/// How a group's shared condition is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharedPolicy {
    /// The leader's own prompt drives the shared phase.
    Leader,
    /// Every member's concepts, uniformly weighted.
    Union,
}

/// The condition a group's shared phase runs under.
pub fn shared_condition(
    group: &ClusterGroup,
    policy: SharedPolicy,
    context_weight: f64,
) -> Result<Condition> {
    if group.members.is_empty() {
        return Err(Error::domain("empty group has no shared condition"));
    }
    match policy {
        SharedPolicy::Leader => group.leader().condition(context_weight),
        SharedPolicy::Union => {
            let mut all: Vec<String> = Vec::new();
            for m in &group.members {
                for c in &m.concepts {
                    if !all.contains(c) {
                        all.push(c.clone());
                    }
                }
            }
            Condition::uniform(all)
        }
    }
}
