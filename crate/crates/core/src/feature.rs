//! Feature maps from histories to states.
//!
//! Two concrete forms: fixed-order maps (state = last `k` observations) and
//! complete suffix-free context trees (state = the unique member of a suffix
//! set that ends the observation string). Context trees support the
//! split/merge neighborhood used by stochastic search.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::history::History;

/// A state: a canonical observation string, or the distinguished absorbing
/// exploration state that no history ever maps to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateId {
    /// Observation indices in temporal order (oldest first); empty = ε.
    Context(Vec<usize>),
    Exploration,
}

impl StateId {
    pub fn empty() -> Self {
        StateId::Context(Vec::new())
    }

    pub fn from_obs(obs: &[usize]) -> Self {
        StateId::Context(obs.to_vec())
    }

    pub fn is_exploration(&self) -> bool {
        matches!(self, StateId::Exploration)
    }

    /// Renders the state over symbol labels; ε is written `-`.
    pub fn render(&self, obs: &Alphabet) -> String {
        match self {
            StateId::Exploration => "<e>".to_string(),
            StateId::Context(ids) if ids.is_empty() => "-".to_string(),
            StateId::Context(ids) => ids.iter().map(|&i| obs.label(i)).collect(),
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateId::Exploration => write!(f, "<e>"),
            StateId::Context(ids) if ids.is_empty() => write!(f, "-"),
            StateId::Context(ids) => {
                for id in ids {
                    write!(f, "{id}")?;
                }
                Ok(())
            }
        }
    }
}

/// State = the last `k` observations (shorter near the history start).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KOrderMap {
    k: usize,
}

impl KOrderMap {
    pub fn new(k: usize) -> Self {
        KOrderMap { k }
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn apply_to_obs(&self, obs: &[usize]) -> StateId {
        let n = obs.len();
        StateId::from_obs(&obs[n - self.k.min(n)..])
    }
}

/// A complete suffix-free set of observation strings.
///
/// No member is a proper suffix of another, and every long enough
/// observation string ends in exactly one member; equivalently the reversed
/// members are the leaves of a full `|O|`-ary tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextTreeMap {
    suffixes: BTreeSet<Vec<usize>>,
    obs_size: usize,
    max_len: usize,
}

impl ContextTreeMap {
    /// The root map `{ε}`: every history collapses to one state.
    pub fn root(obs_size: usize) -> Self {
        let mut suffixes = BTreeSet::new();
        suffixes.insert(Vec::new());
        ContextTreeMap { suffixes, obs_size, max_len: 0 }
    }

    /// Builds a map from an explicit suffix set, validating completeness and
    /// suffix-freeness.
    pub fn from_suffixes<I>(obs_size: usize, members: I) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<usize>>,
    {
        if obs_size == 0 {
            return Err(Error::InvalidSuffixSet("observation alphabet is empty".into()));
        }
        let mut suffixes = BTreeSet::new();
        for m in members {
            if let Some(&sym) = m.iter().find(|&&s| s >= obs_size) {
                return Err(Error::InvalidSuffixSet(format!(
                    "symbol index {sym} out of range for alphabet size {obs_size}"
                )));
            }
            if !suffixes.insert(m.clone()) {
                return Err(Error::InvalidSuffixSet(format!("duplicate member {m:?}")));
            }
        }
        if suffixes.is_empty() {
            return Err(Error::InvalidSuffixSet("no members".into()));
        }
        let max_len = suffixes.iter().map(Vec::len).max().unwrap_or(0);
        let map = ContextTreeMap { suffixes, obs_size, max_len };
        map.validate()?;
        Ok(map)
    }

    /// Checks the full-tree property on reversed members: every internal node
    /// of the reversed-prefix trie has all `|O|` children, members sit exactly
    /// at the leaves.
    fn validate(&self) -> Result<()> {
        #[derive(Default)]
        struct Node {
            children: Vec<Option<usize>>,
            member: bool,
        }
        let mut nodes: Vec<Node> = vec![Node { children: vec![None; self.obs_size], member: false }];
        for m in &self.suffixes {
            let mut cur = 0usize;
            for &sym in m.iter().rev() {
                if nodes[cur].member {
                    return Err(Error::InvalidSuffixSet(format!(
                        "member is a proper suffix of {m:?}"
                    )));
                }
                cur = match nodes[cur].children[sym] {
                    Some(next) => next,
                    None => {
                        nodes.push(Node { children: vec![None; self.obs_size], member: false });
                        let next = nodes.len() - 1;
                        let replaced = &mut nodes[cur];
                        replaced.children[sym] = Some(next);
                        next
                    }
                };
            }
            nodes[cur].member = true;
        }
        for (i, node) in nodes.iter().enumerate() {
            let child_count = node.children.iter().filter(|c| c.is_some()).count();
            if node.member && child_count > 0 {
                return Err(Error::InvalidSuffixSet(
                    "a member is a proper suffix of another member".into(),
                ));
            }
            if !node.member && child_count != self.obs_size {
                return Err(Error::InvalidSuffixSet(format!(
                    "incomplete set: internal node {i} has {child_count}/{} children",
                    self.obs_size
                )));
            }
        }
        Ok(())
    }

    pub fn obs_size(&self) -> usize {
        self.obs_size
    }

    pub fn len(&self) -> usize {
        self.suffixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suffixes.is_empty()
    }

    pub fn max_context_len(&self) -> usize {
        self.max_len
    }

    pub fn members(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.suffixes.iter()
    }

    pub fn contains(&self, ctx: &[usize]) -> bool {
        self.suffixes.contains(ctx)
    }

    /// Maps an observation string to its state: the unique member that ends
    /// it or, when the string is shorter than every candidate member, the
    /// whole string as a provisional state.
    pub fn apply_to_obs(&self, obs: &[usize]) -> StateId {
        let n = obs.len();
        for l in 0..=self.max_len.min(n) {
            if self.suffixes.contains(&obs[n - l..]) {
                return StateId::from_obs(&obs[n - l..]);
            }
        }
        StateId::from_obs(obs)
    }

    /// Splits context `s`: replaces it by its one-symbol extensions
    /// `{o·s : o ∈ O}`.
    pub fn split(&self, ctx: &[usize]) -> Result<ContextTreeMap> {
        if !self.suffixes.contains(ctx) {
            return Err(Error::UnknownContext(format!("{ctx:?}")));
        }
        let mut suffixes = self.suffixes.clone();
        suffixes.remove(ctx);
        for o in 0..self.obs_size {
            let mut child = Vec::with_capacity(ctx.len() + 1);
            child.push(o);
            child.extend_from_slice(ctx);
            suffixes.insert(child);
        }
        let max_len = self.max_len.max(ctx.len() + 1);
        let next = ContextTreeMap { suffixes, obs_size: self.obs_size, max_len };
        debug_assert!(next.validate().is_ok());
        Ok(next)
    }

    /// Merges the children `{o·s : o ∈ O}` back into `s`. All children must
    /// be present.
    pub fn merge(&self, ctx: &[usize]) -> Result<ContextTreeMap> {
        let children = self.children_of(ctx);
        if !children.iter().all(|c| self.suffixes.contains(c)) {
            return Err(Error::IllegalMerge(format!("{ctx:?}")));
        }
        let mut suffixes = self.suffixes.clone();
        for c in &children {
            suffixes.remove(c);
        }
        suffixes.insert(ctx.to_vec());
        let max_len = suffixes.iter().map(Vec::len).max().unwrap_or(0);
        let next = ContextTreeMap { suffixes, obs_size: self.obs_size, max_len };
        debug_assert!(next.validate().is_ok());
        Ok(next)
    }

    pub fn children_of(&self, ctx: &[usize]) -> Vec<Vec<usize>> {
        (0..self.obs_size)
            .map(|o| {
                let mut child = Vec::with_capacity(ctx.len() + 1);
                child.push(o);
                child.extend_from_slice(ctx);
                child
            })
            .collect()
    }

    /// Member at a deterministic position, for uniform sampling.
    pub fn member_at(&self, idx: usize) -> &Vec<usize> {
        self.suffixes.iter().nth(idx).expect("index checked by caller")
    }

    /// Draws the ΦImprove move: with probability 1/2 (p > 1/2) split a
    /// uniform member, otherwise try to merge the sibling set containing a
    /// uniform member. Draw order is member, then p.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> TreeMove {
        let member = self.member_at(rng.gen_range(0..self.len())).clone();
        let p: f64 = rng.gen();
        if p > 0.5 {
            TreeMove::Split(member)
        } else if member.is_empty() {
            // ε has no parent; degenerate merge keeps the map unchanged.
            TreeMove::Stay
        } else {
            let parent = member[1..].to_vec();
            if self.children_of(&parent).iter().all(|c| self.suffixes.contains(c)) {
                TreeMove::Merge(parent)
            } else {
                TreeMove::Stay
            }
        }
    }

    /// One random neighbor in the split/merge neighborhood; the input map
    /// itself when the drawn move is not applicable.
    pub fn random_neighbor<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextTreeMap {
        match self.propose(rng) {
            TreeMove::Split(ctx) => self.split(&ctx).expect("drawn from members"),
            TreeMove::Merge(parent) => self.merge(&parent).expect("children checked"),
            TreeMove::Stay => self.clone(),
        }
    }

    /// Renders the suffix set, one member per line over symbol labels,
    /// ε written `-`.
    pub fn render(&self, obs: &Alphabet) -> String {
        let mut out = String::new();
        for m in &self.suffixes {
            if m.is_empty() {
                out.push('-');
            } else {
                for &sym in m {
                    out.push_str(obs.label(sym));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// A split/merge move on a context tree. `Merge` names the parent context
/// whose children collapse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeMove {
    Split(Vec<usize>),
    Merge(Vec<usize>),
    Stay,
}

impl TreeMove {
    /// The move that undoes this one.
    pub fn inverse(&self) -> TreeMove {
        match self {
            TreeMove::Split(ctx) => TreeMove::Merge(ctx.clone()),
            TreeMove::Merge(ctx) => TreeMove::Split(ctx.clone()),
            TreeMove::Stay => TreeMove::Stay,
        }
    }
}

/// A feature map Φ: history → state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureMap {
    KOrder(KOrderMap),
    ContextTree(ContextTreeMap),
}

impl FeatureMap {
    pub fn k_order(k: usize) -> Self {
        FeatureMap::KOrder(KOrderMap::new(k))
    }

    pub fn context_tree(map: ContextTreeMap) -> Self {
        FeatureMap::ContextTree(map)
    }

    /// State of a raw observation string.
    pub fn apply_to_obs(&self, obs: &[usize]) -> StateId {
        match self {
            FeatureMap::KOrder(m) => m.apply_to_obs(obs),
            FeatureMap::ContextTree(m) => m.apply_to_obs(obs),
        }
    }

    /// State of a history; the history must hold at least one observation.
    pub fn apply(&self, h: &History) -> Result<StateId> {
        if h.is_empty() {
            return Err(Error::EmptyHistory);
        }
        Ok(self.apply_to_obs(h.observations()))
    }

    /// Longest observation tail the state can depend on.
    pub fn context_bound(&self) -> usize {
        match self {
            FeatureMap::KOrder(m) => m.order(),
            FeatureMap::ContextTree(m) => m.max_context_len(),
        }
    }

    /// States along the history: `s_t = Φ(h_t)` for `t = 1..=n`.
    pub fn states_along(&self, h: &History) -> Vec<StateId> {
        let obs = h.observations();
        (1..=obs.len()).map(|t| self.apply_to_obs(&obs[..t])).collect()
    }
}

/// Parses one suffix per line over the alphabet's labels (ε written `-`).
/// Blank lines and `#` comments are ignored. Within a line, labels are
/// matched greedily longest-first.
pub fn parse_suffix_set(text: &str, obs: &Alphabet) -> Result<ContextTreeMap> {
    let mut labels: Vec<(usize, &str)> = (0..obs.size()).map(|i| (i, obs.label(i))).collect();
    labels.sort_by_key(|(_, l)| std::cmp::Reverse(l.len()));
    let mut members = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "-" {
            members.push(Vec::new());
            continue;
        }
        let mut rest = line;
        let mut ctx = Vec::new();
        while !rest.is_empty() {
            match labels.iter().find(|(_, l)| rest.starts_with(l)) {
                Some(&(idx, l)) => {
                    ctx.push(idx);
                    rest = &rest[l.len()..];
                }
                None => {
                    return Err(Error::parse(lineno, format!("cannot match {rest:?} against observation labels")));
                }
            }
        }
        members.push(ctx);
    }
    ContextTreeMap::from_suffixes(obs.size(), members)
}
