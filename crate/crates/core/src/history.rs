//! Interaction histories and their CSV trace persistence.
//!
//! A history is the record `o_1 a_1 r_1 ... o_{n-1} a_{n-1} r_{n-1} o_n`:
//! `n` observations and `n-1` completed (action, reward) steps, where the
//! reward of step `t` is the one delivered together with observation
//! `o_{t+1}`. Histories parsed from a trace whose final line carries an
//! action and reward keep that dangling step; it never enters transition
//! counts because its destination observation is missing.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::alphabet::{Alphabet, RewardAlphabet};
use crate::error::{Error, Result};

/// Immutable-by-convention interaction record over index alphabets.
///
/// `append` returns an extended copy and never touches the receiver; the
/// in-place [`History::push`] exists for the agent loop that owns its
/// history exclusively.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct History {
    obs: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<usize>,
    obs_size: usize,
    action_size: usize,
    reward_size: usize,
}

impl History {
    /// Empty history over alphabets of the given sizes.
    pub fn new(obs_size: usize, action_size: usize, reward_size: usize) -> Self {
        History {
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            obs_size,
            action_size,
            reward_size,
        }
    }

    /// Empty history sized after the given alphabets.
    pub fn for_alphabets(obs: &Alphabet, actions: &Alphabet, rewards: &RewardAlphabet) -> Self {
        History::new(obs.size(), actions.size(), rewards.size())
    }

    /// Number of observations, the paper-time `n`.
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Number of completed (action, reward) steps.
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn observations(&self) -> &[usize] {
        &self.obs
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[usize] {
        &self.rewards
    }

    pub fn obs_size(&self) -> usize {
        self.obs_size
    }

    pub fn action_size(&self) -> usize {
        self.action_size
    }

    pub fn reward_size(&self) -> usize {
        self.reward_size
    }

    fn check(&self, a: usize, r: usize, o: usize) -> Result<()> {
        if o >= self.obs_size {
            return Err(Error::IndexOutOfRange { kind: "observation", index: o, size: self.obs_size });
        }
        if a >= self.action_size {
            return Err(Error::IndexOutOfRange { kind: "action", index: a, size: self.action_size });
        }
        if r >= self.reward_size {
            return Err(Error::IndexOutOfRange { kind: "reward", index: r, size: self.reward_size });
        }
        Ok(())
    }

    /// Extends the history by one cycle: action `a` and reward `r` complete
    /// the current step, `o` is the next observation. Returns the extended
    /// copy; the receiver is left unchanged.
    ///
    /// On an empty history there is no step to complete, so only `o` is
    /// recorded (the base case: a history holding a lone first observation).
    pub fn append(&self, a: usize, r: usize, o: usize) -> Result<History> {
        let mut next = self.clone();
        next.push(a, r, o)?;
        Ok(next)
    }

    /// In-place version of [`History::append`].
    pub fn push(&mut self, a: usize, r: usize, o: usize) -> Result<()> {
        self.check(a, r, o)?;
        if self.actions.len() == self.obs.len() && !self.obs.is_empty() {
            return Err(Error::Internal(
                "cannot extend a history that ends on an unresolved step".into(),
            ));
        }
        if !self.obs.is_empty() {
            self.actions.push(a);
            self.rewards.push(r);
        }
        self.obs.push(o);
        Ok(())
    }

    /// Records the first observation of a fresh history.
    pub fn push_first(&mut self, o: usize) -> Result<()> {
        if !self.obs.is_empty() {
            return Err(Error::Internal("push_first on a non-empty history".into()));
        }
        if o >= self.obs_size {
            return Err(Error::IndexOutOfRange { kind: "observation", index: o, size: self.obs_size });
        }
        self.obs.push(o);
        Ok(())
    }

    /// The last `min(k, n)` observations in temporal order.
    pub fn suffix_observations(&self, k: usize) -> &[usize] {
        let n = self.obs.len();
        &self.obs[n - k.min(n)..]
    }

    /// Writes the trace CSV: header `t,o,a,r`, one line per step, labels from
    /// the given alphabets. The final line omits `a,r` when the history ends
    /// on a trailing observation.
    pub fn write_trace<W: Write>(
        &self,
        obs: &Alphabet,
        actions: &Alphabet,
        rewards: &RewardAlphabet,
        mut out: W,
    ) -> Result<()> {
        writeln!(out, "t,o,a,r")?;
        for t in 0..self.obs.len() {
            if t < self.actions.len() {
                writeln!(
                    out,
                    "{},{},{},{}",
                    t + 1,
                    obs.label(self.obs[t]),
                    actions.label(self.actions[t]),
                    rewards.label(self.rewards[t])
                )?;
            } else {
                writeln!(out, "{},{}", t + 1, obs.label(self.obs[t]))?;
            }
        }
        Ok(())
    }

    /// The trace CSV as a string.
    pub fn trace_string(
        &self,
        obs: &Alphabet,
        actions: &Alphabet,
        rewards: &RewardAlphabet,
    ) -> String {
        let mut buf = Vec::new();
        self.write_trace(obs, actions, rewards, &mut buf)
            .expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("labels are valid UTF-8")
    }
}

/// A parsed trace: the history together with the alphabets derived from it.
#[derive(Debug, Clone)]
pub struct TraceData {
    pub observations: Alphabet,
    pub actions: Alphabet,
    pub rewards: RewardAlphabet,
    pub history: History,
}

/// Orders labels numerically when every label parses as a number,
/// lexicographically otherwise, so derived indices do not depend on the
/// order in which symbols first appear in a file.
fn canonical_order(mut labels: Vec<String>) -> Vec<String> {
    let all_numeric = labels.iter().all(|l| l.parse::<f64>().is_ok());
    if all_numeric {
        labels.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.partial_cmp(&y).unwrap().then_with(|| a.cmp(b))
        });
    } else {
        labels.sort();
    }
    labels.dedup();
    labels
}

/// Parses a trace CSV produced by [`History::write_trace`] (or by hand).
///
/// Alphabets are derived from the labels seen in the file, in canonical
/// order. Reward values are the labels parsed as numbers when all of them
/// are numeric, else the symbol index.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<TraceData> {
    struct Row {
        line: usize,
        o: String,
        a: Option<(String, String)>,
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break (i + 1, line);
            }
            None => return Err(Error::parse(0, "empty trace file")),
        }
    };
    let header_fields: Vec<&str> = header.1.trim().split(',').collect();
    if header_fields != ["t", "o", "a", "r"] {
        return Err(Error::parse(header.0, format!("expected header `t,o,a,r`, got {:?}", header.1.trim())));
    }

    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let t: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad time index {:?}", fields[0])))?;
        if t != rows.len() + 1 {
            return Err(Error::parse(lineno, format!("expected t={}, got t={}", rows.len() + 1, t)));
        }
        match fields.len() {
            2 => rows.push(Row { line: lineno, o: fields[1].trim().to_string(), a: None }),
            4 => {
                let (o, a, r) = (fields[1].trim(), fields[2].trim(), fields[3].trim());
                if a.is_empty() && r.is_empty() {
                    rows.push(Row { line: lineno, o: o.to_string(), a: None });
                } else if a.is_empty() || r.is_empty() {
                    return Err(Error::parse(lineno, "action and reward must both be present or both absent"));
                } else {
                    rows.push(Row {
                        line: lineno,
                        o: o.to_string(),
                        a: Some((a.to_string(), r.to_string())),
                    });
                }
            }
            n => return Err(Error::parse(lineno, format!("expected 2 or 4 fields, got {n}"))),
        }
    }
    if rows.is_empty() {
        return Err(Error::parse(0, "trace has no steps"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.a.is_none() && i + 1 != rows.len() {
            return Err(Error::parse(row.line, "only the final line may omit a,r"));
        }
    }

    let obs_labels = canonical_order(rows.iter().map(|r| r.o.clone()).collect());
    let act_labels =
        canonical_order(rows.iter().filter_map(|r| r.a.as_ref().map(|(a, _)| a.clone())).collect());
    let rew_labels =
        canonical_order(rows.iter().filter_map(|r| r.a.as_ref().map(|(_, r)| r.clone())).collect());
    let observations = Alphabet::new(obs_labels)?;
    // A single-row trace has no actions/rewards; fall back to one dummy symbol.
    let actions = if act_labels.is_empty() { Alphabet::new(["0"])? } else { Alphabet::new(act_labels)? };
    let rewards = if rew_labels.is_empty() {
        RewardAlphabet::from_numeric_labels(["0"])?
    } else if rew_labels.iter().all(|l| l.parse::<f64>().is_ok()) {
        RewardAlphabet::from_numeric_labels(rew_labels)?
    } else {
        let alphabet = Alphabet::new(rew_labels)?;
        let values = (0..alphabet.size()).map(|i| i as f64).collect();
        RewardAlphabet::new(alphabet, values)?
    };

    let mut history = History::for_alphabets(&observations, &actions, &rewards);
    for row in &rows {
        let o = observations.index_of(&row.o).expect("label collected above");
        match &row.a {
            Some((a, r)) => {
                let a = actions.index_of(a).expect("label collected above");
                let r = rewards.index_of(r).expect("label collected above");
                if history.is_empty() {
                    history.push_first(o)?;
                    history.actions.push(a);
                    history.rewards.push(r);
                } else {
                    // push() appends (a, r) of the *previous* row; reorder by
                    // buffering: the row's own (a, r) follow its observation.
                    history.obs.push(o);
                    history.actions.push(a);
                    history.rewards.push(r);
                }
            }
            None => {
                if history.is_empty() {
                    history.push_first(o)?;
                } else {
                    history.obs.push(o);
                }
            }
        }
    }
    Ok(TraceData { observations, actions, rewards, history })
}

/// Convenience wrapper over [`parse_trace`] for in-memory strings.
pub fn parse_trace_str(text: &str) -> Result<TraceData> {
    parse_trace(text.as_bytes())
}

/// Renders a history compactly for debugging: `o1 a1 r1 o2 ...` labels.
pub fn render_history(h: &History, obs: &Alphabet, actions: &Alphabet, rewards: &RewardAlphabet) -> String {
    let mut s = String::new();
    for t in 0..h.len() {
        if t > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{}", obs.label(h.observations()[t]));
        if t < h.actions().len() {
            let _ = write!(s, " {} {}", actions.label(h.actions()[t]), rewards.label(h.rewards()[t]));
        }
    }
    s
}
