//! Class inventories, label sequences and the two state trellises (CTC and
//! TCS) built from them, plus the collapse function mapping frame-level class
//! paths back to label sequences.
//!
//! A CTC trellis interleaves a blank before, between and after the labels
//! (`2U + 1` states). A TCS trellis expands every label into
//! `(background, foreground, character)` and closes with a trailing
//! background (`3U + 1` states). Foregrounds are mandatory before every
//! character. The outer backgrounds are optional by default; with
//! [`TcsEnds::Required`] a path must start and end in background.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which trellis topology a loss, decoder or model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Ctc,
    Tcs,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Ctc => f.write_str("ctc"),
            TopologyKind::Tcs => f.write_str("tcs"),
        }
    }
}

/// Whether a TCS path may start at the first foreground and end at the last
/// character, or must start and end in background.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TcsEnds {
    #[default]
    Optional,
    Required,
}

/// Topology kind plus its trellis options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Topology {
    pub kind: TopologyKind,
    pub tcs_ends: TcsEnds,
}

impl Topology {
    pub fn new(kind: TopologyKind, tcs_ends: TcsEnds) -> Self {
        Topology { kind, tcs_ends }
    }
}

impl From<TopologyKind> for Topology {
    fn from(kind: TopologyKind) -> Self {
        Topology {
            kind,
            tcs_ends: TcsEnds::Optional,
        }
    }
}

/// Role a class or trellis state plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Blank,
    Background,
    Foreground,
    Character,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Blank => "blank",
            Role::Background => "background",
            Role::Foreground => "foreground",
            Role::Character => "character",
        };
        f.write_str(s)
    }
}

#[derive(Serialize, Deserialize)]
struct AlphabetRepr {
    names: Vec<String>,
    blank: Option<usize>,
    background: Option<usize>,
    foreground: Option<usize>,
}

/// Ordered class inventory with optional reserved special classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AlphabetRepr", into = "AlphabetRepr")]
pub struct Alphabet {
    names: Vec<String>,
    blank: Option<usize>,
    background: Option<usize>,
    foreground: Option<usize>,
}

impl TryFrom<AlphabetRepr> for Alphabet {
    type Error = Error;

    fn try_from(r: AlphabetRepr) -> Result<Self> {
        Alphabet::new(r.names, r.blank, r.background, r.foreground)
    }
}

impl From<Alphabet> for AlphabetRepr {
    fn from(a: Alphabet) -> Self {
        AlphabetRepr {
            names: a.names,
            blank: a.blank,
            background: a.background,
            foreground: a.foreground,
        }
    }
}

impl Alphabet {
    pub fn new(
        names: Vec<String>,
        blank: Option<usize>,
        background: Option<usize>,
        foreground: Option<usize>,
    ) -> Result<Self> {
        let k = names.len();
        let specials: Vec<usize> = [blank, background, foreground].into_iter().flatten().collect();
        for &id in &specials {
            if id >= k {
                return Err(Error::InvalidAlphabet(format!(
                    "special index {id} out of range for {k} classes"
                )));
            }
        }
        let distinct: HashSet<usize> = specials.iter().copied().collect();
        if distinct.len() != specials.len() {
            return Err(Error::InvalidAlphabet("special indices must be distinct".into()));
        }
        let unique_names: HashSet<&str> = names.iter().map(String::as_str).collect();
        if unique_names.len() != k {
            return Err(Error::InvalidAlphabet("class names must be unique".into()));
        }
        Ok(Alphabet {
            names,
            blank,
            background,
            foreground,
        })
    }

    /// Character classes followed by a blank named `/`.
    pub fn ctc<S: Into<String>>(chars: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut names: Vec<String> = chars.into_iter().map(Into::into).collect();
        let blank = names.len();
        names.push("/".into());
        Alphabet::new(names, Some(blank), None, None)
    }

    /// Character classes followed by background `~` and foreground `+`.
    pub fn tcs<S: Into<String>>(chars: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut names: Vec<String> = chars.into_iter().map(Into::into).collect();
        let background = names.len();
        names.push("~".into());
        names.push("+".into());
        Alphabet::new(names, None, Some(background), Some(background + 1))
    }

    /// Alphabet for `kind` over `chars`.
    pub fn for_kind<S: Into<String>>(kind: TopologyKind, chars: impl IntoIterator<Item = S>) -> Result<Self> {
        match kind {
            TopologyKind::Ctc => Alphabet::ctc(chars),
            TopologyKind::Tcs => Alphabet::tcs(chars),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn blank(&self) -> Option<usize> {
        self.blank
    }

    pub fn background(&self) -> Option<usize> {
        self.background
    }

    pub fn foreground(&self) -> Option<usize> {
        self.foreground
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_special(&self, class: usize) -> bool {
        Some(class) == self.blank || Some(class) == self.background || Some(class) == self.foreground
    }

    pub fn role(&self, class: usize) -> Role {
        if Some(class) == self.blank {
            Role::Blank
        } else if Some(class) == self.background {
            Role::Background
        } else if Some(class) == self.foreground {
            Role::Foreground
        } else {
            Role::Character
        }
    }

    pub fn character_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&c| !self.is_special(c))
    }

    /// Checks that the specials required by `kind` are present.
    pub fn check_kind(&self, kind: TopologyKind) -> Result<()> {
        match kind {
            TopologyKind::Ctc => {
                self.blank.ok_or(Error::MissingSpecial("blank"))?;
            }
            TopologyKind::Tcs => {
                self.background.ok_or(Error::MissingSpecial("background"))?;
                self.foreground.ok_or(Error::MissingSpecial("foreground"))?;
            }
        }
        Ok(())
    }

    /// The class that fills non-emitting frames: blank for CTC, background for TCS.
    pub fn filler(&self, kind: TopologyKind) -> Result<usize> {
        match kind {
            TopologyKind::Ctc => self.blank.ok_or(Error::MissingSpecial("blank")),
            TopologyKind::Tcs => self.background.ok_or(Error::MissingSpecial("background")),
        }
    }

    /// Parses a comma-separated label list. Each token is a class name or,
    /// failing that, a class index. Empty input gives an empty sequence.
    pub fn parse_labels(&self, list: &str) -> Result<LabelSequence> {
        let list = list.trim();
        if list.is_empty() {
            return Ok(LabelSequence::default());
        }
        let ids = list
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                self.index_of(tok)
                    .or_else(|| tok.parse::<usize>().ok())
                    .ok_or_else(|| Error::UnknownLabel(tok.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = LabelSequence::new(ids);
        labels.validate(self)?;
        Ok(labels)
    }

    /// Class names of a label sequence.
    pub fn label_names(&self, labels: &LabelSequence) -> Vec<String> {
        labels.iter().map(|c| self.names[c].clone()).collect()
    }
}

/// Sequence of character class indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        LabelSequence(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        for &id in &self.0 {
            if id >= alphabet.len() || alphabet.is_special(id) {
                return Err(Error::InvalidLabel { id });
            }
        }
        Ok(())
    }
}

impl From<Vec<usize>> for LabelSequence {
    fn from(ids: Vec<usize>) -> Self {
        LabelSequence(ids)
    }
}

/// One expanded state of a trellis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub class_id: usize,
    pub role: Role,
    /// Zero-based index of the label this state belongs to. Fillers take the
    /// index of the label they precede; the trailing filler takes `U`.
    pub label_position: usize,
}

/// Time-unrolled state graph for one label sequence.
///
/// Predecessor lists always start with the state itself, followed by the
/// remaining predecessors in ascending order.
#[derive(Debug, Clone)]
pub struct StateTrellis {
    kind: TopologyKind,
    labels: LabelSequence,
    states: Vec<State>,
    predecessors: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
    start_states: Vec<usize>,
    end_states: Vec<usize>,
    min_frames: usize,
}

impl StateTrellis {
    fn from_parts(
        kind: TopologyKind,
        labels: LabelSequence,
        states: Vec<State>,
        predecessors: Vec<Vec<usize>>,
        start_states: Vec<usize>,
        end_states: Vec<usize>,
        min_frames: usize,
    ) -> Self {
        let mut successors = vec![Vec::new(); states.len()];
        for (s, preds) in predecessors.iter().enumerate() {
            for &p in preds {
                successors[p].push(s);
            }
        }
        StateTrellis {
            kind,
            labels,
            states,
            predecessors,
            successors,
            start_states,
            end_states,
            min_frames,
        }
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn labels(&self) -> &LabelSequence {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, s: usize) -> &State {
        &self.states[s]
    }

    pub fn class_of(&self, s: usize) -> usize {
        self.states[s].class_id
    }

    pub fn predecessors(&self, s: usize) -> &[usize] {
        &self.predecessors[s]
    }

    pub fn successors(&self, s: usize) -> &[usize] {
        &self.successors[s]
    }

    pub fn start_states(&self) -> &[usize] {
        &self.start_states
    }

    pub fn end_states(&self) -> &[usize] {
        &self.end_states
    }

    pub fn is_start(&self, s: usize) -> bool {
        self.start_states.contains(&s)
    }

    pub fn is_end(&self, s: usize) -> bool {
        self.end_states.contains(&s)
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        self.predecessors[to].contains(&from)
    }

    /// Checks start, end and transition rules for a state path.
    pub fn is_valid_path(&self, path: &[usize]) -> bool {
        match (path.first(), path.last()) {
            (Some(&first), Some(&last)) => {
                first < self.len()
                    && last < self.len()
                    && self.is_start(first)
                    && self.is_end(last)
                    && path.windows(2).all(|w| w[1] < self.len() && self.allows(w[0], w[1]))
            }
            _ => false,
        }
    }

    /// Length of the shortest valid start-to-end path.
    pub fn min_frames(&self) -> usize {
        self.min_frames
    }
}

/// Builds the CTC trellis `/ l1 / l2 / ... / lU /`.
pub fn expand_ctc(labels: &LabelSequence, alphabet: &Alphabet) -> Result<StateTrellis> {
    let blank = alphabet.blank().ok_or(Error::MissingSpecial("blank"))?;
    labels.validate(alphabet)?;
    let ids = labels.ids();
    let u = ids.len();
    let mut states = Vec::with_capacity(2 * u + 1);
    let mut predecessors = Vec::with_capacity(2 * u + 1);
    for i in 0..=u {
        let b = states.len();
        states.push(State {
            class_id: blank,
            role: Role::Blank,
            label_position: i,
        });
        predecessors.push(if b == 0 { vec![b] } else { vec![b, b - 1] });
        if i < u {
            let c = states.len();
            states.push(State {
                class_id: ids[i],
                role: Role::Character,
                label_position: i,
            });
            let mut preds = vec![c];
            if i > 0 && ids[i - 1] != ids[i] {
                preds.push(c - 2);
            }
            preds.push(c - 1);
            predecessors.push(preds);
        }
    }
    let s = states.len();
    let (start_states, end_states) = if u == 0 {
        (vec![0], vec![0])
    } else {
        (vec![0, 1], vec![s - 2, s - 1])
    };
    let min_frames = if u == 0 {
        1
    } else {
        u + ids.windows(2).filter(|w| w[0] == w[1]).count()
    };
    Ok(StateTrellis::from_parts(
        TopologyKind::Ctc,
        labels.clone(),
        states,
        predecessors,
        start_states,
        end_states,
        min_frames,
    ))
}

/// Builds the TCS trellis `(~ + l1)(~ + l2)...(~ + lU) ~` with optional
/// outer backgrounds.
pub fn expand_tcs(labels: &LabelSequence, alphabet: &Alphabet) -> Result<StateTrellis> {
    expand_tcs_with(labels, alphabet, TcsEnds::Optional)
}

pub fn expand_tcs_with(labels: &LabelSequence, alphabet: &Alphabet, ends: TcsEnds) -> Result<StateTrellis> {
    let background = alphabet.background().ok_or(Error::MissingSpecial("background"))?;
    let foreground = alphabet.foreground().ok_or(Error::MissingSpecial("foreground"))?;
    labels.validate(alphabet)?;
    let ids = labels.ids();
    let u = ids.len();
    let mut states = Vec::with_capacity(3 * u + 1);
    let mut predecessors = Vec::with_capacity(3 * u + 1);
    for (i, &label) in ids.iter().enumerate() {
        let b = states.len();
        states.push(State {
            class_id: background,
            role: Role::Background,
            label_position: i,
        });
        // Previous character, if any, flows into this background.
        predecessors.push(if i == 0 { vec![b] } else { vec![b, b - 1] });

        let f = b + 1;
        states.push(State {
            class_id: foreground,
            role: Role::Foreground,
            label_position: i,
        });
        // Foreground is entered from its background or straight from the previous character.
        predecessors.push(if i == 0 { vec![f, b] } else { vec![f, b - 1, b] });

        let c = b + 2;
        states.push(State {
            class_id: label,
            role: Role::Character,
            label_position: i,
        });
        predecessors.push(vec![c, f]);
    }
    let t = states.len();
    states.push(State {
        class_id: background,
        role: Role::Background,
        label_position: u,
    });
    predecessors.push(if u == 0 { vec![t] } else { vec![t, t - 1] });

    let (start_states, end_states, min_frames) = match (u, ends) {
        (0, _) => (vec![0], vec![0], 1),
        (_, TcsEnds::Optional) => (vec![0, 1], vec![t - 1, t], 2 * u),
        (_, TcsEnds::Required) => (vec![0], vec![t], 2 * u + 2),
    };
    Ok(StateTrellis::from_parts(
        TopologyKind::Tcs,
        labels.clone(),
        states,
        predecessors,
        start_states,
        end_states,
        min_frames,
    ))
}

pub fn expand(labels: &LabelSequence, alphabet: &Alphabet, topology: impl Into<Topology>) -> Result<StateTrellis> {
    let topology = topology.into();
    match topology.kind {
        TopologyKind::Ctc => expand_ctc(labels, alphabet),
        TopologyKind::Tcs => expand_tcs_with(labels, alphabet, topology.tcs_ends),
    }
}

/// Merges adjacent duplicates, then removes the special classes of `kind`.
///
/// Any class path is accepted, including ones no trellis could produce, so
/// that raw per-frame argmax sequences can be collapsed directly.
pub fn collapse(class_path: &[usize], alphabet: &Alphabet, kind: TopologyKind) -> Result<LabelSequence> {
    let k = alphabet.len();
    if let Some(&bad) = class_path.iter().find(|&&c| c >= k) {
        return Err(Error::ClassOutOfRange { index: bad, classes: k });
    }
    let removed = |c: usize| match kind {
        TopologyKind::Ctc => Some(c) == alphabet.blank(),
        TopologyKind::Tcs => Some(c) == alphabet.background() || Some(c) == alphabet.foreground(),
    };
    let mut out = Vec::new();
    let mut prev = None;
    for &c in class_path {
        if prev != Some(c) && !removed(c) {
            out.push(c);
        }
        prev = Some(c);
    }
    Ok(LabelSequence(out))
}

/// Shortest valid path length through `trellis`: `U` plus one per adjacent
/// equal pair for CTC, `2U` for TCS (`2U + 2` with required outer
/// backgrounds), and 1 for an empty label.
pub fn min_frames(trellis: &StateTrellis) -> usize {
    trellis.min_frames()
}
