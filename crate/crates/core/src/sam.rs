//! Suffix automaton over token streams.
//!
//! States are end-position equivalence classes of substrings. The automaton is
//! built online (one token at a time, cloning on length mismatch), after which
//! [`compute_occurrences`] fills in `|endpos|` for every state by summing up the
//! suffix-link tree.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::spectrum::{Provenance, Spectrum};

pub type StateId = u32;

pub const ROOT: StateId = 0;
const NONE: u32 = u32::MAX;

pub const SAM_MAGIC: [u8; 4] = *b"SPSA";
pub const SAM_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct State {
    len: u32,
    link: u32,
    occ: u32,
    first_end: u32,
    is_clone: bool,
    /// Sorted by token id.
    transitions: Vec<(u32, StateId)>,
}

#[allow(clippy::len_without_is_empty)]
impl State {
    fn new(len: u32, first_end: u32) -> Self {
        State {
            len,
            link: NONE,
            occ: 0,
            first_end,
            is_clone: false,
            transitions: Vec::new(),
        }
    }

    /// Length of the longest substring in the class.
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn link(&self) -> Option<StateId> {
        (self.link != NONE).then_some(self.link)
    }

    /// `|endpos|`; zero until occurrences are computed, and always zero for the root.
    pub fn occ(&self) -> u64 {
        u64::from(self.occ)
    }

    pub fn is_clone(&self) -> bool {
        self.is_clone
    }

    /// Zero-based position of one occurrence's last token. Unknown for automata
    /// read back from disk.
    pub fn first_end(&self) -> Option<usize> {
        (self.first_end != NONE).then_some(self.first_end as usize)
    }

    pub fn transitions(&self) -> &[(u32, StateId)] {
        &self.transitions
    }

    pub fn next(&self, token: u32) -> Option<StateId> {
        self.transitions
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| self.transitions[i].1)
    }

    fn set_next(&mut self, token: u32, target: StateId) {
        match self.transitions.binary_search_by_key(&token, |&(t, _)| t) {
            Ok(i) => self.transitions[i].1 = target,
            Err(i) => self.transitions.insert(i, (token, target)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Automaton {
    states: Vec<State>,
    source_length: usize,
    occurrences: bool,
}

/// Online construction over the whole stream. Occurrence counts are left at zero.
pub fn build_sam(stream: &TokenStream) -> Automaton {
    let tokens = stream.tokens();
    assert!(
        tokens.len() < (NONE / 2) as usize,
        "stream too long for 32-bit state ids"
    );
    let mut states = Vec::with_capacity(2 * tokens.len() + 1);
    states.push(State::new(0, NONE));
    let mut last = ROOT;

    for (i, &c) in tokens.iter().enumerate() {
        let cur = states.len() as StateId;
        states.push(State::new(states[last as usize].len + 1, i as u32));

        let mut p = last;
        loop {
            if states[p as usize].next(c).is_some() {
                break;
            }
            states[p as usize].set_next(c, cur);
            p = states[p as usize].link;
            if p == NONE {
                break;
            }
        }

        if p == NONE {
            states[cur as usize].link = ROOT;
        } else {
            let q = states[p as usize].next(c).unwrap();
            if states[p as usize].len + 1 == states[q as usize].len {
                states[cur as usize].link = q;
            } else {
                let clone = states.len() as StateId;
                let source = &states[q as usize];
                let cloned = State {
                    len: states[p as usize].len + 1,
                    link: source.link,
                    occ: 0,
                    first_end: source.first_end,
                    is_clone: true,
                    transitions: source.transitions.clone(),
                };
                states.push(cloned);
                while p != NONE && states[p as usize].next(c) == Some(q) {
                    states[p as usize].set_next(c, clone);
                    p = states[p as usize].link;
                }
                states[q as usize].link = clone;
                states[cur as usize].link = clone;
            }
        }
        last = cur;
    }

    Automaton {
        states,
        source_length: tokens.len(),
        occurrences: false,
    }
}

/// Fills `occ(s) = |endpos(s)|`: non-clone states are seeded with one occurrence
/// and counts are pushed up suffix links in decreasing-length order.
pub fn compute_occurrences(mut automaton: Automaton) -> Automaton {
    let order = automaton.states_by_decreasing_len();
    for s in automaton.states.iter_mut().skip(1) {
        s.occ = u32::from(!s.is_clone);
    }
    automaton.states[ROOT as usize].occ = 0;
    for &s in &order {
        if s == ROOT {
            continue;
        }
        let (link, occ) = {
            let st = &automaton.states[s as usize];
            (st.link, st.occ)
        };
        if link != ROOT {
            automaton.states[link as usize].occ += occ;
        }
    }
    automaton.occurrences = true;
    automaton
}

/// Number of distinct non-empty substrings of the source stream.
pub fn distinct_substring_count(automaton: &Automaton) -> u64 {
    automaton
        .states
        .iter()
        .skip(1)
        .map(|s| u64::from(s.len - automaton.states[s.link as usize].len))
        .sum()
}

/// Descending `occ(s) / sum occ` over non-root states, ties by ascending state id.
pub fn state_mass_spectrum(automaton: &Automaton) -> Spectrum {
    let masses = automaton.masses();
    let mut ranked: Vec<(StateId, f64)> = masses
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &m)| (i as StateId, m))
        .collect();
    sort_descending(&mut ranked);
    Spectrum::from_sorted(
        ranked.into_iter().map(|(_, w)| w).collect(),
        Provenance::StateMass,
        automaton.source_length,
    )
    .with_normalized_flag(true)
}

/// Weight-descending, id-ascending order.
pub(crate) fn sort_descending(items: &mut [(StateId, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

impl Automaton {
    pub fn from_stream(stream: &TokenStream) -> Automaton {
        compute_occurrences(build_sam(stream))
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, id: StateId) -> &State {
        &self.states[id as usize]
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn transition_count(&self) -> usize {
        self.states.iter().map(|s| s.transitions.len()).sum()
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    pub fn has_occurrences(&self) -> bool {
        self.occurrences
    }

    /// Sum of `occ` over non-root states.
    pub fn total_occurrences(&self) -> u64 {
        self.states.iter().skip(1).map(State::occ).sum()
    }

    /// `mu(s)` indexed by state id; entry 0 (the root) is always zero.
    pub fn masses(&self) -> Vec<f64> {
        let total = self.total_occurrences() as f64;
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == ROOT as usize || total == 0.0 {
                    0.0
                } else {
                    s.occ() as f64 / total
                }
            })
            .collect()
    }

    /// Walks transitions from the root; true iff `pattern` is a substring of the source.
    pub fn accepts(&self, pattern: &[u32]) -> bool {
        self.walk(pattern).is_some()
    }

    /// State reached by reading `pattern` from the root.
    pub fn walk(&self, pattern: &[u32]) -> Option<StateId> {
        pattern
            .iter()
            .try_fold(ROOT, |s, &t| self.states[s as usize].next(t))
    }

    /// Counting sort on `len`, longest first.
    pub fn states_by_decreasing_len(&self) -> Vec<StateId> {
        let max_len = self.source_length;
        let mut buckets = vec![0usize; max_len + 2];
        for s in &self.states {
            buckets[s.len as usize] += 1;
        }
        let mut start = 0;
        for b in buckets.iter_mut().rev() {
            let n = *b;
            *b = start;
            start += n;
        }
        let mut order = vec![0 as StateId; self.states.len()];
        for (i, s) in self.states.iter().enumerate() {
            let slot = &mut buckets[s.len as usize];
            order[*slot] = i as StateId;
            *slot += 1;
        }
        order
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.states.len() * 40);
        out.extend_from_slice(&SAM_MAGIC);
        out.extend_from_slice(&SAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.source_length as u64).to_le_bytes());
        out.extend_from_slice(&(self.states.len() as u64).to_le_bytes());
        for s in &self.states {
            out.extend_from_slice(&u64::from(s.len).to_le_bytes());
            let link: i64 = if s.link == NONE { -1 } else { i64::from(s.link) };
            out.extend_from_slice(&link.to_le_bytes());
            out.extend_from_slice(&s.occ().to_le_bytes());
            out.push(u8::from(s.is_clone));
            out.extend_from_slice(&(s.transitions.len() as u32).to_le_bytes());
            for &(t, target) in &s.transitions {
                out.extend_from_slice(&t.to_le_bytes());
                out.extend_from_slice(&u64::from(target).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Automaton> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SAM_MAGIC || r.u32()? != SAM_VERSION {
            return Err(Error::UnrecognizedFormat);
        }
        let source_length = r.u64()? as usize;
        let count = r.u64()? as usize;
        if count == 0 || count > bytes.len() {
            return Err(Error::CorruptStream(format!("implausible state count {count}")));
        }
        let mut states = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u64()?;
            let link = r.i64()?;
            let occ = r.u64()?;
            let is_clone = r.take(1)?[0] != 0;
            let n = r.u32()? as usize;
            let mut transitions = Vec::with_capacity(n.min(bytes.len()));
            for _ in 0..n {
                let t = r.u32()?;
                let target = r.u64()?;
                if target as usize >= count {
                    return Err(Error::CorruptStream("transition target out of range".into()));
                }
                transitions.push((t, target as StateId));
            }
            if !transitions.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(Error::CorruptStream("transitions not sorted".into()));
            }
            let link = match link {
                -1 => NONE,
                l if l >= 0 && (l as usize) < count => l as u32,
                _ => return Err(Error::CorruptStream("suffix link out of range".into())),
            };
            states.push(State {
                len: u32::try_from(len)
                    .map_err(|_| Error::CorruptStream("state length overflow".into()))?,
                link,
                occ: u32::try_from(occ)
                    .map_err(|_| Error::CorruptStream("occurrence overflow".into()))?,
                first_end: NONE,
                is_clone,
                transitions,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptStream("trailing bytes".into()));
        }
        if states[0].link != NONE || states.iter().skip(1).any(|s| s.link == NONE) {
            return Err(Error::CorruptStream("root must be the only unlinked state".into()));
        }
        let occurrences = states.iter().skip(1).any(|s| s.occ > 0);
        Ok(Automaton {
            states,
            source_length,
            occurrences,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Automaton> {
        Automaton::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptStream("unexpected end of automaton file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
