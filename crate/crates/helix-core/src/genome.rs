//! DNA symbol types, edit distance, and random-vs-systematic error
//! classification of base-called reads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenomeError {
    #[error("empty read set")]
    EmptyReadSet,
    #[error("invalid DNA character {0:?}")]
    InvalidChar(char),
    #[error("invalid 3-bit code {0:#05b}")]
    InvalidCode(u8),
}

/// One of the four DNA nucleotides.
///
/// Ordering is lexicographic (`A < C < G < T`); majority-vote ties break
/// toward the smallest base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Base {
    A,
    C,
    G,
    T,
}

impl Base {
    pub const ALL: [Base; 4] = [Base::A, Base::C, Base::G, Base::T];

    pub fn to_char(self) -> char {
        match self {
            Base::A => 'A',
            Base::C => 'C',
            Base::G => 'G',
            Base::T => 'T',
        }
    }

    pub fn from_char(c: char) -> Result<Base, GenomeError> {
        match c {
            'A' | 'a' => Ok(Base::A),
            'C' | 'c' => Ok(Base::C),
            'G' | 'g' => Ok(Base::G),
            'T' | 't' => Ok(Base::T),
            other => Err(GenomeError::InvalidChar(other)),
        }
    }

    /// Index in `ALL`, also the column index used by probability matrices.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Base> {
        Base::ALL.get(i).copied()
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// A CTC label: one of the four bases or the blank symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CtcSymbol {
    Base(Base),
    Blank,
}

impl CtcSymbol {
    pub const ALL: [CtcSymbol; 5] = [
        CtcSymbol::Base(Base::A),
        CtcSymbol::Base(Base::C),
        CtcSymbol::Base(Base::G),
        CtcSymbol::Base(Base::T),
        CtcSymbol::Blank,
    ];

    /// Column index in a probability matrix: bases first, blank last.
    pub fn index(self) -> usize {
        match self {
            CtcSymbol::Base(b) => b.index(),
            CtcSymbol::Blank => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<CtcSymbol> {
        CtcSymbol::ALL.get(i).copied()
    }
}

impl fmt::Display for CtcSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CtcSymbol::Base(b) => write!(f, "{b}"),
            CtcSymbol::Blank => write!(f, "-"),
        }
    }
}

/// 3-bit encoding of a CTC symbol.
///
/// Code table: A=001, C=010, G=011, T=100, blank=101. Injective over all
/// five symbols, so string matching reduces to comparing bit vectors.
pub fn encode3(sym: CtcSymbol) -> u8 {
    match sym {
        CtcSymbol::Base(Base::A) => 0b001,
        CtcSymbol::Base(Base::C) => 0b010,
        CtcSymbol::Base(Base::G) => 0b011,
        CtcSymbol::Base(Base::T) => 0b100,
        CtcSymbol::Blank => 0b101,
    }
}

pub fn decode3(code: u8) -> Result<CtcSymbol, GenomeError> {
    match code {
        0b001 => Ok(CtcSymbol::Base(Base::A)),
        0b010 => Ok(CtcSymbol::Base(Base::C)),
        0b011 => Ok(CtcSymbol::Base(Base::G)),
        0b100 => Ok(CtcSymbol::Base(Base::T)),
        0b101 => Ok(CtcSymbol::Blank),
        other => Err(GenomeError::InvalidCode(other)),
    }
}

/// A base-called DNA fragment plus the coordinate of its first symbol.
///
/// `origin_offset` is the index of the signal window (or, when reads have
/// been aligned to a reference, the truth position) that produced the first
/// symbol. Reads serialize as plain ASCII `ACGT` strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Read {
    pub symbols: Vec<Base>,
    pub origin_offset: usize,
}

impl Read {
    pub fn new(symbols: Vec<Base>, origin_offset: usize) -> Read {
        Read {
            symbols,
            origin_offset,
        }
    }

    pub fn from_str_at(s: &str, origin_offset: usize) -> Result<Read, GenomeError> {
        let symbols = parse_bases(s)?;
        Ok(Read {
            symbols,
            origin_offset,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Truth-coordinate span `[origin_offset, origin_offset + len)`.
    pub fn covers(&self, position: usize) -> bool {
        position >= self.origin_offset && position < self.origin_offset + self.symbols.len()
    }

    pub fn base_at(&self, position: usize) -> Option<Base> {
        if self.covers(position) {
            Some(self.symbols[position - self.origin_offset])
        } else {
            None
        }
    }
}

impl fmt::Display for Read {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.symbols {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for Read {
    type Err = GenomeError;

    fn from_str(s: &str) -> Result<Read, GenomeError> {
        Read::from_str_at(s, 0)
    }
}

pub fn parse_bases(s: &str) -> Result<Vec<Base>, GenomeError> {
    s.chars().map(Base::from_char).collect()
}

pub fn bases_to_string(bases: &[Base]) -> String {
    bases.iter().map(|b| b.to_char()).collect()
}

/// Classification of one truth position after voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionCall {
    /// Every covering read agrees with the truth.
    Correct,
    /// At least one read disagrees but the majority vote is still correct;
    /// voting repairs it.
    Random,
    /// The majority vote itself disagrees with the truth; voting cannot
    /// repair it.
    Systematic,
}

/// Per-position classification of voting outcomes against a known truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub random_count: usize,
    pub systematic_count: usize,
    pub per_position: Vec<PositionCall>,
}

impl ErrorReport {
    pub fn error_count(&self) -> usize {
        self.random_count + self.systematic_count
    }
}

/// Levenshtein distance between two symbol sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let n = short.len();
    let mut row: Vec<usize> = (0..=n).collect();
    for (j, lj) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = j + 1;
        for i in 1..=n {
            let prev = row[i];
            row[i] = if short[i - 1] == *lj {
                diag
            } else {
                1 + diag.min(prev).min(row[i - 1])
            };
            diag = prev;
        }
    }
    row[n]
}

/// Majority vote over bases; ties break toward the lexicographically
/// smallest base. Returns `None` for an empty slice.
pub fn majority_vote(bases: &[Base]) -> Option<Base> {
    if bases.is_empty() {
        return None;
    }
    let mut tally = [0usize; 4];
    for b in bases {
        tally[b.index()] += 1;
    }
    let best = tally.iter().copied().max().unwrap();
    Base::ALL.iter().copied().find(|b| tally[b.index()] == best)
}

/// Classify each truth position as correct, random, or systematic given a
/// set of reads aligned to truth coordinates.
///
/// A position with no coverage counts as systematic: no vote can recover it.
pub fn classify_errors(reads: &[Read], truth: &[Base]) -> Result<ErrorReport, GenomeError> {
    if reads.is_empty() {
        return Err(GenomeError::EmptyReadSet);
    }
    let mut per_position = Vec::with_capacity(truth.len());
    let mut random_count = 0;
    let mut systematic_count = 0;
    for (pos, truth_base) in truth.iter().enumerate() {
        let votes: Vec<Base> = reads.iter().filter_map(|r| r.base_at(pos)).collect();
        let call = match majority_vote(&votes) {
            Some(winner) if winner == *truth_base => {
                if votes.iter().all(|v| v == truth_base) {
                    PositionCall::Correct
                } else {
                    PositionCall::Random
                }
            }
            _ => PositionCall::Systematic,
        };
        match call {
            PositionCall::Correct => {}
            PositionCall::Random => random_count += 1,
            PositionCall::Systematic => systematic_count += 1,
        }
        per_position.push(call);
    }
    Ok(ErrorReport {
        random_count,
        systematic_count,
        per_position,
    })
}
