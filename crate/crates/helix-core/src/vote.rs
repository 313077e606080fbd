//! Read voting: longest-match alignment, majority consensus, and the binary
//! comparator array with process-variation error injection.
//!
//! Stored strings are 3-bit encoded, each bit held by a complementary
//! LRS/HRS cell pair (6 cells per symbol). Driving a query bit puts the high
//! voltage on the pair cell that conducts only on mismatch, so a row matches
//! exactly when no current accumulates on its source line.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::genome::{encode3, majority_vote, Base, CtcSymbol, Read};

#[derive(Debug, Error, PartialEq)]
pub enum VoteError {
    #[error("read set is empty")]
    EmptyReadSet,
    #[error("read {0} is empty")]
    EmptyRead(usize),
    #[error("query of {0} symbols exceeds row capacity of {1}")]
    QueryTooWide(usize, usize),
    #[error("comparator array is full ({0} rows)")]
    ArrayFull(usize),
    #[error("stored string of {0} symbols exceeds row capacity of {1}")]
    RowTooWide(usize, usize),
}

pub const CELLS_PER_SYMBOL: usize = 6;

/// Longest common substring between two reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchResult {
    pub length: usize,
    pub pos_a: usize,
    pub pos_b: usize,
}

/// Longest common substring; ties resolve to the smallest `(pos_a, pos_b)`.
pub fn longest_match(a: &[Base], b: &[Base]) -> MatchResult {
    let mut best = MatchResult {
        length: 0,
        pos_a: 0,
        pos_b: 0,
    };
    // match_len[j] = length of the common suffix ending at (i, j).
    let mut prev = vec![0usize; b.len() + 1];
    for i in 0..a.len() {
        let mut row = vec![0usize; b.len() + 1];
        for j in 0..b.len() {
            if a[i] == b[j] {
                let len = prev[j] + 1;
                row[j + 1] = len;
                let (pa, pb) = (i + 1 - len, j + 1 - len);
                if len > best.length
                    || (len == best.length && (pa, pb) < (best.pos_a, best.pos_b))
                {
                    best = MatchResult {
                        length: len,
                        pos_a: pa,
                        pos_b: pb,
                    };
                }
            }
        }
        prev = row;
    }
    best
}

/// Consensus over aligned reads: voted symbols, per-column tallies, and the
/// columns where consecutive reads had to be butt-joined without a match.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusRead {
    pub symbols: Vec<Base>,
    /// Vote counts per column, indexed `[A, C, G, T]`.
    pub tallies: Vec<[u32; 4]>,
    /// Columns at which a zero-length match forced a gap join.
    pub gaps: Vec<usize>,
}

impl ConsensusRead {
    pub fn to_string_acgt(&self) -> String {
        crate::genome::bases_to_string(&self.symbols)
    }
}

/// Longest common substring whose placement is compatible with `b`
/// following `a`: the shift `pos_a - pos_b` must be non-negative. Returns
/// `None` when no symbol matches under that constraint.
pub fn longest_forward_match(a: &[Base], b: &[Base]) -> Option<MatchResult> {
    let mut best: Option<MatchResult> = None;
    let mut prev = vec![0usize; b.len() + 1];
    for i in 0..a.len() {
        let mut row = vec![0usize; b.len() + 1];
        for j in 0..b.len() {
            if a[i] == b[j] {
                let len = prev[j] + 1;
                row[j + 1] = len;
                let (pa, pb) = (i + 1 - len, j + 1 - len);
                if pa < pb {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(m) => len > m.length
                        || (len == m.length && (pa, pb) < (m.pos_a, m.pos_b)),
                };
                if better {
                    best = Some(MatchResult {
                        length: len,
                        pos_a: pa,
                        pos_b: pb,
                    });
                }
            }
        }
        prev = row;
    }
    best
}

/// Chain reads in origin order by their longest suffix-prefix-compatible
/// match, then vote per column.
///
/// Consecutive reads are placed so that their longest common substring
/// overlaps, restricted to placements that keep the later read at or after
/// the earlier one (the read order is known). When no compatible match
/// exists, the next read is appended after the previous one and the
/// junction is reported as a gap. Column ties break toward the
/// lexicographically smallest base.
pub fn align_and_vote(reads: &[Read]) -> Result<ConsensusRead, VoteError> {
    if reads.is_empty() {
        return Err(VoteError::EmptyReadSet);
    }
    for (i, r) in reads.iter().enumerate() {
        if r.is_empty() {
            return Err(VoteError::EmptyRead(i));
        }
    }
    let mut offsets: Vec<isize> = vec![0];
    let mut gaps_at: Vec<isize> = Vec::new();
    for pair in reads.windows(2) {
        let prev_offset = *offsets.last().expect("non-empty");
        match longest_forward_match(&pair[0].symbols, &pair[1].symbols) {
            None => {
                let joined = prev_offset + pair[0].symbols.len() as isize;
                gaps_at.push(joined);
                offsets.push(joined);
            }
            Some(m) => {
                offsets.push(prev_offset + m.pos_a as isize - m.pos_b as isize);
            }
        }
    }
    let min_offset = offsets.iter().copied().min().expect("non-empty");
    let max_end = reads
        .iter()
        .zip(&offsets)
        .map(|(r, &o)| o + r.symbols.len() as isize)
        .max()
        .expect("non-empty");
    let width = (max_end - min_offset) as usize;
    let mut tallies = vec![[0u32; 4]; width];
    for (read, &offset) in reads.iter().zip(&offsets) {
        for (k, &base) in read.symbols.iter().enumerate() {
            let col = (offset - min_offset) as usize + k;
            tallies[col][base.index()] += 1;
        }
    }
    let symbols = tallies
        .iter()
        .map(|t| {
            let votes: Vec<Base> = Base::ALL
                .iter()
                .flat_map(|&b| std::iter::repeat(b).take(t[b.index()] as usize))
                .collect();
            majority_vote(&votes).expect("every column has at least one read")
        })
        .collect();
    let gaps = gaps_at
        .into_iter()
        .map(|g| (g - min_offset) as usize)
        .collect();
    Ok(ConsensusRead {
        symbols,
        tallies,
        gaps,
    })
}

/// Per-column majority vote over reads already anchored to a shared
/// coordinate system through their `origin_offset`.
///
/// Used when provenance is exact (the pipeline knows which locus each
/// window decoded), so no content-based chaining is needed. Columns nobody
/// covers are skipped.
pub fn vote_aligned(reads: &[Read]) -> Result<ConsensusRead, VoteError> {
    if reads.is_empty() {
        return Err(VoteError::EmptyReadSet);
    }
    let start = reads
        .iter()
        .map(|r| r.origin_offset)
        .min()
        .expect("non-empty");
    let end = reads
        .iter()
        .map(|r| r.origin_offset + r.len())
        .max()
        .expect("non-empty");
    let mut tallies = vec![[0u32; 4]; end - start];
    for read in reads {
        for (k, &base) in read.symbols.iter().enumerate() {
            tallies[read.origin_offset - start + k][base.index()] += 1;
        }
    }
    let mut symbols = Vec::new();
    let mut kept = Vec::new();
    for t in &tallies {
        let votes: Vec<Base> = Base::ALL
            .iter()
            .flat_map(|&b| std::iter::repeat(b).take(t[b.index()] as usize))
            .collect();
        if let Some(winner) = majority_vote(&votes) {
            symbols.push(winner);
            kept.push(*t);
        }
    }
    Ok(ConsensusRead {
        symbols,
        tallies: kept,
        gaps: Vec::new(),
    })
}

/// One stored row of the comparator array: the 3-bit-encoded symbols, each
/// bit as a complementary cell pair.
#[derive(Debug, Clone)]
struct StoredRow {
    symbols: Vec<Base>,
}

/// A binary comparator array of complementary SOT-MRAM cell pairs.
#[derive(Debug, Clone)]
pub struct ComparatorArray {
    rows: Vec<StoredRow>,
    pub row_count: usize,
    pub col_count: usize,
    /// Probability that a single cell misreads during one comparison.
    pub per_cell_error: f64,
}

/// Result of comparing a query against one stored row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowComparison {
    /// Bit pairs whose cells conducted onto the source line.
    pub mismatch_pairs: u32,
    /// No current and equal lengths: the stored string equals the query.
    pub matches: bool,
}

impl ComparatorArray {
    /// Standard geometry: 256 x 256 cells, up to 42 symbols per row.
    pub fn new(per_cell_error: f64) -> ComparatorArray {
        ComparatorArray::with_geometry(256, 256, per_cell_error)
    }

    pub fn with_geometry(rows: usize, cols: usize, per_cell_error: f64) -> ComparatorArray {
        ComparatorArray {
            rows: Vec::new(),
            row_count: rows,
            col_count: cols,
            per_cell_error,
        }
    }

    pub fn symbol_capacity(&self) -> usize {
        self.col_count / CELLS_PER_SYMBOL
    }

    pub fn stored(&self) -> usize {
        self.rows.len()
    }

    /// Write a string into the next free row.
    pub fn store(&mut self, symbols: &[Base]) -> Result<usize, VoteError> {
        if symbols.len() > self.symbol_capacity() {
            return Err(VoteError::RowTooWide(symbols.len(), self.symbol_capacity()));
        }
        if self.rows.len() >= self.row_count {
            return Err(VoteError::ArrayFull(self.row_count));
        }
        self.rows.push(StoredRow {
            symbols: symbols.to_vec(),
        });
        Ok(self.rows.len() - 1)
    }

    /// Drive the query on the read bit-lines and sense every row at once.
    ///
    /// Only the first `query.len()` symbols of each row are driven; a row
    /// matches when no pair conducts and its stored length equals the query
    /// length. With `per_cell_error > 0` each cell in the driven region
    /// independently misreads with that probability; an odd number of flips
    /// within a pair toggles that pair's current contribution, so one flip
    /// can fake a mismatch while masking a real mismatch needs simultaneous
    /// flips on every conducting pair.
    pub fn compare<R: Rng>(
        &self,
        query: &[Base],
        rng: &mut R,
    ) -> Result<Vec<RowComparison>, VoteError> {
        if query.len() > self.symbol_capacity() {
            return Err(VoteError::QueryTooWide(query.len(), self.symbol_capacity()));
        }
        let query_bits: Vec<bool> = query
            .iter()
            .flat_map(|&b| {
                let code = encode3(CtcSymbol::Base(b));
                (0..3).rev().map(move |k| (code >> k) & 1 == 1)
            })
            .collect();
        let mut out = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let stored_bits: Vec<bool> = row
                .symbols
                .iter()
                .flat_map(|&b| {
                    let code = encode3(CtcSymbol::Base(b));
                    (0..3).rev().map(move |k| (code >> k) & 1 == 1)
                })
                .collect();
            let mut mismatch_pairs = 0u32;
            for (k, &q) in query_bits.iter().enumerate() {
                let nominal_mismatch = match stored_bits.get(k) {
                    Some(&s) => s != q,
                    // Undriven or unprogrammed region contributes nothing.
                    None => false,
                };
                let effective = if self.per_cell_error > 0.0 {
                    let flip_a = rng.gen_bool(self.per_cell_error);
                    let flip_b = rng.gen_bool(self.per_cell_error);
                    nominal_mismatch ^ (flip_a ^ flip_b)
                } else {
                    nominal_mismatch
                };
                mismatch_pairs += u32::from(effective);
            }
            out.push(RowComparison {
                mismatch_pairs,
                matches: mismatch_pairs == 0 && row.symbols.len() == query.len(),
            });
        }
        Ok(out)
    }
}

/// Expected number of corrupted comparisons when each comparison touches
/// `cells_per_comparison` cells and any odd number of flips within a pair
/// corrupts the result.
pub fn expected_comparison_errors(
    per_cell_error: f64,
    cells_per_comparison: u64,
    comparisons: f64,
) -> f64 {
    let pairs = cells_per_comparison / 2;
    let pair_flip = 2.0 * per_cell_error * (1.0 - per_cell_error);
    comparisons * (1.0 - (1.0 - pair_flip).powi(pairs as i32))
}

/// Importance-sampled estimate of corrupted-comparison count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceEstimate {
    pub expected_errors: f64,
    pub std_error: f64,
    pub samples: u64,
}

/// Estimate the corrupted-comparison count by simulating cell flips under an
/// inflated proposal probability and reweighting each sampled comparison by
/// its likelihood ratio.
pub fn importance_sampled_errors<R: Rng>(
    per_cell_error: f64,
    proposal_error: f64,
    cells_per_comparison: u64,
    comparisons: f64,
    samples: u64,
    rng: &mut R,
) -> ImportanceEstimate {
    assert!(per_cell_error < proposal_error && proposal_error < 1.0);
    let pairs = (cells_per_comparison / 2) as usize;
    let log_flip = (per_cell_error / proposal_error).ln();
    let log_keep = ((1.0 - per_cell_error) / (1.0 - proposal_error)).ln();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let mut flips = 0u64;
        let mut corrupted = false;
        for _ in 0..pairs {
            let a = rng.gen_bool(proposal_error);
            let b = rng.gen_bool(proposal_error);
            flips += u64::from(a) + u64::from(b);
            corrupted |= a ^ b;
        }
        let value = if corrupted {
            (flips as f64 * log_flip + (cells_per_comparison - flips) as f64 * log_keep).exp()
        } else {
            0.0
        };
        sum += value;
        sum_sq += value * value;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) / n;
    ImportanceEstimate {
        expected_errors: comparisons * mean,
        std_error: comparisons * var.sqrt(),
        samples,
    }
}

/// Consensus error rate for iid per-read substitution noise: the chance that
/// at least half of `coverage` reads flip a position.
pub fn binomial_vote_error_tail(substitution_rate: f64, coverage: u32) -> f64 {
    let need = coverage / 2 + 1;
    let mut total = 0.0;
    for k in need..=coverage {
        let mut log_term = 0.0;
        for i in 0..k {
            log_term += ((coverage - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        log_term += k as f64 * substitution_rate.ln()
            + (coverage - k) as f64 * (1.0 - substitution_rate).ln();
        total += log_term.exp();
    }
    total
}
