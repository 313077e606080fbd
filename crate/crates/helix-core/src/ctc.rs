//! CTC decoding: read probability as a sum over all valid alignments, prefix
//! beam search with merge-on-collapse, and the crossbar-mapped beam step.
//!
//! Probabilities are kept in linear space; at desk-scale window lengths the
//! products stay well inside f64 range, and the exactness tests want linear
//! arithmetic.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::genome::{Base, CtcSymbol, Read};
use crate::nn::ProbMatrix;
use crate::quant::FixedTensor;

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("beam width must be at least 1")]
    BadWidth,
    #[error("probability matrix is empty")]
    EmptyMatrix,
    #[error("alignment enumeration limited to length {limit}, asked for {got}")]
    EnumerationTooLong { limit: usize, got: usize },
    #[error("beam step with {cells} cells exceeds array dimension {dim}")]
    ArrayTooSmall { cells: usize, dim: usize },
}

/// Collapse a label path: drop repeated symbols, then drop blanks.
pub fn collapse(path: &[CtcSymbol]) -> Vec<Base> {
    let mut out = Vec::new();
    let mut prev: Option<CtcSymbol> = None;
    for &sym in path {
        if prev != Some(sym) {
            if let CtcSymbol::Base(b) = sym {
                out.push(b);
            }
        }
        prev = Some(sym);
    }
    out
}

/// All label paths of length `len` that collapse to `read`.
///
/// Exhaustive over the 5^len path space, so `len` is capped at 8. This is
/// the independent oracle the dynamic-programming route is checked against.
pub fn enumerate_alignments(read: &[Base], len: usize) -> Result<Vec<Vec<CtcSymbol>>, CtcError> {
    const LIMIT: usize = 8;
    if len > LIMIT {
        return Err(CtcError::EnumerationTooLong {
            limit: LIMIT,
            got: len,
        });
    }
    let mut out = Vec::new();
    let mut path = vec![CtcSymbol::Blank; len];
    fn recurse(
        read: &[Base],
        path: &mut Vec<CtcSymbol>,
        depth: usize,
        out: &mut Vec<Vec<CtcSymbol>>,
    ) {
        if depth == path.len() {
            if collapse(path) == read {
                out.push(path.clone());
            }
            return;
        }
        for sym in CtcSymbol::ALL {
            path[depth] = sym;
            recurse(read, path, depth + 1, out);
        }
    }
    recurse(read, &mut path, 0, &mut out);
    Ok(out)
}

/// Probability of decoding `read` from `probs`: the sum over all valid
/// alignments of the per-step symbol probabilities.
///
/// A read longer than the matrix has no alignment and probability 0.
pub fn ctc_prob(read: &[Base], probs: &ProbMatrix) -> f64 {
    let steps = probs.timesteps();
    if read.len() > steps {
        return 0.0;
    }
    // Standard forward pass over the blank-extended label sequence
    // [-, d0, -, d1, ..., -].
    let ext_len = 2 * read.len() + 1;
    let sym_at = |s: usize| -> CtcSymbol {
        if s % 2 == 0 {
            CtcSymbol::Blank
        } else {
            CtcSymbol::Base(read[s / 2])
        }
    };
    let mut alpha = vec![0.0f64; ext_len];
    alpha[0] = probs.prob(0, sym_at(0));
    if ext_len > 1 {
        alpha[1] = probs.prob(0, sym_at(1));
    }
    for t in 1..steps {
        let mut next = vec![0.0f64; ext_len];
        for s in 0..ext_len {
            let mut acc = alpha[s];
            if s >= 1 {
                acc += alpha[s - 1];
            }
            // A skip over the blank is allowed only between distinct labels.
            if s >= 2 && s % 2 == 1 && read[s / 2] != read[s / 2 - 1] {
                acc += alpha[s - 2];
            }
            next[s] = acc * probs.prob(t, sym_at(s));
        }
        alpha = next;
    }
    if ext_len > 1 {
        alpha[ext_len - 1] + alpha[ext_len - 2]
    } else {
        alpha[0]
    }
}

/// One surviving prefix during beam search; blank- and non-blank-suffixed
/// path probabilities are tracked separately so repeat extensions merge
/// correctly.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub prefix: Vec<Base>,
    pub prob_blank: f64,
    pub prob_nonblank: f64,
}

impl BeamEntry {
    pub fn total(&self) -> f64 {
        self.prob_blank + self.prob_nonblank
    }
}

/// Prefix beam search over a probability matrix.
///
/// Prefixes that collapse identically are merged by summing their path
/// probabilities. Ties in probability break toward the lexicographically
/// smaller prefix. With a width at least the number of reachable prefixes
/// the search is exact and the winner's probability equals [`ctc_prob`].
pub fn beam_search(probs: &ProbMatrix, width: usize) -> Result<(Read, f64), CtcError> {
    if width == 0 {
        return Err(CtcError::BadWidth);
    }
    if probs.timesteps() == 0 {
        return Err(CtcError::EmptyMatrix);
    }
    let mut beams: BTreeMap<Vec<Base>, (f64, f64)> = BTreeMap::new();
    beams.insert(Vec::new(), (1.0, 0.0));
    for t in 0..probs.timesteps() {
        let mut next: BTreeMap<Vec<Base>, (f64, f64)> = BTreeMap::new();
        let p_blank = probs.prob(t, CtcSymbol::Blank);
        for (prefix, (pb, pnb)) in &beams {
            // Extend with blank: prefix unchanged, now blank-suffixed.
            let entry = next.entry(prefix.clone()).or_insert((0.0, 0.0));
            entry.0 += (pb + pnb) * p_blank;
            for base in Base::ALL {
                let p_sym = probs.prob(t, CtcSymbol::Base(base));
                if prefix.last() == Some(&base) {
                    // Repeated label with no separating blank collapses onto
                    // the same prefix; with a blank in between it begins a
                    // new occurrence.
                    let same = next.entry(prefix.clone()).or_insert((0.0, 0.0));
                    same.1 += pnb * p_sym;
                    let mut extended = prefix.clone();
                    extended.push(base);
                    let ext = next.entry(extended).or_insert((0.0, 0.0));
                    ext.1 += pb * p_sym;
                } else {
                    let mut extended = prefix.clone();
                    extended.push(base);
                    let ext = next.entry(extended).or_insert((0.0, 0.0));
                    ext.1 += (pb + pnb) * p_sym;
                }
            }
        }
        let mut entries: Vec<(Vec<Base>, (f64, f64))> = next.into_iter().collect();
        // Sort by total descending; BTreeMap iteration already yields
        // lexicographic order, and the stable sort preserves it among ties.
        entries.sort_by(|a, b| {
            let ta = a.1 .0 + a.1 .1;
            let tb = b.1 .0 + b.1 .1;
            tb.partial_cmp(&ta).expect("probabilities are finite")
        });
        entries.truncate(width);
        beams = entries.into_iter().collect();
    }
    let (prefix, (pb, pnb)) = beams
        .into_iter()
        .map(|(prefix, probs)| (prefix, probs))
        .max_by(|a, b| {
            let ta = a.1 .0 + a.1 .1;
            let tb = b.1 .0 + b.1 .1;
            // Prefer the lexicographically smaller prefix on exact ties.
            ta.partial_cmp(&tb)
                .expect("probabilities are finite")
                .then_with(|| b.0.cmp(&a.0))
        })
        .expect("at least the empty prefix survives");
    Ok((Read::new(prefix, 0), pb + pnb))
}

/// Configuration of the dot-product array used for a beam step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossbarBeamConfig {
    /// Cells along one array dimension available for the diagonal.
    pub array_dim: usize,
    /// When set, probabilities are fixed-point quantized at this width on
    /// their way into the array, mirroring how weights are stored.
    pub prob_bits: Option<u32>,
}

impl Default for CrossbarBeamConfig {
    fn default() -> Self {
        CrossbarBeamConfig {
            array_dim: 128,
            prob_bits: None,
        }
    }
}

/// Output of one crossbar beam step.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamStepOutput {
    /// Raw products `p_t(a) * p_{t+1}(b)` indexed `[a][b]`.
    pub products: Vec<Vec<f64>>,
    /// Products summed by the collapse of the two-symbol sequence; present
    /// only when merging is requested. Keys are collapsed base strings.
    pub merged: Option<BTreeMap<Vec<Base>, f64>>,
}

/// One beam step mapped onto a dot-product array: the step-`t` symbol
/// probabilities are programmed on the diagonal, the step-`t+1`
/// probabilities drive the word lines, and closing the extra bit-line
/// transistors sums the products whose two-symbol sequences collapse to the
/// same string.
pub fn crossbar_beam_step(
    cfg: &CrossbarBeamConfig,
    step_t: &[(CtcSymbol, f64)],
    step_next: &[(CtcSymbol, f64)],
    merge: bool,
) -> Result<BeamStepOutput, CtcError> {
    let cells = step_t.len() * step_next.len();
    if cells > cfg.array_dim {
        return Err(CtcError::ArrayTooSmall {
            cells,
            dim: cfg.array_dim,
        });
    }
    let quant = |probs: &[(CtcSymbol, f64)]| -> Vec<(CtcSymbol, f64)> {
        match cfg.prob_bits {
            None => probs.to_vec(),
            Some(bits) => {
                let values: Vec<f64> = probs.iter().map(|&(_, p)| p).collect();
                let dequant = FixedTensor::quantize(&values, &[values.len()], bits)
                    .expect("probabilities are finite")
                    .dequantize();
                probs
                    .iter()
                    .zip(dequant)
                    .map(|(&(s, _), p)| (s, p))
                    .collect()
            }
        }
    };
    let diag = quant(step_t);
    let drive = quant(step_next);
    let products: Vec<Vec<f64>> = diag
        .iter()
        .map(|&(_, pa)| drive.iter().map(|&(_, pb)| pa * pb).collect())
        .collect();
    let merged = merge.then(|| {
        let mut sums: BTreeMap<Vec<Base>, f64> = BTreeMap::new();
        for (i, &(sym_a, _)) in diag.iter().enumerate() {
            for (j, &(sym_b, _)) in drive.iter().enumerate() {
                let key = collapse(&[sym_a, sym_b]);
                *sums.entry(key).or_insert(0.0) += products[i][j];
            }
        }
        sums
    });
    Ok(BeamStepOutput { products, merged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn bases(s: &str) -> Vec<Base> {
        crate::genome::parse_bases(s).unwrap()
    }

    /// Two-step matrix whose top-2 walkthrough yields p(A) = 0.36:
    /// t0 has p(A)=0.3, p(-)=0.4; t1 has p(A)=0.3, p(-)=0.5.
    pub(crate) fn two_step_matrix() -> ProbMatrix {
        ProbMatrix::from_rows(&[[0.3, 0.1, 0.1, 0.1, 0.4], [0.3, 0.1, 0.05, 0.05, 0.5]]).unwrap()
    }

    fn uniform_matrix(steps: usize) -> ProbMatrix {
        ProbMatrix::from_rows(&vec![[0.2; 5]; steps]).unwrap()
    }

    #[test]
    fn enumerate_single_base_two_steps() {
        let aligns = enumerate_alignments(&bases("A"), 2).unwrap();
        let set: std::collections::HashSet<Vec<CtcSymbol>> = aligns.into_iter().collect();
        let a = CtcSymbol::Base(Base::A);
        let blank = CtcSymbol::Blank;
        let expected: std::collections::HashSet<Vec<CtcSymbol>> =
            [vec![a, blank], vec![blank, a], vec![a, a]]
                .into_iter()
                .collect();
        assert_eq!(set, expected);
    }

    #[test]
    fn enumerate_empty_read_single_step() {
        let aligns = enumerate_alignments(&[], 1).unwrap();
        assert_eq!(aligns, vec![vec![CtcSymbol::Blank]]);
    }

    #[test]
    fn enumerate_repeat_needs_separator() {
        // "AA" cannot be spelled in two steps: the repeat needs a blank.
        let aligns = enumerate_alignments(&bases("AA"), 2).unwrap();
        assert!(aligns.is_empty());
        let three = enumerate_alignments(&bases("AA"), 3).unwrap();
        assert_eq!(
            three,
            vec![vec![
                CtcSymbol::Base(Base::A),
                CtcSymbol::Blank,
                CtcSymbol::Base(Base::A)
            ]]
        );
    }

    #[test]
    fn enumerate_rejects_long_paths() {
        assert!(matches!(
            enumerate_alignments(&bases("A"), 9),
            Err(CtcError::EnumerationTooLong { .. })
        ));
    }

    #[test]
    fn empty_read_on_uniform_two_steps() {
        assert_abs_diff_eq!(ctc_prob(&[], &uniform_matrix(2)), 0.04, epsilon = 1e-15);
    }

    #[test]
    fn single_base_on_two_step_matrix() {
        // p(AA) + p(A-) + p(-A) = 0.09 + 0.15 + 0.12 = 0.36.
        assert_abs_diff_eq!(
            ctc_prob(&bases("A"), &two_step_matrix()),
            0.36,
            epsilon = 1e-15
        );
    }

    #[test]
    fn read_longer_than_matrix_has_zero_probability() {
        assert_eq!(ctc_prob(&bases("ACG"), &uniform_matrix(2)), 0.0);
    }

    fn prob_via_enumeration(read: &[Base], probs: &ProbMatrix) -> f64 {
        enumerate_alignments(read, probs.timesteps())
            .unwrap()
            .iter()
            .map(|path| {
                path.iter()
                    .enumerate()
                    .map(|(t, &s)| probs.prob(t, s))
                    .product::<f64>()
            })
            .sum()
    }

    fn random_matrix<R: Rng>(steps: usize, rng: &mut R) -> ProbMatrix {
        let rows: Vec<[f64; 5]> = (0..steps)
            .map(|_| {
                let mut row = [0.0; 5];
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = rng.gen_range(0.01..1.0);
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
                // Renormalize exactly enough for the row-sum check.
                let s: f64 = row.iter().sum();
                row[4] += 1.0 - s;
                row
            })
            .collect();
        ProbMatrix::from_rows(&rows).unwrap()
    }

    fn random_read<R: Rng>(max_len: usize, rng: &mut R) -> Vec<Base> {
        let len = rng.gen_range(0..=max_len);
        (0..len).map(|_| Base::ALL[rng.gen_range(0..4)]).collect()
    }

    #[test]
    fn dp_matches_enumeration_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let probs = random_matrix(5, &mut rng);
            let read = random_read(3, &mut rng);
            let dp = ctc_prob(&read, &probs);
            let brute = prob_via_enumeration(&read, &probs);
            assert_abs_diff_eq!(dp, brute, epsilon = 1e-12);
        }
    }

    /// Enumerate every read of length at most `max_len`.
    fn all_reads(max_len: usize) -> Vec<Vec<Base>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for prefix in &frontier {
                for b in Base::ALL {
                    let mut read = prefix.clone();
                    read.push(b);
                    out.push(read.clone());
                    next.push(read);
                }
            }
            frontier = next;
        }
        out
    }

    #[test]
    fn total_probability_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for steps in 1..=4 {
            let probs = random_matrix(steps, &mut rng);
            let total: f64 = all_reads(steps)
                .iter()
                .map(|read| ctc_prob(read, &probs))
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn beam_width_two_finds_a_at_036() {
        let (read, prob) = beam_search(&two_step_matrix(), 2).unwrap();
        assert_eq!(read.symbols, bases("A"));
        assert!((prob - 0.36).abs() < 1e-12);
    }

    #[test]
    fn single_step_certain_symbol() {
        let probs = ProbMatrix::from_rows(&[[0.0, 1.0, 0.0, 0.0, 0.0]]).unwrap();
        let (read, prob) = beam_search(&probs, 3).unwrap();
        assert_eq!(read.symbols, bases("C"));
        assert_abs_diff_eq!(prob, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exhaustive_width_matches_argmax_decode() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let steps = 3;
            let probs = random_matrix(steps, &mut rng);
            let width = 5usize.pow(steps as u32);
            let (read, prob) = beam_search(&probs, width).unwrap();
            let (best_read, best_prob) = all_reads(steps)
                .into_iter()
                .map(|r| {
                    let p = ctc_prob(&r, &probs);
                    (r, p)
                })
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert_eq!(read.symbols, best_read);
            assert_abs_diff_eq!(prob, best_prob, epsilon = 1e-12);
        }
    }

    #[test]
    fn beam_probability_monotone_in_width() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let probs = random_matrix(4, &mut rng);
            let mut prev = 0.0;
            for width in [1, 2, 4, 8, 32, 625] {
                let (_, p) = beam_search(&probs, width).unwrap();
                assert!(
                    p >= prev - 1e-15,
                    "width {width} lowered probability: {p} < {prev}"
                );
                prev = p;
            }
        }
    }

    #[test]
    fn beam_rejects_degenerate_inputs() {
        assert_eq!(
            beam_search(&uniform_matrix(1), 0).unwrap_err(),
            CtcError::BadWidth
        );
        let empty = ProbMatrix::from_rows(&[]).unwrap();
        assert_eq!(beam_search(&empty, 2).unwrap_err(), CtcError::EmptyMatrix);
    }

    #[test]
    fn crossbar_step_reproduces_walkthrough_products() {
        let cfg = CrossbarBeamConfig::default();
        let step_t = [(CtcSymbol::Base(Base::A), 0.3), (CtcSymbol::Blank, 0.4)];
        let step_next = [(CtcSymbol::Base(Base::A), 0.3), (CtcSymbol::Blank, 0.5)];
        let out = crossbar_beam_step(&cfg, &step_t, &step_next, true).unwrap();
        let flat: Vec<f64> = out.products.iter().flatten().copied().collect();
        let mut sorted = flat.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in sorted.iter().zip([0.09, 0.12, 0.15, 0.2]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        let merged = out.merged.unwrap();
        assert_abs_diff_eq!(merged[&bases("A")], 0.36, epsilon = 1e-15);
        assert_abs_diff_eq!(merged[&vec![]], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn unmerged_step_is_the_multiplication_table() {
        let cfg = CrossbarBeamConfig::default();
        let step_t = [
            (CtcSymbol::Base(Base::A), 0.5),
            (CtcSymbol::Base(Base::C), 0.25),
        ];
        let step_next = [(CtcSymbol::Base(Base::G), 0.4), (CtcSymbol::Blank, 0.6)];
        let out = crossbar_beam_step(&cfg, &step_t, &step_next, false).unwrap();
        assert!(out.merged.is_none());
        assert_eq!(out.products, vec![vec![0.2, 0.3], vec![0.1, 0.15]]);
    }

    /// Software beam-step oracle: direct products grouped by collapse.
    fn software_beam_step(
        step_t: &[(CtcSymbol, f64)],
        step_next: &[(CtcSymbol, f64)],
    ) -> BTreeMap<Vec<Base>, f64> {
        let mut sums = BTreeMap::new();
        for &(a, pa) in step_t {
            for &(b, pb) in step_next {
                *sums.entry(collapse(&[a, b])).or_insert(0.0) += pa * pb;
            }
        }
        sums
    }

    #[test]
    fn ideal_crossbar_step_is_bit_identical_to_software() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let cfg = CrossbarBeamConfig::default();
        for _ in 0..20 {
            let pick = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<(CtcSymbol, f64)> {
                let mut symbols = CtcSymbol::ALL.to_vec();
                for i in (1..symbols.len()).rev() {
                    symbols.swap(i, rng.gen_range(0..=i));
                }
                symbols
                    .into_iter()
                    .take(4)
                    .map(|s| (s, rng.gen_range(0.0..0.5)))
                    .collect()
            };
            let step_t = pick(&mut rng);
            let step_next = pick(&mut rng);
            let out = crossbar_beam_step(&cfg, &step_t, &step_next, true).unwrap();
            assert_eq!(out.merged.unwrap(), software_beam_step(&step_t, &step_next));
        }
    }

    #[test]
    fn beam_step_rejects_oversized_width() {
        let cfg = CrossbarBeamConfig {
            array_dim: 8,
            prob_bits: None,
        };
        let step: Vec<(CtcSymbol, f64)> =
            CtcSymbol::ALL.iter().map(|&s| (s, 0.2)).take(3).collect();
        assert!(matches!(
            crossbar_beam_step(&cfg, &step, &step, true),
            Err(CtcError::ArrayTooSmall { cells: 9, dim: 8 })
        ));
    }

    #[test]
    fn quantized_beam_step_tracks_ideal_closely() {
        let cfg = CrossbarBeamConfig {
            array_dim: 128,
            prob_bits: Some(8),
        };
        let step_t = [(CtcSymbol::Base(Base::A), 0.3), (CtcSymbol::Blank, 0.4)];
        let step_next = [(CtcSymbol::Base(Base::A), 0.3), (CtcSymbol::Blank, 0.5)];
        let out = crossbar_beam_step(&cfg, &step_t, &step_next, true).unwrap();
        let merged = out.merged.unwrap();
        assert!((merged[&bases("A")] - 0.36).abs() < 0.02);
    }
}
