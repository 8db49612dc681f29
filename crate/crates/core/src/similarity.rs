//! Ratcliff/Obershelp ("gestalt") pattern matching.
//!
//! The matched character count is obtained by taking the longest common
//! contiguous block of the two sequences, then recursing on the pieces to the
//! left and to the right of that block. No junk heuristics are applied.
//!
//! When several blocks share the maximal length, the one starting earliest in
//! `a` wins, then the one starting earliest in `b`. The total matched count
//! depends on this choice, so it is fixed here.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// A similarity value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const ZERO: SimilarityScore = SimilarityScore(0.0);
    pub const ONE: SimilarityScore = SimilarityScore(1.0);

    pub fn value(self) -> f64 {
        self.0
    }

    /// Builds a score from a matched-character count and the summed lengths.
    fn from_counts(matched: usize, total_len: usize) -> Self {
        if total_len == 0 {
            return SimilarityScore::ONE;
        }
        SimilarityScore(2.0 * matched as f64 / total_len as f64)
    }
}

impl From<SimilarityScore> for f64 {
    fn from(s: SimilarityScore) -> f64 {
        s.0
    }
}

/// A common contiguous block: `a[a_start..a_start+len] == b[b_start..b_start+len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

/// Longest common contiguous block of `a[a_lo..a_hi]` and `b[b_lo..b_hi]`.
///
/// `row` is scratch space of at least `b.len() + 1` entries. Returns a block
/// with `len == 0` when the ranges share no element.
fn longest_block<T: PartialEq>(
    a: &[T],
    b: &[T],
    (a_lo, a_hi): (usize, usize),
    (b_lo, b_hi): (usize, usize),
    row: &mut [usize],
) -> Block {
    let mut best = Block {
        a_start: a_lo,
        b_start: b_lo,
        len: 0,
    };
    // row[j + 1] holds the length of the common suffix ending at (i - 1, j)
    // from the previous iteration of i.
    row[b_lo..=b_hi].iter_mut().for_each(|x| *x = 0);
    for (i, ai) in (a_lo..a_hi).zip(&a[a_lo..a_hi]) {
        let mut diag = 0;
        for j in b_lo..b_hi {
            let above = row[j + 1];
            let run = if *ai == b[j] { diag + 1 } else { 0 };
            row[j + 1] = run;
            diag = above;
            // Blocks are scanned by end index in row-major order. For a fixed
            // length, the first one seen has the smallest start in `a`, then
            // in `b`, so a strict comparison keeps the required tie-break.
            if run > best.len {
                best = Block {
                    a_start: i + 1 - run,
                    b_start: j + 1 - run,
                    len: run,
                };
            }
        }
    }
    best
}

/// Total number of characters matched by the Ratcliff/Obershelp recursion.
pub fn matched_count<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    let mut stack = vec![((0, a.len()), (0, b.len()))];
    let mut total = 0;
    while let Some((ra, rb)) = stack.pop() {
        if ra.0 >= ra.1 || rb.0 >= rb.1 {
            continue;
        }
        let block = longest_block(a, b, ra, rb, &mut row);
        if block.len == 0 {
            continue;
        }
        total += block.len;
        stack.push(((ra.0, block.a_start), (rb.0, block.b_start)));
        stack.push(((block.a_start + block.len, ra.1), (block.b_start + block.len, rb.1)));
    }
    total
}

/// Gestalt similarity `2 * K / (|a| + |b|)` over Unicode scalar values.
///
/// Two empty strings are treated as identical and score 1.0.
pub fn gestalt_ratio(a: &str, b: &str) -> SimilarityScore {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    sequence_ratio(&a, &b)
}

/// Gestalt similarity over arbitrary element sequences.
pub fn sequence_ratio<T: PartialEq>(a: &[T], b: &[T]) -> SimilarityScore {
    SimilarityScore::from_counts(matched_count(a, b), a.len() + b.len())
}

/// NFC-normalizes and lowercases free text before comparison.
pub fn canonicalize(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

/// Similarity of two free-text descriptions after [`canonicalize`].
pub fn text_similarity(a: &str, b: &str) -> SimilarityScore {
    gestalt_ratio(&canonicalize(a), &canonicalize(b))
}
