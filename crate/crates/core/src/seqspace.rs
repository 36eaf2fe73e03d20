//! Edge-token vocabulary for an `n`-clique and the permutation label space
//! over its `C(n, 2)` tokens.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IopError, Result};

/// Largest sequence length whose class count fits in a `u64`.
pub const MAX_RANKED_LEN: usize = 20;

/// A clique edge between clique-local positions `a < b` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeToken {
    pub a: usize,
    pub b: usize,
}

impl fmt::Display for EdgeToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.b < 9 {
            write!(f, "{}{}", self.a + 1, self.b + 1)
        } else {
            write!(f, "{}-{}", self.a + 1, self.b + 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeVocab {
    n: usize,
    tokens: Vec<EdgeToken>,
}

impl EdgeVocab {
    pub fn new(n: usize) -> Self {
        let mut tokens = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                tokens.push(EdgeToken { a, b });
            }
        }
        EdgeVocab { n, tokens }
    }

    /// Clique size.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Sequence length `C(n, 2)`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[EdgeToken] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> EdgeToken {
        self.tokens[id]
    }

    pub fn id_of(&self, a: usize, b: usize) -> Option<usize> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        if a == b || b >= self.n {
            return None;
        }
        // Tokens before row `a`: sum_{r < a} (n - 1 - r).
        let before = a * (2 * self.n - a - 1) / 2;
        Some(before + (b - a - 1))
    }

    /// Number of permutation classes `m!`, or `None` when it overflows `u64`.
    pub fn class_count(&self) -> Option<u64> {
        factorial(self.len())
    }

    /// Parses a space-separated token sequence like `"12 23 13"` or `"1-10 2-3"`.
    pub fn parse_sequence(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|tok| {
                let (a, b) =
                    split_token(tok).ok_or_else(|| IopError::InvalidLabel(format!("malformed token {tok:?}")))?;
                if a == 0 || b == 0 {
                    return Err(IopError::InvalidLabel(format!("token {tok:?} is not 1-based")));
                }
                self.id_of(a - 1, b - 1)
                    .ok_or_else(|| IopError::InvalidLabel(format!("token {tok:?} outside {}-clique", self.n)))
            })
            .collect()
    }

    pub fn format_sequence(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.tokens[id].to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn split_token(tok: &str) -> Option<(usize, usize)> {
    if let Some((a, b)) = tok.split_once('-') {
        return Some((a.parse().ok()?, b.parse().ok()?));
    }
    let bytes = tok.as_bytes();
    if bytes.len() != 2 || !bytes.iter().all(u8::is_ascii_digit) {
        return None;
    }
    Some(((bytes[0] - b'0') as usize, (bytes[1] - b'0') as usize))
}

pub fn factorial(m: usize) -> Option<u64> {
    (1..=m as u64).try_fold(1u64, |acc, k| acc.checked_mul(k))
}

/// An ordering of all `C(n, 2)` clique edges, stored as vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PermutationLabel {
    ids: Vec<usize>,
}

impl PermutationLabel {
    /// Validates that `ids` is a permutation of `0..vocab.len()`.
    pub fn new(ids: Vec<usize>, vocab: &EdgeVocab) -> Result<Self> {
        check_permutation(&ids, vocab.len())?;
        Ok(PermutationLabel { ids })
    }

    pub fn identity(vocab: &EdgeVocab) -> Self {
        PermutationLabel {
            ids: (0..vocab.len()).collect(),
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn tokens<'v>(&'v self, vocab: &'v EdgeVocab) -> impl Iterator<Item = EdgeToken> + 'v {
        self.ids.iter().map(move |&id| vocab.token(id))
    }
}

fn check_permutation(ids: &[usize], m: usize) -> Result<()> {
    if ids.len() != m {
        return Err(IopError::InvalidLabel(format!(
            "expected {m} tokens, got {}",
            ids.len()
        )));
    }
    let mut seen = vec![false; m];
    for &id in ids {
        if id >= m {
            return Err(IopError::InvalidLabel(format!("unknown token id {id}")));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(IopError::InvalidLabel(format!("token id {id} repeated")));
        }
    }
    Ok(())
}

/// True when `seq` contains every id in `0..m` exactly once.
pub fn is_permutation(seq: &[usize], m: usize) -> bool {
    check_permutation(seq, m).is_ok()
}

/// Lexicographic rank of the label among all permutations of its tokens.
pub fn perm_to_index(label: &PermutationLabel) -> Result<u64> {
    let m = label.len();
    if m > MAX_RANKED_LEN {
        return Err(IopError::InvalidLabel(format!("{m} tokens exceed rankable length")));
    }
    check_permutation(label.ids(), m)?;
    let mut used = vec![false; m];
    let mut rank = 0u64;
    for (pos, &id) in label.ids().iter().enumerate() {
        let smaller_unused = (0..id).filter(|&j| !used[j]).count() as u64;
        rank += smaller_unused * factorial(m - 1 - pos).expect("m <= 20");
        used[id] = true;
    }
    Ok(rank)
}

/// Inverse of [`perm_to_index`].
pub fn index_to_perm(idx: u64, vocab: &EdgeVocab) -> Result<PermutationLabel> {
    let m = vocab.len();
    let limit = vocab
        .class_count()
        .filter(|_| m <= MAX_RANKED_LEN)
        .ok_or_else(|| IopError::InvalidLabel(format!("{m} tokens exceed rankable length")))?;
    if idx >= limit {
        return Err(IopError::Range { value: idx, limit });
    }
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut rest = idx;
    let mut ids = Vec::with_capacity(m);
    for pos in 0..m {
        let block = factorial(m - 1 - pos).expect("m <= 20");
        let digit = (rest / block) as usize;
        rest %= block;
        ids.push(remaining.remove(digit));
    }
    Ok(PermutationLabel { ids })
}

/// `false` at every already-emitted id.
pub fn permutation_mask(emitted: &[usize], m: usize) -> Vec<bool> {
    let mut mask = vec![true; m];
    for &id in emitted {
        if id < m {
            mask[id] = false;
        }
    }
    mask
}

/// Sets masked-out logits to negative infinity.
pub fn apply_mask(logits: &mut [f64], mask: &[bool]) {
    for (l, &keep) in logits.iter_mut().zip(mask) {
        if !keep {
            *l = f64::NEG_INFINITY;
        }
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding over precomputed per-step logits; with `constrained` set
/// every step masks previously emitted tokens.
pub fn greedy_decode(step_logits: &[Vec<f64>], constrained: bool) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(step_logits.len());
    for logits in step_logits {
        let mut l = logits.clone();
        if constrained {
            let mask = permutation_mask(&out, l.len());
            apply_mask(&mut l, &mask);
        }
        out.push(argmax(&l));
    }
    out
}
