//! Word error rate scoring via minimal-cost Levenshtein alignment.

/// Edit counts of one (reference, hypothesis) pair or an accumulated set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WerCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// (S + I + D) / N; may exceed 1. An empty reference scores 0 against an
    /// empty hypothesis and infinity otherwise.
    pub fn wer(&self) -> f64 {
        if self.ref_words == 0 {
            if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.errors() as f64 / self.ref_words as f64
        }
    }

    pub fn add(&mut self, other: &WerCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_words += other.ref_words;
    }
}

/// Minimal-cost word alignment with unit costs. Ties between alignments of
/// equal cost prefer substitutions over deletions over insertions; this
/// maximizes the substitution count, which pins the whole count triple
/// (given the cost and S, the insertion/deletion split is forced by the
/// length difference), so the reported counts are deterministic and
/// symmetric under swapping reference and hypothesis.
pub fn edit_distance_wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerCounts {
    let n = reference.len();
    let m = hypothesis.len();
    // per cell: (total cost, substitutions); lower cost wins, then more
    // substitutions
    let mut dp = vec![(0usize, 0usize); (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        dp[idx(i, 0)] = (i, 0);
    }
    for j in 1..=m {
        dp[idx(0, j)] = (j, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let hit = reference[i - 1] == hypothesis[j - 1];
            let diag = dp[idx(i - 1, j - 1)];
            let mut best = if hit {
                diag
            } else {
                (diag.0 + 1, diag.1 + 1)
            };
            for other in [dp[idx(i - 1, j)], dp[idx(i, j - 1)]] {
                let cand = (other.0 + 1, other.1);
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 > best.1) {
                    best = cand;
                }
            }
            dp[idx(i, j)] = best;
        }
    }
    let (cost, substitutions) = dp[idx(n, m)];
    // I + D = cost - S and D - I = n - m fix the split
    let rest = cost - substitutions;
    let (insertions, deletions) = if n >= m {
        let d = (rest + (n - m)) / 2;
        (rest - d, d)
    } else {
        let i = (rest + (m - n)) / 2;
        (i, rest - i)
    };
    WerCounts {
        substitutions,
        insertions,
        deletions,
        ref_words: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_deletion() {
        let c = edit_distance_wer(&["a", "b", "c"], &["a", "c"]);
        assert_eq!(c.deletions, 1);
        assert_eq!(c.substitutions, 0);
        assert_eq!(c.insertions, 0);
        assert!((c.wer() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_has_no_errors() {
        let words = ["x", "y", "z"];
        let c = edit_distance_wer(&words, &words);
        assert_eq!(c.errors(), 0);
        assert_eq!(c.wer(), 0.0);
    }

    #[test]
    fn wer_may_exceed_one() {
        let c = edit_distance_wer(&["a"], &["b", "c"]);
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.insertions, 1);
        assert_eq!(c.wer(), 2.0);
    }

    #[test]
    fn empty_reference() {
        let none: [&str; 0] = [];
        assert_eq!(edit_distance_wer(&none, &none).wer(), 0.0);
        assert!(edit_distance_wer(&none, &["a"]).wer().is_infinite());
        let c = edit_distance_wer(&["a", "b"], &none);
        assert_eq!(c.deletions, 2);
    }

    #[test]
    fn substitution_preferred_on_ties() {
        // "a" -> "b" could be del+ins; substitution must win
        let c = edit_distance_wer(&["a"], &["b"]);
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.insertions, 0);
        assert_eq!(c.deletions, 0);
    }

    fn random_seq(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<u32> {
        let len = rng.gen_range(0..=max_len);
        (0..len).map(|_| rng.gen_range(0..4)).collect()
    }

    #[test]
    fn swap_symmetry_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_seq(&mut rng, 6);
            let b = random_seq(&mut rng, 6);
            let c = random_seq(&mut rng, 6);
            let ab = edit_distance_wer(&a, &b);
            let ba = edit_distance_wer(&b, &a);
            // swapping ref and hyp exchanges insertions and deletions
            assert_eq!(ab.errors(), ba.errors());
            assert_eq!(ab.substitutions, ba.substitutions);
            assert_eq!(ab.insertions, ba.deletions);
            assert_eq!(ab.deletions, ba.insertions);
            // triangle inequality on total edits
            let ac = edit_distance_wer(&a, &c);
            let cb = edit_distance_wer(&c, &b);
            assert!(ab.errors() <= ac.errors() + cb.errors());
        }
    }
}
