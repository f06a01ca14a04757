use super::PerceptionError;

/// Hierarchical frame-pair sampling for a sequence of `n` frames.
///
/// Level `l` pairs frames `2^l` apart whose first index is a multiple of
/// `2^(l-1)`; level 0 takes every adjacent pair. Levels run up to
/// `⌊log₂(n − 1)⌋`. Pairs are returned as `(m, n)` with `m < n`, grouped by
/// level and ascending within a level, without duplicates.
pub fn hierarchical_pairs(n: usize) -> Result<Vec<(usize, usize)>, PerceptionError> {
    if n < 2 {
        return Err(PerceptionError::SequenceTooShort(n));
    }
    let max_level = (n - 1).ilog2();
    let mut out = Vec::new();
    for level in 0..=max_level {
        let gap = 1usize << level;
        let stride = if level == 0 { 1 } else { 1usize << (level - 1) };
        let mut m = 0;
        while m + gap < n {
            out.push((m, m + gap));
            m += stride;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Enumerates every ordered pair and applies the level predicate literally.
    fn predicate_oracle(n: usize) -> BTreeSet<(usize, usize)> {
        let levels = ((n - 1) as f64).log2().floor() as u32;
        let mut set = BTreeSet::new();
        for m in 0..n {
            for k in 0..n {
                for l in 0..=levels {
                    let gap = 2f64.powi(l as i32);
                    let modulus = 2f64.powi(l as i32 - 1);
                    let diff = (m as f64 - k as f64).abs();
                    // m mod 2^(l-1) == 0; with 2^-1 < 1 every integer qualifies
                    let divisible = modulus < 1.0 || (m as f64 % modulus) == 0.0;
                    if diff == gap && divisible {
                        set.insert((m.min(k), m.max(k)));
                    }
                }
            }
        }
        set
    }

    #[test]
    fn hand_enumerated_examples() {
        assert_eq!(hierarchical_pairs(2).unwrap(), vec![(0, 1)]);
        let got: BTreeSet<_> = hierarchical_pairs(3).unwrap().into_iter().collect();
        assert_eq!(got, BTreeSet::from([(0, 1), (1, 2), (0, 2)]));
        let got: BTreeSet<_> = hierarchical_pairs(5).unwrap().into_iter().collect();
        assert_eq!(
            got,
            BTreeSet::from([(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 3), (2, 4), (0, 4)])
        );
    }

    #[test]
    fn too_short() {
        assert_eq!(hierarchical_pairs(1), Err(PerceptionError::SequenceTooShort(1)));
        assert_eq!(hierarchical_pairs(0), Err(PerceptionError::SequenceTooShort(0)));
    }

    #[test]
    fn matches_predicate_oracle_up_to_64() {
        for n in 2..=64 {
            let got = hierarchical_pairs(n).unwrap();
            let set: BTreeSet<_> = got.iter().copied().collect();
            assert_eq!(set.len(), got.len(), "duplicates for n={n}");
            assert_eq!(set, predicate_oracle(n), "n={n}");
        }
    }
}
