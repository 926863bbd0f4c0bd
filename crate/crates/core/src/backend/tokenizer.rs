//! Hashed character n-gram featurizer for the synthetic text tower.

use serde::{Deserialize, Serialize};

/// Word-boundary marker; control characters never occur in a `TextQuery`.
const BOUNDARY: char = '\u{1}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub buckets: u32,
    pub ngram_min: u8,
    pub ngram_max: u8,
    pub hash_seed: u64,
}

/// Sparse token vector: sorted `(bucket, weight)` pairs with unit L2 norm.
pub type SparseTokens = Vec<(u32, f64)>;

impl Tokenizer {
    fn bucket(&self, gram: &[char]) -> u32 {
        // FNV-1a over the seed and the UTF-8 bytes, then a splitmix finalizer.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in self.hash_seed.to_le_bytes() {
            feed(b);
        }
        let mut buf = [0u8; 4];
        for c in gram {
            for b in c.encode_utf8(&mut buf).bytes() {
                feed(b);
            }
        }
        let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z % self.buckets as u64) as u32
    }

    /// Lower-cases the text, pads each word with boundary markers and hashes
    /// every n-gram in `ngram_min..=ngram_max` into a bucket count vector.
    pub fn tokenize(&self, text: &str) -> SparseTokens {
        let mut counts: Vec<(u32, f64)> = Vec::new();
        for word in text.split_whitespace() {
            let mut chars = vec![BOUNDARY];
            chars.extend(word.chars().flat_map(char::to_lowercase));
            chars.push(BOUNDARY);
            for n in self.ngram_min as usize..=self.ngram_max as usize {
                if n > chars.len() {
                    break;
                }
                for gram in chars.windows(n) {
                    counts.push((self.bucket(gram), 1.0));
                }
            }
        }
        counts.sort_by_key(|&(b, _)| b);
        let mut merged: SparseTokens = Vec::with_capacity(counts.len());
        for (b, w) in counts {
            match merged.last_mut() {
                Some((last, acc)) if *last == b => *acc += w,
                _ => merged.push((b, w)),
            }
        }
        let norm = merged.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            merged.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        merged
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer {
            buckets: 1024,
            ngram_min: 2,
            ngram_max: 3,
            hash_seed: 17,
        }
    }

    #[test]
    fn identical_names_identical_tokens() {
        let t = tok();
        assert_eq!(t.tokenize("Karin Olsen"), t.tokenize("Karin Olsen"));
        assert_eq!(t.tokenize("Karin Olsen"), t.tokenize("karin  olsen"));
    }

    #[test]
    fn unit_norm_and_sorted() {
        let toks = tok().tokenize("D2;l-NOXRT");
        let n: f64 = toks.iter().map(|(_, w)| w * w).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(toks.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn seed_changes_buckets() {
        let a = tok().tokenize("alice");
        let b = Tokenizer {
            hash_seed: 18,
            ..tok()
        }
        .tokenize("alice");
        assert_ne!(a, b);
    }
}
