//! Sentence embeddings behind a pluggable provider. The shipped provider is
//! a deterministic character-trigram hasher; a remote embedding endpoint can
//! implement the same trait.

/// Embeds text into a fixed-dimension vector. Implementations must be
/// deterministic: equal text, equal vector.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Cosine similarity; zero vectors similarity is defined as 0.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

pub const FALLBACK_DIMENSIONS: usize = 512;

/// Character-trigram counts hashed (FNV-1a) into 512 buckets, L2-normalized.
/// Texts shorter than three characters embed as a single gram; empty text
/// embeds as the zero vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackEmbedder;

impl EmbeddingProvider for FallbackEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0_f64; FALLBACK_DIMENSIONS];
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return counts;
        }
        let mut bump = |gram: &[char]| {
            let mut buf = [0u8; 4];
            let mut hash: u64 = 0xcbf29ce484222325;
            for &c in gram {
                for &b in c.encode_utf8(&mut buf).as_bytes() {
                    hash ^= b as u64;
                    hash = hash.wrapping_mul(0x100000001b3);
                }
            }
            counts[(hash % FALLBACK_DIMENSIONS as u64) as usize] += 1.0;
        };
        if chars.len() < 3 {
            bump(&chars);
        } else {
            for gram in chars.windows(3) {
                bump(gram);
            }
        }
        let norm: f64 = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut counts {
                *c /= norm;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let e = FallbackEmbedder;
        let a = e.embed("The vineyards hug the gentle slopes");
        let b = e.embed("The vineyards hug the gentle slopes");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn self_cosine_is_one() {
        let e = FallbackEmbedder;
        let v = e.embed("hello world");
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let e = FallbackEmbedder;
        let v = e.embed("");
        assert!(v.iter().all(|&x| x == 0.0));
        assert_eq!(cosine(&v, &v), 0.0);
    }

    #[test]
    fn disjoint_trigrams_are_orthogonal() {
        // Independent check that these grams land in different buckets, so
        // the orthogonality assertion is not a hash-collision accident.
        let e = FallbackEmbedder;
        let a = e.embed("abc");
        let b = e.embed("xyz");
        let (ia, _) = a.iter().enumerate().find(|(_, &x)| x > 0.0).unwrap();
        let (ib, _) = b.iter().enumerate().find(|(_, &x)| x > 0.0).unwrap();
        assert_ne!(ia, ib);
        assert!(cosine(&a, &b).abs() < 1e-12);
    }
}
