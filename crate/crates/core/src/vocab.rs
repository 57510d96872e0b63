//! Anchor-token selection over a pre-tokenized verifying corpus.
//!
//! The anchor set is the `K` rarest tokens among those that occur at least
//! once. Tokens that never occur (for example vocabulary appended by a
//! downstream model) are dropped before ranking, so they can never change the
//! selection.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint::{ModelCheckpoint, EMBED_X};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const CORPUS_MAGIC: &[u8; 4] = b"HRTC";
pub const CORPUS_VERSION: u8 = 1;
const CORPUS_PREAMBLE: usize = 24;

/// Default anchor count at full scale.
pub const DEFAULT_K: usize = 4096;

/// A pre-tokenized corpus: ids in `[0, vocab_size)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub tokens: Vec<u32>,
}

impl Corpus {
    pub fn new(vocab_size: usize, tokens: Vec<u32>) -> Result<Self> {
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab_size });
        }
        Ok(Corpus { vocab_size, tokens })
    }

    /// `len` tokens drawn from a Zipf law with exponent `s` over the
    /// vocabulary, ranks shuffled so frequency is unrelated to id.
    pub fn synthetic_zipf(rng: &mut Rng, vocab_size: usize, len: usize, s: f64) -> Self {
        let mut ranks: Vec<u32> = (0..vocab_size as u32).collect();
        for i in (1..ranks.len()).rev() {
            ranks.swap(i, rng.below(i + 1));
        }
        let mut cdf = Vec::with_capacity(vocab_size);
        let mut acc = 0.0;
        for r in 0..vocab_size {
            acc += 1.0 / ((r + 1) as f64).powf(s);
            cdf.push(acc);
        }
        let tokens = (0..len)
            .map(|_| {
                let u = rng.uniform() * acc;
                let r = cdf.partition_point(|&c| c <= u).min(vocab_size - 1);
                ranks[r]
            })
            .collect();
        Corpus { vocab_size, tokens }
    }

    /// Hash of the token stream; equals [`CorpusStats::corpus_id`].
    pub fn content_hash(&self) -> String {
        stream_hash(&self.tokens)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CORPUS_PREAMBLE + 4 * self.tokens.len());
        out.extend_from_slice(CORPUS_MAGIC);
        out.push(CORPUS_VERSION);
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(self.vocab_size as u64).to_le_bytes());
        out.extend_from_slice(&(self.tokens.len() as u64).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CORPUS_MAGIC {
            return Err(Error::BadMagic {
                expected: "HRTC".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
            });
        }
        if bytes.len() < CORPUS_PREAMBLE {
            return Err(Error::Truncated("corpus preamble".into()));
        }
        if bytes[4] != CORPUS_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let vocab_size = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let body = &bytes[CORPUS_PREAMBLE..];
        if count.checked_mul(4) != Some(body.len() as u64) {
            return Err(Error::Truncated(format!(
                "corpus declares {count} tokens, body holds {} bytes",
                body.len()
            )));
        }
        let tokens = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Corpus::new(vocab_size, tokens)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Corpus::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Per-token occurrence counts over a verifying corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub counts: Vec<u64>,
    pub vocab_size: usize,
    /// Content hash of the token stream the counts came from.
    pub corpus_id: String,
}

const SHARD: usize = 1 << 16;

/// Exact occurrence counts. The stream is counted in shards whose partial
/// counts are summed; addition makes the merge order irrelevant.
pub fn count_frequencies(stream: &[u32], vocab_size: usize) -> Result<CorpusStats> {
    if let Some(&id) = stream.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab_size });
    }
    let counts = stream
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut c = vec![0u64; vocab_size];
            for &t in chunk {
                c[t as usize] += 1;
            }
            c
        })
        .reduce(
            || vec![0u64; vocab_size],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(CorpusStats {
        counts,
        vocab_size,
        corpus_id: stream_hash(stream),
    })
}

fn stream_hash(stream: &[u32]) -> String {
    let mut bytes = Vec::with_capacity(stream.len() * 4);
    for t in stream {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// Ordered anchor token ids, strictly increasing, with the id of the corpus
/// they were selected from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSet {
    token_ids: Vec<u32>,
    corpus_id: String,
}

impl AnchorSet {
    pub fn new(mut token_ids: Vec<u32>) -> Result<Self> {
        token_ids.sort_unstable();
        if token_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate anchor token".into()));
        }
        if token_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(AnchorSet {
            token_ids,
            corpus_id: String::new(),
        })
    }

    pub fn with_corpus_id(mut self, corpus_id: impl Into<String>) -> Self {
        self.corpus_id = corpus_id.into();
        self
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn k(&self) -> usize {
        self.token_ids.len()
    }

    /// Hash of the id list alone.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::with_capacity(4 * self.token_ids.len());
        for t in &self.token_ids {
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}

/// The `k` tokens with the smallest positive counts, ties broken by ascending
/// id, returned in ascending id order.
pub fn select_anchor_tokens(stats: &CorpusStats, k: usize) -> Result<AnchorSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    let mut present: Vec<(u64, u32)> = stats
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(id, &c)| (c, id as u32))
        .collect();
    if present.len() < k {
        return Err(Error::NotEnoughTokens {
            available: present.len(),
            requested: k,
        });
    }
    present.sort_unstable();
    Ok(AnchorSet::new(present[..k].iter().map(|&(_, id)| id).collect())?
        .with_corpus_id(stats.corpus_id.clone()))
}

/// Rows of `embed.x` at the anchor ids, in anchor order (`K × d`).
pub fn build_x_hat(ckpt: &ModelCheckpoint, anchors: &AnchorSet) -> Result<Matrix> {
    let x = ckpt.tensor(EMBED_X)?;
    let (v, d) = (x.shape[0], x.shape[1]);
    let mut data = Vec::with_capacity(anchors.k() * d);
    for &id in anchors.token_ids() {
        if id as usize >= v {
            return Err(Error::TokenOutOfRange { id, vocab_size: v });
        }
        data.extend_from_slice(&x.data[id as usize * d..(id as usize + 1) * d]);
    }
    Matrix::from_vec(anchors.k(), d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::ArchitectureDescriptor;
    use crate::model::{augment_vocabulary, generate_random_model};
    use proptest::prelude::{prop, prop_assert_eq, proptest};

    /// Straight loop over the stream, for comparison with the sharded count.
    fn brute_counts(stream: &[u32], v: usize) -> Vec<u64> {
        (0..v as u32)
            .map(|id| stream.iter().filter(|&&t| t == id).count() as u64)
            .collect()
    }

    #[test]
    fn counts_small_stream() {
        let s = [0, 0, 2, 1, 2, 2];
        assert_eq!(brute_counts(&s, 4), vec![2, 1, 3, 0]);
        assert_eq!(count_frequencies(&s, 4).unwrap().counts, vec![2, 1, 3, 0]);
    }

    #[test]
    fn empty_stream_counts_zero() {
        assert_eq!(count_frequencies(&[], 4).unwrap().counts, vec![0; 4]);
    }

    #[test]
    fn out_of_range_id() {
        assert!(matches!(
            count_frequencies(&[9], 4),
            Err(Error::TokenOutOfRange { id: 9, .. })
        ));
    }

    #[test]
    fn selects_rarest_present_tokens() {
        let stats = CorpusStats {
            counts: vec![5, 1, 3, 0],
            vocab_size: 4,
            corpus_id: String::new(),
        };
        assert_eq!(select_anchor_tokens(&stats, 2).unwrap().token_ids(), &[1, 2]);
        assert!(matches!(
            select_anchor_tokens(&stats, 4),
            Err(Error::NotEnoughTokens { available: 3, requested: 4 })
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let stats = CorpusStats {
            counts: vec![2, 1, 1, 1, 2],
            vocab_size: 5,
            corpus_id: String::new(),
        };
        assert_eq!(select_anchor_tokens(&stats, 2).unwrap().token_ids(), &[1, 2]);
        assert_eq!(select_anchor_tokens(&stats, 4).unwrap().token_ids(), &[0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn sharded_count_matches_brute_force(stream in prop::collection::vec(0u32..20, 0..300)) {
            prop_assert_eq!(count_frequencies(&stream, 20).unwrap().counts, brute_counts(&stream, 20));
        }

        #[test]
        fn selection_matches_brute_sort_and_ignores_unseen_vocab(
            counts in prop::collection::vec(0u64..6, 1..40),
            extra in 0usize..10,
            k in 1usize..10,
        ) {
            let stats = CorpusStats { counts: counts.clone(), vocab_size: counts.len(), corpus_id: String::new() };
            let mut oracle: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
            oracle.sort_by_key(|&i| (counts[i], i));
            let got = select_anchor_tokens(&stats, k);
            if oracle.len() < k {
                prop_assert_eq!(got.is_err(), true);
            } else {
                let mut want: Vec<u32> = oracle[..k].iter().map(|&i| i as u32).collect();
                want.sort();
                let got = got.unwrap();
                prop_assert_eq!(got.token_ids(), want.as_slice());
                let mut longer = counts.clone();
                longer.extend(std::iter::repeat(0).take(extra));
                let aug = CorpusStats { vocab_size: longer.len(), counts: longer, corpus_id: String::new() };
                prop_assert_eq!(select_anchor_tokens(&aug, k).unwrap(), got);
            }
        }

        #[test]
        fn stream_order_does_not_matter(mut stream in prop::collection::vec(0u32..30, 20..200)) {
            let a = count_frequencies(&stream, 30).unwrap();
            stream.reverse();
            let b = count_frequencies(&stream, 30).unwrap();
            let ids = |s: &CorpusStats| select_anchor_tokens(s, 3).ok().map(|a| a.token_ids().to_vec());
            prop_assert_eq!(ids(&a), ids(&b));
        }
    }

    #[test]
    fn x_hat_rows_and_shape() {
        let arch = ArchitectureDescriptor::toy(1, 8, 16, 1);
        let ckpt = generate_random_model(&arch, &mut Rng::new(1)).unwrap();
        let x = ckpt.matrix(EMBED_X).unwrap();
        let xh = build_x_hat(&ckpt, &AnchorSet::new(vec![0]).unwrap()).unwrap();
        assert_eq!(xh.row(0), x.row(0));
        let xh = build_x_hat(&ckpt, &AnchorSet::new(vec![3, 1, 7]).unwrap()).unwrap();
        assert_eq!(xh.shape(), (3, 8));
        assert_eq!(xh.row(0), x.row(1));
        assert_eq!(xh.row(2), x.row(7));
        assert!(build_x_hat(&ckpt, &AnchorSet::new(vec![16]).unwrap()).is_err());
    }

    #[test]
    fn x_hat_ignores_rows_outside_anchors() {
        let arch = ArchitectureDescriptor::toy(1, 8, 16, 1);
        let ckpt = generate_random_model(&arch, &mut Rng::new(1)).unwrap();
        let aug = augment_vocabulary(&ckpt, 4, &mut Rng::new(2)).unwrap();
        let anchors = AnchorSet::new(vec![2, 5, 11]).unwrap();
        assert_eq!(build_x_hat(&ckpt, &anchors).unwrap(), build_x_hat(&aug, &anchors).unwrap());
    }

    #[test]
    fn corpus_file_roundtrip_and_truncation() {
        let c = Corpus::synthetic_zipf(&mut Rng::new(3), 50, 500, 1.1);
        let bytes = c.to_bytes();
        assert_eq!(Corpus::from_bytes(&bytes).unwrap(), c);
        assert!(matches!(
            Corpus::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Corpus::from_bytes(&bad), Err(Error::BadMagic { .. })));
    }
}
