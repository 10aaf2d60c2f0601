use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Provenance, Request};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub labeled_train: usize,
    pub unlabeled_train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 900 labeled + 48,155 unlabeled training requests, 400 validation, 400 test.
    pub const BORROW: SplitCounts = SplitCounts {
        labeled_train: 900,
        unlabeled_train: 48_155,
        val: 400,
        test: 400,
    };

    pub fn total(&self) -> usize {
        self.labeled_train + self.unlabeled_train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub labeled_train: Corpus,
    pub unlabeled_train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

impl Splits {
    /// Labeled and unlabeled training requests together (success labels are kept on both).
    pub fn train(&self) -> Corpus {
        let mut requests = self.labeled_train.requests.clone();
        requests.extend(self.unlabeled_train.requests.iter().cloned());
        Corpus {
            requests,
            provenance: Provenance::Derived,
        }
    }
}

/// Partition a corpus into labeled-train, unlabeled-train, validation and test.
///
/// Labeled train, validation and test draw from fully labeled requests (in that
/// order, after a seeded shuffle); unlabeled train takes from what remains and
/// has its sentence labels stripped.
pub fn split(corpus: &Corpus, counts: SplitCounts, seed: u64) -> Result<Splits> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (labeled, rest): (Vec<usize>, Vec<usize>) = order
        .into_iter()
        .partition(|&i| corpus.requests[i].is_fully_labeled());

    let mut available = labeled.len();
    for (name, n) in [
        ("labeled_train", counts.labeled_train),
        ("val", counts.val),
        ("test", counts.test),
    ] {
        if n > available {
            return Err(Error::Size {
                partition: name,
                needed: n,
                available,
            });
        }
        available -= n;
    }
    let leftover = available + rest.len();
    if counts.unlabeled_train > leftover {
        return Err(Error::Size {
            partition: "unlabeled_train",
            needed: counts.unlabeled_train,
            available: leftover,
        });
    }

    let take = |idx: &[usize], strip: bool| -> Corpus {
        let requests: Vec<Request> = idx
            .iter()
            .map(|&i| {
                let r = &corpus.requests[i];
                if strip {
                    r.strip_labels()
                } else {
                    r.clone()
                }
            })
            .collect();
        Corpus {
            requests,
            provenance: Provenance::Derived,
        }
    };

    let a = counts.labeled_train;
    let b = a + counts.val;
    let c = b + counts.test;
    let mut pool: Vec<usize> = labeled[c..].to_vec();
    pool.extend(rest);
    // keep the unlabeled pool in shuffled order regardless of labeled status
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));

    Ok(Splits {
        labeled_train: take(&labeled[..a], false),
        val: take(&labeled[a..b], false),
        test: take(&labeled[b..c], false),
        unlabeled_train: take(&pool[..counts.unlabeled_train], true),
    })
}
