use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::Instance;

pub const DEFAULT_BUCKETS: usize = 8;

/// Equal-size user buckets ordered by interaction count; bucket 0 holds the
/// sparsest users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SparsitySegmentation {
    assignments: BTreeMap<String, usize>,
    buckets: Vec<BucketSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BucketSummary {
    pub rank: usize,
    pub users: usize,
    pub min_d_prime: usize,
    pub max_d_prime: usize,
}

impl SparsitySegmentation {
    pub fn rank_of(&self, user_id: &str) -> Option<usize> {
        self.assignments.get(user_id).copied()
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// d' range and size of every bucket.
    pub fn buckets(&self) -> &[BucketSummary] {
        &self.buckets
    }

    pub fn assignments(&self) -> &BTreeMap<String, usize> {
        &self.assignments
    }
}

/// Sorts users by `(d', user_id)` and cuts them into `n_buckets` contiguous
/// groups whose sizes differ by at most one, the larger groups first.
pub fn segment_by_sparsity(users: &[Instance], n_buckets: usize) -> Result<SparsitySegmentation> {
    if n_buckets == 0 {
        return Err(Error::Config("bucket count must be positive".into()));
    }
    if users.len() < n_buckets {
        return Err(Error::InvalidInput(format!("{} users cannot fill {n_buckets} sparsity buckets", users.len())));
    }
    let mut order: Vec<&Instance> = users.iter().collect();
    order.sort_by(|a, b| a.d_prime().cmp(&b.d_prime()).then_with(|| a.user_id().cmp(b.user_id())));

    let base = users.len() / n_buckets;
    let extra = users.len() % n_buckets;
    let mut assignments = BTreeMap::new();
    let mut buckets = Vec::with_capacity(n_buckets);
    let mut start = 0;
    for rank in 0..n_buckets {
        let size = base + usize::from(rank < extra);
        let members = &order[start..start + size];
        for u in members {
            if assignments.insert(u.user_id().to_owned(), rank).is_some() {
                return Err(Error::InvalidInput(format!("duplicate user id {:?}", u.user_id())));
            }
        }
        buckets.push(BucketSummary {
            rank,
            users: size,
            min_d_prime: members.first().map_or(0, |u| u.d_prime()),
            max_d_prime: members.last().map_or(0, |u| u.d_prime()),
        });
        start += size;
    }
    Ok(SparsitySegmentation { assignments, buckets })
}
