use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::InteractionDataset;
use crate::error::{Error, Result};
use crate::types::{Catalog, Instance};

pub const DEFAULT_RATING_THRESHOLD: f64 = 4.0;

const USER_COLUMNS: &[&str] = &["user", "user_id", "userid"];
const ITEM_COLUMNS: &[&str] = &["item", "item_id", "itemid", "movie", "movie_id", "movieid"];
const RATING_COLUMNS: &[&str] = &["rating", "score"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub interactions: u64,
    pub users_dropped: u64,
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

/// Reads a `user,item[,rating[,timestamp]]` CSV into a binary dataset.
///
/// Rows with a rating below `rating_threshold` are discarded (every row is
/// kept when there is no rating column). Duplicate pairs collapse, users with
/// fewer than two kept items are dropped, and users and items are re-indexed
/// densely in lexicographic label order.
pub fn ingest_interactions(path: &Path, rating_threshold: f64) -> Result<(InteractionDataset, IngestStats)> {
    let ingest_err = |line: u64, message: String| Error::Ingest { path: path.to_owned(), line, message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| ingest_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| ingest_err(1, e.to_string()))?.clone();
    let user_col = find_column(&headers, USER_COLUMNS).ok_or_else(|| ingest_err(1, "missing user column".into()))?;
    let item_col = find_column(&headers, ITEM_COLUMNS).ok_or_else(|| ingest_err(1, "missing item column".into()))?;
    let rating_col = find_column(&headers, RATING_COLUMNS);

    let mut stats = IngestStats::default();
    let mut baskets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        stats.rows_read += 1;
        let field = |col: usize, what: &str| {
            record.get(col).filter(|s| !s.is_empty()).ok_or_else(|| ingest_err(line, format!("missing {what} value")))
        };
        let user = field(user_col, "user")?;
        let item = field(item_col, "item")?;
        if let Some(rc) = rating_col {
            let raw = field(rc, "rating")?;
            let rating: f64 = raw.parse().map_err(|_| ingest_err(line, format!("rating {raw:?} is not a number")))?;
            if rating < rating_threshold {
                continue;
            }
        }
        stats.rows_kept += 1;
        baskets.entry(user.to_owned()).or_default().insert(item.to_owned());
    }

    let before = baskets.len();
    baskets.retain(|_, items| items.len() >= 2);
    stats.users_dropped = (before - baskets.len()) as u64;

    let labels: BTreeSet<&String> = baskets.values().flatten().collect();
    let labels: Vec<String> = labels.into_iter().cloned().collect();
    if labels.len() < 2 {
        return Err(ingest_err(0, format!("only {} distinct items survive filtering", labels.len())));
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let d = labels.len();
    let mut users = Vec::with_capacity(baskets.len());
    for (user, items) in &baskets {
        // BTreeSet iteration is label-sorted and index order follows label order
        let active: Vec<usize> = items.iter().map(|l| index[l.as_str()]).collect();
        stats.interactions += active.len() as u64;
        users.push(Instance::new(user.clone(), active, d)?);
    }
    let dataset = InteractionDataset::new(Catalog::new(labels)?, users)?;
    Ok((dataset, stats))
}
