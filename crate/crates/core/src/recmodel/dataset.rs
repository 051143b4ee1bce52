use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Catalog, Instance};

/// Binary user-item interactions over a fixed catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    catalog: Catalog,
    users: Vec<Instance>,
    popularity: Vec<u64>,
}

impl InteractionDataset {
    pub fn new(catalog: Catalog, users: Vec<Instance>) -> Result<Self> {
        let d = catalog.item_count();
        let mut popularity = vec![0u64; d];
        for u in &users {
            for &t in u.active_items() {
                if t >= d {
                    return Err(Error::InvalidInput(format!(
                        "user {:?} references item {t} outside catalog of {d}",
                        u.user_id()
                    )));
                }
                popularity[t] += 1;
            }
        }
        Ok(InteractionDataset { catalog, users, popularity })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn users(&self) -> &[Instance] {
        &self.users
    }

    pub fn popularity(&self) -> &[u64] {
        &self.popularity
    }

    pub fn item_count(&self) -> usize {
        self.catalog.item_count()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.users.iter().map(Instance::d_prime).sum()
    }

    pub fn find_user(&self, user_id: &str) -> Option<(usize, &Instance)> {
        self.users.iter().enumerate().find(|(_, u)| u.user_id() == user_id)
    }

    /// Re-expresses the users over another catalog by item label. Items the
    /// catalog does not know are dropped, as are users left with no items.
    pub fn align_to(&self, catalog: &Catalog) -> Result<InteractionDataset> {
        let index: HashMap<&str, usize> = catalog.labels().iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut users = Vec::with_capacity(self.users.len());
        for u in &self.users {
            let items: Vec<usize> = u
                .active_items()
                .iter()
                .filter_map(|&t| self.catalog.label(t).and_then(|l| index.get(l).copied()))
                .collect();
            if !items.is_empty() {
                users.push(Instance::from_unsorted(u.user_id(), items, catalog.item_count())?);
            }
        }
        InteractionDataset::new(catalog.clone(), users)
    }

    /// Writes the `user,item` interaction CSV, one row per interaction,
    /// after optional `#` comment lines.
    pub fn write_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for c in comments {
            writeln!(file, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["user", "item"])?;
        for u in &self.users {
            for &t in u.active_items() {
                w.write_record([u.user_id(), self.catalog.label(t).unwrap_or_default()])?;
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
        Ok(())
    }
}
