//! Item/form bookkeeping.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One categorical item and its ordered forms.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemRecord {
    pub item_id: String,
    pub form_ids: Vec<String>,
}

/// The set of items with per-item form counts and offsets into flat
/// indicator/field vectors of length d_phi = sum_i F_i.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    items: Vec<ItemRecord>,
    offsets: Vec<usize>,
    d_phi: usize,
}

impl ItemCatalog {
    pub fn new(items: Vec<ItemRecord>) -> Result<Self> {
        let mut seen_items = HashSet::new();
        let mut offsets = Vec::with_capacity(items.len());
        let mut d_phi = 0usize;
        for rec in &items {
            if !seen_items.insert(rec.item_id.clone()) {
                return Err(Error::validation(format!(
                    "duplicate item id {:?}",
                    rec.item_id
                )));
            }
            if rec.form_ids.len() < 2 {
                return Err(Error::validation(format!(
                    "item {:?} has {} form(s); at least 2 are required",
                    rec.item_id,
                    rec.form_ids.len()
                )));
            }
            let mut seen_forms = HashSet::new();
            for f in &rec.form_ids {
                if !seen_forms.insert(f.clone()) {
                    return Err(Error::validation(format!(
                        "duplicate form id {:?} within item {:?}",
                        f, rec.item_id
                    )));
                }
            }
            offsets.push(d_phi);
            d_phi += rec.form_ids.len();
        }
        Ok(ItemCatalog {
            items,
            offsets,
            d_phi,
        })
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Total number of forms across items.
    pub fn d_phi(&self) -> usize {
        self.d_phi
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn form_count(&self, item: usize) -> usize {
        self.items[item].form_ids.len()
    }

    /// Offset of item `item`'s first form in flat vectors.
    pub fn offset(&self, item: usize) -> usize {
        self.offsets[item]
    }

    pub fn flat_index(&self, item: usize, form: usize) -> usize {
        debug_assert!(form < self.form_count(item));
        self.offsets[item] + form
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.items.iter().position(|r| r.item_id == item_id)
    }

    pub fn form_index(&self, item: usize, form_id: &str) -> Option<usize> {
        self.items[item].form_ids.iter().position(|f| f == form_id)
    }
}
