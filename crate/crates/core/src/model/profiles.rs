//! Anchor and floating profiles over a rectangular region.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::catalog::ItemCatalog;

/// The region rectangle [0, width] x [0, height] in normalized units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub width: f64,
    pub height: f64,
}

impl Default for Region {
    fn default() -> Self {
        Region {
            width: 1.0,
            height: 0.9,
        }
    }
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// Profile with a known location.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorProfile {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// Presence indicators, length d_phi.
    pub indicators: Vec<u8>,
}

/// Profile whose location is unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatProfile {
    pub id: String,
    pub indicators: Vec<u8>,
}

/// All profiles for one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub region: Region,
    pub anchors: Vec<AnchorProfile>,
    pub floats: Vec<FloatProfile>,
}

impl ProfileSet {
    pub fn validate(&self, catalog: &ItemCatalog) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::validation("at least one anchor is required"));
        }
        let mut ids = HashSet::new();
        for a in &self.anchors {
            if !ids.insert(a.id.clone()) {
                return Err(Error::validation(format!("duplicate profile id {:?}", a.id)));
            }
            if !self.region.contains(a.x, a.y) {
                return Err(Error::validation(format!(
                    "anchor {:?} at ({}, {}) lies outside the region",
                    a.id, a.x, a.y
                )));
            }
            if a.indicators.len() != catalog.d_phi() {
                return Err(Error::dims(format!(
                    "anchor {:?} has {} indicators, expected {}",
                    a.id,
                    a.indicators.len(),
                    catalog.d_phi()
                )));
            }
        }
        for f in &self.floats {
            if !ids.insert(f.id.clone()) {
                return Err(Error::validation(format!("duplicate profile id {:?}", f.id)));
            }
            if f.indicators.len() != catalog.d_phi() {
                return Err(Error::dims(format!(
                    "float {:?} has {} indicators, expected {}",
                    f.id,
                    f.indicators.len(),
                    catalog.d_phi()
                )));
            }
        }
        Ok(())
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn n_floats(&self) -> usize {
        self.floats.len()
    }

    pub fn anchor_locations(&self) -> Vec<(f64, f64)> {
        self.anchors.iter().map(|a| (a.x, a.y)).collect()
    }
}
