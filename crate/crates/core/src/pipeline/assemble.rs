//! Rebalancing a manifest with tagged synthetic images.

use std::collections::HashMap;

use crate::dataset::{AttributeManifest, AttributeRecord};

/// Smallest `k ≤ available` with `(p + k) / (n + k) ≥ rho`, or `available`
/// when no such `k` exists.
pub fn required_additions(positives: usize, total: usize, rho: f64, available: usize) -> usize {
    let reached = |k: usize| {
        let (p, n) = ((positives + k) as f64, (total + k) as f64);
        p >= rho * n - 1e-12 * n
    };
    (0..=available).find(|&k| reached(k)).unwrap_or(available)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyLine {
    pub attribute: String,
    pub rate_before: f64,
    pub available: usize,
    pub added: usize,
    /// Rate in the final manifest, after every attribute's additions.
    pub rate_after: f64,
}

impl AssemblyLine {
    pub fn to_text(&self) -> String {
        let a = &self.attribute;
        format!(
            "{a}.rate_before = {}\n{a}.available = {}\n{a}.added = {}\n{a}.rate_after = {}\n",
            self.rate_before, self.available, self.added, self.rate_after
        )
    }
}

fn rate(m: &AttributeManifest, col: usize) -> (usize, f64) {
    let p = m.records.iter().filter(|r| r.values[col] == 1).count();
    (p, if m.is_empty() { 0.0 } else { p as f64 / m.len() as f64 })
}

/// Processes flagged attributes in order. Each added record is +1 for its
/// attribute and −1 for all others; originals are kept unchanged.
pub fn assemble_manifest(
    m: &AttributeManifest,
    flagged: &[String],
    candidates: &HashMap<String, Vec<String>>,
    rho: f64,
) -> (AttributeManifest, Vec<AssemblyLine>) {
    let mut out = m.clone();
    let mut lines = Vec::new();
    let width = m.attribute_names.len();
    for attr in flagged {
        let Some(col) = m.attribute_index(attr) else { continue };
        let (p, rate_before) = rate(&out, col);
        let pool = candidates.get(attr).map(Vec::as_slice).unwrap_or(&[]);
        let k = required_additions(p, out.len(), rho, pool.len());
        for id in &pool[..k] {
            let mut values = vec![-1i8; width];
            values[col] = 1;
            out.records.push(AttributeRecord {
                image_id: id.clone(),
                values,
            });
        }
        lines.push(AssemblyLine {
            attribute: attr.clone(),
            rate_before,
            available: pool.len(),
            added: k,
            rate_after: 0.0,
        });
    }
    for line in &mut lines {
        let col = m.attribute_index(&line.attribute).expect("attribute checked above");
        line.rate_after = rate(&out, col).1;
    }
    (out, lines)
}
