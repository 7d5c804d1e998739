//! Per-subject, per-class sample counts.

use std::collections::BTreeMap;

use crate::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectClassTable {
    /// Sorted subject ids.
    pub subjects: Vec<u32>,
    /// `counts[row][class]`, rows aligned with `subjects`.
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub class_totals: Vec<u64>,
    pub total: u64,
}

pub fn subject_class_table(ds: &Dataset) -> SubjectClassTable {
    let num_classes = ds.label_names.len();
    let mut per_subject: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for w in &ds.windows {
        per_subject.entry(w.subject_id).or_insert_with(|| vec![0; num_classes])[w.label] += 1;
    }
    let subjects: Vec<u32> = per_subject.keys().copied().collect();
    let counts: Vec<Vec<u64>> = per_subject.values().cloned().collect();
    let row_totals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let mut class_totals = vec![0u64; num_classes];
    for row in &counts {
        for (c, v) in row.iter().enumerate() {
            class_totals[c] += v;
        }
    }
    let total = class_totals.iter().sum();
    SubjectClassTable {
        subjects,
        counts,
        row_totals,
        class_totals,
        total,
    }
}

impl SubjectClassTable {
    pub fn row(&self, subject: u32) -> Option<&[u64]> {
        let idx = self.subjects.iter().position(|&s| s == subject)?;
        Some(&self.counts[idx])
    }

    /// Plain-text table with a totals row, for `inspect`.
    pub fn render(&self, label_names: &[String]) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:>10}", "subject"));
        for name in label_names {
            out.push_str(&format!("{name:>10}"));
        }
        out.push_str(&format!("{:>10}\n", "total"));
        for (i, subject) in self.subjects.iter().enumerate() {
            out.push_str(&format!("{subject:>10}"));
            for v in &self.counts[i] {
                out.push_str(&format!("{v:>10}"));
            }
            out.push_str(&format!("{:>10}\n", self.row_totals[i]));
        }
        out.push_str(&format!("{:>10}", "total"));
        for v in &self.class_totals {
            out.push_str(&format!("{v:>10}"));
        }
        out.push_str(&format!("{:>10}\n", self.total));
        out
    }
}
