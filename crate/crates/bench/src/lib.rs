//! Fixtures shared by the criterion benches.

use stscl_core::corpus::synthetic::{generate, SyntheticConfig, SyntheticCorpus};
use stscl_core::similarity::{InternedViews, LabelInterner};
use stscl_core::sts::{extract_view_sets, SemanticTree};

pub fn corpus(labeled: usize) -> SyntheticCorpus {
    generate(&SyntheticConfig { labeled, unlabeled: labeled, seed: 7, ..Default::default() }).expect("synthetic corpus")
}

/// Interned views of `samples ++ samples`, the layout a training batch scores.
pub fn duplicated_views(corpus: &SyntheticCorpus) -> Vec<InternedViews> {
    let mut interner = LabelInterner::new();
    let mut views: Vec<InternedViews> = corpus
        .labeled
        .iter()
        .map(|s| {
            let tree = s.annotation.clone().unwrap_or_else(|| SemanticTree::from_paths(std::iter::empty()));
            interner.intern_views(&extract_view_sets(&tree))
        })
        .collect();
    views.extend(views.clone());
    views
}
