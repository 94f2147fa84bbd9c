//! Per-view Jaccard similarity between semantic trees and the batch score
//! matrices consumed by the supervised contrastive losses.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::sts::{ViewId, ViewSets, VIEW_COUNT};

/// `|A ∩ B| / |A ∪ B|`, with `J(∅, ∅) = 0`.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Jaccard over strictly increasing id sequences via a linear merge.
pub fn jaccard_sorted(a: &[u32], b: &[u32]) -> f64 {
    let (inter, union) = merge_counts(a, b);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn merge_counts(a: &[u32], b: &[u32]) -> (usize, usize) {
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (inter, a.len() + b.len() - inter)
}

/// A view score and whether it is defined (at least one set non-empty).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewScore {
    pub score: f64,
    pub defined: bool,
}

pub fn view_score(vi: &ViewSets, vj: &ViewSets, view: ViewId) -> ViewScore {
    let (a, b) = (vi.get(view), vj.get(view));
    ViewScore {
        score: jaccard(a, b),
        defined: !(a.is_empty() && b.is_empty()),
    }
}

/// Same as [`view_score`], resolving the view from its name.
pub fn view_score_named(vi: &ViewSets, vj: &ViewSets, view: &str) -> Result<ViewScore> {
    Ok(view_score(vi, vj, view.parse()?))
}

/// Maps label tuples to dense integer ids.
#[derive(Debug, Clone, Default)]
pub struct LabelInterner {
    ids: HashMap<String, u32>,
}

impl LabelInterner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.ids.len() as u32;
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Interns every view of a tree. Path views and node views share one id
    /// space; the separator byte keeps them disjoint.
    pub fn intern_views(&mut self, views: &ViewSets) -> InternedViews {
        let mut sets: [Vec<u32>; VIEW_COUNT] = Default::default();
        for (view, labels) in views.iter() {
            let mut ids: Vec<u32> = labels.iter().map(|l| self.intern(l)).collect();
            ids.sort_unstable();
            sets[view.index()] = ids;
        }
        InternedViews { sets }
    }
}

/// View sets stored as sorted id sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct InternedViews {
    sets: [Vec<u32>; VIEW_COUNT],
}

impl InternedViews {
    pub fn get(&self, view: ViewId) -> &[u32] {
        &self.sets[view.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().all(Vec::is_empty)
    }

    pub fn score(&self, other: &InternedViews, view: ViewId) -> ViewScore {
        let (a, b) = (self.get(view), other.get(view));
        ViewScore {
            score: jaccard_sorted(a, b),
            defined: !(a.is_empty() && b.is_empty()),
        }
    }
}

/// Per-view pairwise scores over a duplicated batch `[x_1..x_N, x_1⁺..x_N⁺]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewScoreMatrix {
    size: usize,
    scores: Vec<f64>,
    defined: Vec<bool>,
}

impl ViewScoreMatrix {
    /// Number of batch entries (2N).
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    fn offset(&self, view: ViewId, i: usize, j: usize) -> usize {
        (view.index() * self.size + i) * self.size + j
    }

    /// Score of entry `(i, j)`; undefined entries read as 0.
    pub fn score(&self, view: ViewId, i: usize, j: usize) -> f64 {
        self.scores[self.offset(view, i, j)]
    }

    pub fn defined(&self, view: ViewId, i: usize, j: usize) -> bool {
        self.defined[self.offset(view, i, j)]
    }

    /// Index of the dropout duplicate of entry `i`.
    pub fn dup(&self, i: usize) -> usize {
        let half = self.size / 2;
        if i < half {
            i + half
        } else {
            i - half
        }
    }

    /// Row of view `k` restricted to the contrast set `C(i) = I \ {i}`.
    pub fn row(&self, view: ViewId, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.size)
            .filter(move |&j| j != i)
            .map(move |j| (j, self.score(view, i, j)))
    }

    /// `(1/K) Σ_k f^k_{i,j}` with undefined views counted as 0.
    pub fn mean_score(&self, i: usize, j: usize) -> f64 {
        let sum: f64 = ViewId::ALL.iter().map(|&v| self.score(v, i, j)).sum();
        sum / VIEW_COUNT as f64
    }
}

/// Scores every pair of a square batch, with no duplicate layout required.
pub fn pairwise_score_matrix(views: &[InternedViews]) -> ViewScoreMatrix {
    let n = views.len();
    let mut scores = vec![0.0; VIEW_COUNT * n * n];
    let mut defined = vec![false; VIEW_COUNT * n * n];
    for view in ViewId::ALL {
        let base = view.index() * n * n;
        for i in 0..n {
            for j in i..n {
                let s = views[i].score(&views[j], view);
                for (a, b) in [(i, j), (j, i)] {
                    scores[base + a * n + b] = s.score;
                    defined[base + a * n + b] = s.defined;
                }
            }
        }
    }
    ViewScoreMatrix {
        size: n,
        scores,
        defined,
    }
}

/// Builds the score matrix of a duplicated batch, checking the layout.
pub fn batch_score_matrix(views: &[InternedViews]) -> Result<ViewScoreMatrix> {
    if !views.len().is_multiple_of(2) {
        return Err(Error::Batch(format!(
            "duplicated batch must have even length, got {}",
            views.len()
        )));
    }
    let half = views.len() / 2;
    if let Some(i) = (0..half).find(|&i| views[i] != views[i + half]) {
        return Err(Error::Batch(format!(
            "entry {} does not carry the annotation of its original {}",
            i + half,
            i
        )));
    }
    Ok(pairwise_score_matrix(views))
}

/// Normalized view weights of one anchor over `C(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorWeights {
    /// One weight per batch entry; the anchor's own slot is always 0.
    pub weights: Vec<f64>,
    /// The row sum over `C(i)` was 0; the `(i, k)` term is dropped.
    pub skip: bool,
}

pub fn anchor_weights(m: &ViewScoreMatrix, i: usize, view: ViewId) -> AnchorWeights {
    let mut weights = vec![0.0; m.len()];
    let total: f64 = m.row(view, i).map(|(_, s)| s).sum();
    if total <= 0.0 {
        return AnchorWeights {
            weights,
            skip: true,
        };
    }
    for (j, s) in m.row(view, i) {
        weights[j] = s / total;
    }
    AnchorWeights {
        weights,
        skip: false,
    }
}
