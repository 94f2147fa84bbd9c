//! Scalar re-implementation of the contrastive losses in 320-bit fixed
//! point, written directly from the sum formulas without the library's
//! graph, interning or masking code.

use std::collections::BTreeSet;

use super::bigfloat::{sum, Big};

pub const K: usize = 10;

/// Layer windows `(first, last)` of the ten views in canonical order
/// D, I, S, V, DI, IS, SV, DIS, ISV, DISV.
pub const WINDOWS: [(usize, usize); K] = [(0, 0), (1, 1), (2, 2), (3, 3), (0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)];

pub type Path = [Option<&'static str>; 4];

/// Set of label tuples of one view: windows of a path whose layers are
/// all present, lower-cased.
pub fn view_set(tree: &[Path], view: usize) -> BTreeSet<Vec<String>> {
    let (a, b) = WINDOWS[view];
    tree.iter()
        .filter(|p| p[a..=b].iter().all(Option::is_some))
        .map(|p| p[a..=b].iter().map(|l| l.unwrap().trim().to_lowercase()).collect())
        .collect()
}

/// Exact Jaccard score; 0 when both sets are empty.
pub fn jaccard(x: &BTreeSet<Vec<String>>, y: &BTreeSet<Vec<String>>) -> Big {
    let union = x.union(y).count();
    if union == 0 {
        return Big::zero();
    }
    Big::ratio(x.intersection(y).count(), union)
}

pub struct HeadValues {
    /// Row-major `[H, H]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// `Norm(W z + b)` in high precision.
pub fn project(head: &HeadValues, z: &[f64]) -> Vec<Big> {
    let h = z.len();
    let y: Vec<Big> = (0..h)
        .map(|r| sum((0..h).map(|c| Big::from_f64(head.w[r * h + c]) * Big::from_f64(z[c]))) + Big::from_f64(head.b[r]))
        .collect();
    let norm = sum(y.iter().map(|v| v.clone() * v.clone())).sqrt();
    y.into_iter().map(|v| v / norm.clone()).collect()
}

/// `log softmax` over `C(i) = {c ≠ i}` of `p_i·p_c / τ`, evaluated at `j`.
pub struct LogProbs {
    table: Vec<Vec<Big>>,
}

impl LogProbs {
    pub fn new(proj: &[Vec<Big>], tau: f64) -> Self {
        let n = proj.len();
        let inv_tau = Big::one() / Big::from_f64(tau);
        let sim = |i: usize, j: usize| sum(proj[i].iter().zip(&proj[j]).map(|(a, b)| a.clone() * b.clone())) * inv_tau.clone();
        let mut table = vec![vec![Big::zero(); n]; n];
        for (i, row) in table.iter_mut().enumerate() {
            let lse = sum((0..n).filter(|&c| c != i).map(|c| sim(i, c).exp())).ln();
            for j in (0..n).filter(|&j| j != i) {
                row[j] = sim(i, j) - lse.clone();
            }
        }
        LogProbs { table }
    }

    pub fn get(&self, i: usize, j: usize) -> Big {
        self.table[i][j].clone()
    }
}

/// Batch of `2N` rows: `trees[i % N]` annotates row `i`.
pub struct OracleBatch<'a> {
    pub z: &'a [Vec<f64>],
    pub trees: &'a [Vec<Path>],
    pub tau: f64,
}

impl OracleBatch<'_> {
    fn n2(&self) -> usize {
        self.z.len()
    }

    fn dup(&self, i: usize) -> usize {
        let n = self.n2() / 2;
        (i + n) % (2 * n)
    }

    fn f(&self, view: usize, i: usize, j: usize) -> Big {
        let n = self.n2() / 2;
        jaccard(&view_set(&self.trees[i % n], view), &view_set(&self.trees[j % n], view))
    }

    fn log_probs(&self, head: &HeadValues) -> LogProbs {
        let proj: Vec<Vec<Big>> = self.z.iter().map(|z| project(head, z)).collect();
        LogProbs::new(&proj, self.tau)
    }

    /// `−Σ_i Σ_{j≠i} (1/K Σ_k f^k_ij) log p_ij`.
    pub fn sup_single(&self, head: &HeadValues) -> Big {
        let lp = self.log_probs(head);
        let n2 = self.n2();
        let mut total = Big::zero();
        for i in 0..n2 {
            for j in (0..n2).filter(|&j| j != i) {
                let w = sum((0..K).map(|k| self.f(k, i, j))) / Big::from_int(K as i64);
                total = total - w * lp.get(i, j);
            }
        }
        total
    }

    /// `−Σ_i Σ_k Σ_{j≠i} (f^k_ij / Σ_{m≠i} f^k_im) log p^k_ij`, skipping
    /// anchors whose row sum is zero.
    pub fn sup_multi(&self, heads: &[HeadValues]) -> Big {
        let n2 = self.n2();
        let mut total = Big::zero();
        for (k, head) in heads.iter().enumerate() {
            let lp = self.log_probs(head);
            for i in 0..n2 {
                let row = sum((0..n2).filter(|&m| m != i).map(|m| self.f(k, i, m)));
                if row.is_zero() {
                    continue;
                }
                for j in (0..n2).filter(|&j| j != i) {
                    total = total - self.f(k, i, j) / row.clone() * lp.get(i, j);
                }
            }
        }
        total
    }

    /// `−Σ_i log p_{i, i⁺}`.
    pub fn self_single(&self, head: &HeadValues) -> Big {
        let lp = self.log_probs(head);
        -sum((0..self.n2()).map(|i| lp.get(i, self.dup(i))))
    }

    pub fn self_multi(&self, heads: &[HeadValues]) -> Big {
        sum(heads.iter().map(|h| self.self_single(h)))
    }
}
