use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sts::{ViewId, VIEW_COUNT};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// One normalized linear map `σ(z) = Norm(W z + b)` with `W: [H, H]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub w: ParamId,
    pub b: ParamId,
}

/// Starting point of the projection weights `W`; biases always start at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// `W = I`, so every head starts as plain normalization of `z`.
    #[default]
    Identity,
    /// `W ~ N(0, 0.02²)`. From a randomly initialized encoder, where all
    /// pooled vectors nearly coincide, this traps the contrastive losses at
    /// their uniform value: the shared component `W z̄ + b` grows faster
    /// than the per-sample differences.
    Normal,
}

/// The single-target head and one head per view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionHeads {
    hidden: usize,
    single: Head,
    views: [Head; VIEW_COUNT],
}

fn head_name(view: Option<ViewId>) -> String {
    match view {
        None => "head.single".to_string(),
        Some(v) => format!("head.view.{}", v.as_str()),
    }
}

impl ProjectionHeads {
    /// Registers all eleven heads. `seed` only matters for
    /// [`HeadInit::Normal`].
    pub fn init(hidden: usize, store: &mut ParamStore, seed: u64, init: HeadInit) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("projection heads need hidden > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        for view in std::iter::once(None).chain(ViewId::ALL.into_iter().map(Some)) {
            let name = head_name(view);
            let w: Vec<f64> = match init {
                HeadInit::Identity => (0..hidden * hidden).map(|k| if k / hidden == k % hidden { 1.0 } else { 0.0 }).collect(),
                HeadInit::Normal => (0..hidden * hidden).map(|_| normal.sample(&mut rng)).collect(),
            };
            store.insert(format!("{name}.w"), Tensor::new(vec![hidden, hidden], w)?);
            store.insert(format!("{name}.b"), Tensor::zeros(vec![hidden]));
        }
        Self::attach(hidden, store)
    }

    pub fn attach(hidden: usize, store: &ParamStore) -> Result<Self> {
        let find = |view: Option<ViewId>| -> Result<Head> {
            let name = head_name(view);
            let get = |suffix: &str, shape: &[usize]| -> Result<ParamId> {
                let full = format!("{name}.{suffix}");
                let id = store
                    .id(&full)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{full}`")))?;
                if store.get(id).shape() != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{full}` has shape {:?}, expected {shape:?}",
                        store.get(id).shape()
                    )));
                }
                Ok(id)
            };
            Ok(Head { w: get("w", &[hidden, hidden])?, b: get("b", &[hidden])? })
        };
        let single = find(None)?;
        let mut views = [single; VIEW_COUNT];
        for v in ViewId::ALL {
            views[v.index()] = find(Some(v))?;
        }
        Ok(ProjectionHeads { hidden, single, views })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn single(&self) -> Head {
        self.single
    }

    pub fn view(&self, view: ViewId) -> Head {
        self.views[view.index()]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.single)
            .chain(self.views)
            .flat_map(|h| [h.w, h.b])
            .collect()
    }

    /// Copies the single head's values into every view head.
    pub fn tie_views_to_single(&self, store: &mut ParamStore) {
        let w = store.get(self.single.w).clone();
        let b = store.get(self.single.b).clone();
        for h in self.views {
            *store.get_mut(h.w) = w.clone();
            *store.get_mut(h.b) = b.clone();
        }
    }

    /// Projects every row of `z: [m, H]` to a unit vector.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, head: Head, z: Var) -> Result<Var> {
        let w = g.param(store, head.w);
        let b = g.param(store, head.b);
        let y = g.matmul_t(z, w)?;
        let y = g.add_bias(y, b)?;
        Ok(g.l2_normalize(y)?)
    }
}
