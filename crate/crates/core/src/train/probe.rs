use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::corpus::DialogSample;
use crate::error::{Error, Result};
use crate::sts::Layer;
use crate::tensor::{AdamW, AdamWConfig, Graph, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 300, lr: 0.01, weight_decay: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub correct: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub classes: Vec<String>,
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fixed 80/20 split: a sample is held out when the hash of its dialog id
/// is divisible by 5.
pub fn is_held_out(dialog_id: &str) -> bool {
    fnv1a(dialog_id.as_bytes()).is_multiple_of(5)
}

/// The single intent label of each sample.
pub fn intent_labels(samples: &[DialogSample]) -> Result<Vec<String>> {
    samples
        .iter()
        .map(|s| {
            let tree = s
                .annotation
                .as_ref()
                .ok_or_else(|| Error::schema("annotation", format!("sample `{}` has no annotation", s.dialog_id)))?;
            let intents = tree.labels(Layer::Intent);
            match intents.len() {
                1 => Ok(intents.into_iter().next().expect("one label").as_str().to_owned()),
                0 => Err(Error::schema("intent", format!("sample `{}` has no intent", s.dialog_id))),
                n => Err(Error::schema("intent", format!("sample `{}` has {n} intents; the probe needs one", s.dialog_id))),
            }
        })
        .collect()
}

/// Trains a multinomial logistic regression on frozen, standardized
/// pooled embeddings and reports held-out accuracy.
pub fn probe(model: &Model, samples: &[DialogSample], cfg: &ProbeConfig) -> Result<ProbeReport> {
    let labels = intent_labels(samples)?;
    let classes: Vec<String> = labels.iter().cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Config(format!("the probe needs at least 2 intent classes, found {}", classes.len())));
    }
    let class_id: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let y: Vec<usize> = labels.iter().map(|l| class_id[l.as_str()]).collect();
    let z = model.embed(samples)?;
    let (train, test): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| !is_held_out(&samples[i].dialog_id));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "the 80/20 split left {} training and {} test samples",
            train.len(),
            test.len()
        )));
    }
    let h = model.config().hidden;
    let c = classes.len();

    // Standardize with training statistics.
    let mut mean = vec![0.0; h];
    let mut std = vec![0.0; h];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(&z[i]) {
            *m += v / train.len() as f64;
        }
    }
    for &i in &train {
        for k in 0..h {
            std[k] += (z[i][k] - mean[k]).powi(2) / train.len() as f64;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|v| v.sqrt().max(1e-12)).collect();
    let features = |rows: &[usize]| -> Vec<f64> {
        rows.iter().flat_map(|&i| (0..h).map(|k| (z[i][k] - mean[k]) / std[k]).collect::<Vec<_>>()).collect()
    };
    let x_train = features(&train);
    let x_test = features(&test);

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let w = store.insert("probe.w", Tensor::new(vec![h, c], (0..h * c).map(|_| normal.sample(&mut rng)).collect())?);
    let b = store.insert("probe.b", Tensor::zeros(vec![c]));
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let x = g.constant_from(vec![train.len(), h], x_train.clone())?;
        let (wv, bv) = (g.param(&store, w), g.param(&store, b));
        let logits = g.linear(x, wv, bv)?;
        let lp = g.log_softmax(logits, None)?;
        let picked = g.pick(lp, &y_train)?;
        let mean_lp = g.mean(picked);
        let loss = g.scale(mean_lp, -1.0);
        store.zero_grad();
        g.backward(loss, &mut store)?;
        opt.step(&mut store);
    }

    let (wd, bd) = (store.get(w).data(), store.get(b).data());
    let mut correct = 0;
    for (r, &i) in test.iter().enumerate() {
        let x = &x_test[r * h..(r + 1) * h];
        let scores: Vec<f64> = (0..c).map(|k| bd[k] + (0..h).map(|f| x[f] * wd[f * c + k]).sum::<f64>()).collect();
        let best = (0..c).fold(0, |best, k| if scores[k] > scores[best] { k } else { best });
        if best == y[i] {
            correct += 1;
        }
    }
    Ok(ProbeReport {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        train_size: train.len(),
        test_size: test.len(),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn split_is_roughly_one_in_five() {
        let held = (0..5000).filter(|i| is_held_out(&format!("dialog-{i}"))).count();
        assert!((800..1200).contains(&held), "{held}");
        assert_eq!(is_held_out("dialog-7"), is_held_out("dialog-7"));
    }
}
