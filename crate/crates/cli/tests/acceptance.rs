//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use soco_core::com::{mine, select_anchor};
use soco_core::drwm::{weight_social_graph, RelationPrior, TrainConfig};
use soco_core::experiment::{run_battery, run_case, BatteryReport, Variant};
use soco_core::gradcheck::{run_gradcheck, GradcheckConfig, DEFAULT_INSTANCES};
use soco_core::graph::{self, NodeFeatures};
use soco_core::metrics::{average_precision, cmc_at_k, inverse_negative_penalty};
use soco_core::pipeline::Ranker;
use soco_core::simulator::CaseStudy;
use soco_core::{
    generate_movie, rank_dataset, BalanceStrategy, ModalityMask, RelationType, RunConfig, SimulatorConfig,
};

const SEEDS: u64 = 20;

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
    /// Whether a failure fails the suite.
    enforced: bool,
}

fn outcome(id: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome {
        id,
        passed,
        detail,
        enforced: true,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn propagation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let d = rng.random_range(1..=4);
        let mut a = Array2::<f64>::zeros((n, n));
        for u in 0..n {
            a[[u, u]] = 1.0;
            for v in (u + 1)..n {
                if rng.random_bool(0.6) {
                    let w = rng.random_range(0.0..2.0);
                    a[[u, v]] = w;
                    a[[v, u]] = w;
                }
            }
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, d)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let h0 = NodeFeatures::initial(&[], &refs).unwrap();
        let got = graph::propagate(&graph::normalize_adjacency(a.view()), &h0, 2)
            .unwrap()
            .h;

        let deg: Vec<f64> = (0..n).map(|u| (0..n).map(|v| a[[u, v]]).sum()).collect();
        let norm: Vec<Vec<f64>> = (0..n)
            .map(|u| (0..n).map(|v| a[[u, v]] / (deg[u].sqrt() * deg[v].sqrt())).collect())
            .collect();
        let squared: Vec<Vec<f64>> = (0..n)
            .map(|u| (0..n).map(|w| (0..n).map(|v| norm[u][v] * norm[v][w]).sum()).collect())
            .collect();
        for u in 0..n {
            for k in 0..d {
                let dense: f64 = (0..n).map(|w| squared[u][w] * rows[w][k]).sum();
                let mut paths = 0.0;
                for v in 0..n {
                    for w in 0..n {
                        if a[[u, v]] > 0.0 && a[[v, w]] > 0.0 {
                            paths += norm[u][v] * norm[v][w] * rows[w][k];
                        }
                    }
                }
                worst = worst.max((got[[u, k]] - dense).abs()).max((got[[u, k]] - paths).abs());
            }
        }
    }
    outcome(
        "1 propagation oracle",
        worst <= 1e-9,
        format!("200 graphs, max abs error {worst:.2e} (limit 1e-9)"),
    )
}

fn softmax_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_row, mut anchor_exact) = (0.0f64, true);
    for _ in 0..1000 {
        let g = rng.random_range(1..=6);
        let q = rng.random_range(2..=12);
        let d = rng.random_range(1..=8);
        let gal: Vec<Vec<f64>> = (0..g).map(|_| random_vec(&mut rng, d)).collect();
        let qs: Vec<Vec<f64>> = (0..q).map(|_| random_vec(&mut rng, d)).collect();
        let gr: Vec<&[f64]> = gal.iter().map(|v| v.as_slice()).collect();
        let qr: Vec<&[f64]> = qs.iter().map(|v| v.as_slice()).collect();
        let (p, anchor) = mine(&gr, &qr).unwrap();
        for row in p.values.rows() {
            worst_row = worst_row.max((row.sum() - 1.0).abs());
        }
        let max = p.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        anchor_exact &= anchor.p_a == max && p.values[[anchor.anchor_gallery, anchor.anchor_query]] == max;
        anchor_exact &= select_anchor(&p) == anchor;
    }
    outcome(
        "2 softmax normalization",
        worst_row <= 1e-9 && anchor_exact,
        format!("1000 scenes, max |row sum - 1| {worst_row:.2e}, anchor equals global max: {anchor_exact}"),
    )
}

fn gradient_checks() -> Outcome {
    let rep = run_gradcheck(&GradcheckConfig::default()).unwrap();
    let enough = rep.checks.iter().all(|c| c.instances >= DEFAULT_INSTANCES);
    let detail = rep
        .checks
        .iter()
        .map(|c| format!("{} {:.2e} over {}", c.name, c.max_relative_error, c.instances))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        "3 gradient checks",
        rep.passed() && enough && rep.checks.len() == 3,
        format!("{detail} (h 1e-5, limit 1e-4)"),
    )
}

fn metric_fixtures() -> Outcome {
    let fixture = [true, false, true];
    let ap = average_precision(&fixture).unwrap();
    let inp = inverse_negative_penalty(&fixture).unwrap();
    let cmc = cmc_at_k(&[vec![false, true], vec![true, false], vec![false, false, true]], 3).unwrap();
    let perfect = average_precision(&[true, true, false]).unwrap();
    let same = |x: f64, y: f64| (x - y).abs() <= f64::EPSILON;
    let passed = same(ap, 5.0 / 6.0)
        && same(inp, 2.0 / 3.0)
        && cmc.len() == 3
        && cmc.iter().zip([1.0 / 3.0, 2.0 / 3.0, 1.0]).all(|(&x, y)| same(x, y))
        && perfect == 1.0
        && inverse_negative_penalty(&[false, false]).is_none();
    outcome(
        "4a metric fixtures",
        passed,
        format!("ranks {{1,3}}: AP {ap} INP {inp}; CMC {cmc:?}"),
    )
}

fn inp_below_ap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let mut rel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        rel[rng.random_range(0..n)] = true;
        if inverse_negative_penalty(&rel).unwrap() > average_precision(&rel).unwrap() + 1e-12 {
            violations += 1;
        }
    }
    let ap = average_precision(&[false, true, true]).unwrap();
    let inp = inverse_negative_penalty(&[false, true, true]).unwrap();
    Outcome {
        id: "4b INP <= AP on random rankings",
        passed: violations == 0,
        detail: format!(
            "{violations}/1000 violations; the property does not hold in general, e.g. ranks {{2,3}} give AP {ap:.4} < INP {inp:.4}"
        ),
        enforced: false,
    }
}

fn battery() -> BatteryReport {
    let rc = |mask, balance| RunConfig {
        modality_mask: mask,
        balance_strategy: balance,
        ..RunConfig::default()
    };
    let variants = [
        Variant::new("visual", RunConfig::visual_only()),
        Variant::new("full", RunConfig::default()),
        Variant::new("mean", rc(ModalityMask::Both, BalanceStrategy::Mean)),
        Variant::new("random", rc(ModalityMask::Both, BalanceStrategy::Random { seed: 7 })),
        Variant::new("visual_ctx", rc(ModalityMask::VisualOnlyCtx, BalanceStrategy::Adaptive)),
        Variant::new(
            "textual_ctx",
            rc(ModalityMask::TextualOnlyCtx, BalanceStrategy::Adaptive),
        ),
        Variant::new("no_ctx", rc(ModalityMask::None, BalanceStrategy::Adaptive)),
    ];
    run_battery(
        &SimulatorConfig::default(),
        0..SEEDS,
        &variants,
        &TrainConfig::default(),
    )
    .unwrap()
}

fn directional(b: &BatteryReport) -> Outcome {
    let (v, f) = (b.variant("visual").unwrap(), b.variant("full").unwrap());
    let passed = f.map - v.map >= 3.0 && f.minp >= v.minp - 0.5 && f.rank1 >= v.rank1 - 0.5;
    outcome(
        "5 socosearch beats visual-only",
        passed,
        format!(
            "mAP {:.2} vs {:.2} (+{:.2}), mINP {:.2} vs {:.2}, R1 {:.2} vs {:.2}",
            f.map,
            v.map,
            f.map - v.map,
            f.minp,
            v.minp,
            f.rank1,
            v.rank1
        ),
    )
}

fn balance_ordering(b: &BatteryReport) -> Outcome {
    let (a, m, r) = (
        b.variant("full").unwrap().map,
        b.variant("mean").unwrap().map,
        b.variant("random").unwrap().map,
    );
    outcome(
        "6 balance strategy ordering",
        a >= m && m >= r && a - r >= 2.0,
        format!(
            "adaptive {a:.2} >= mean {m:.2} >= random {r:.2}, adaptive - random {:.2}",
            a - r
        ),
    )
}

fn modality_ablation(b: &BatteryReport) -> Outcome {
    let full = b.variant("full").unwrap().map;
    let none = b.variant("no_ctx").unwrap().map;
    let between = |x: f64| (none <= x && x <= full) || (x - full).abs() <= 0.5;
    let (vc, tc) = (
        b.variant("visual_ctx").unwrap().map,
        b.variant("textual_ctx").unwrap().map,
    );
    outcome(
        "7 modality ablation",
        none <= full && between(vc) && between(tc),
        format!("none {none:.2}, visual ctx {vc:.2}, textual ctx {tc:.2}, both {full:.2}"),
    )
}

fn degenerate_equivalences() -> Outcome {
    let cfg = SimulatorConfig {
        num_scenes: 60,
        ..SimulatorConfig::default()
    };
    let (data, _) = generate_movie::<f64>(&cfg).unwrap();
    let queries = data.query_embeddings();
    let visual = Ranker::new(&data, RunConfig::visual_only(), None).unwrap();
    let prior = RelationPrior::uniform(0.2);
    let edges = weight_social_graph(&data.social_graph, &prior);
    let mut identical = true;
    for scene in &data.scenes {
        let gal: Vec<&[f64]> = scene.detections.iter().map(|d| d.embedding.as_slice()).collect();
        let (p, anchor) = mine(&gal, &queries).unwrap();
        let g = graph::build_graph(&edges, gal.len(), &p, &anchor, queries.len()).unwrap();
        let h0 = NodeFeatures::initial(&queries, &gal).unwrap();
        let h2 = graph::propagate(&graph::normalize(&g), &h0, 2).unwrap();
        let h0_g = graph::gallery_rows(&h0, queries.len());
        let fused = graph::fuse(&h0_g, &graph::gallery_rows(&h2, queries.len()), 0.0, &prior).unwrap();
        identical &= fused.w_s == 0.0 && fused.h_f == h0_g;
        let scores = graph::rank_scene(&queries, &fused).unwrap();
        let base = visual.score_scene(scene, None).unwrap().scores;
        identical &= scores
            .rows()
            .into_iter()
            .zip(&base)
            .all(|(r, b)| r.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let clean = SimulatorConfig {
        noise_easy: 0.0,
        noise_hard: 0.0,
        context_noise: 0.0,
        ..SimulatorConfig::default()
    };
    let (clean_data, _) = generate_movie::<f64>(&clean).unwrap();
    let out = rank_dataset(&clean_data, &RunConfig::visual_only(), None).unwrap();
    let map = soco_core::metrics::evaluate(&out.rankings, &clean_data, 10)
        .unwrap()
        .map;
    outcome(
        "8 degenerate equivalences",
        identical && map == 1.0,
        format!("p_a = 0 reproduces visual-only bit for bit: {identical}; zero-noise baseline mAP {map}"),
    )
}

fn case_fixtures() -> Outcome {
    let c1 = run_case(CaseStudy::Case1).unwrap();
    let c2 = run_case(CaseStudy::Case2).unwrap();
    outcome(
        "9 case fixtures",
        c1.passed && c2.passed,
        format!(
            "case1 visual top {}, fused top {}; case2 anchor {:?}, fused top-2 {} {}",
            c1.visual_order[0],
            c1.fused_order[0],
            c2.anchor_query.map(|q| q.to_string()),
            c2.fused_order[0],
            c2.fused_order[1]
        ),
    )
}

fn drwm_learnability(b: &BatteryReport) -> Outcome {
    let min_auc = b.mean_auc.iter().copied().fold(f64::INFINITY, f64::min);
    let names: Vec<String> = RelationType::ALL
        .iter()
        .zip(&b.mean_auc)
        .map(|(r, a)| format!("{r:?} {a:.3}"))
        .collect();
    outcome(
        "10 relation head learnability",
        min_auc >= 0.9 && b.mean_final_train_bce < 0.2,
        format!("AUC {}; final BCE {:.4}", names.join(", "), b.mean_final_train_bce),
    )
}

fn run_all_commands(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let soco = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_soco"))
            .args(args)
            .env("SOCO_OUT_DIR", dir)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let file = |n: &str| dir.join(n).to_str().unwrap().to_string();
    let (ds, head) = (file("dataset.jsonl"), file("relation_head.jsonl"));
    soco(&["generate"]);
    soco(&["train-drwm", "--dataset", &ds]);
    soco(&["rank", "--dataset", &ds, "--relation-head", &head]);
    soco(&["eval", "--rankings", &file("rankings.jsonl"), "--dataset", &ds]);
    soco(&[
        "rank",
        "--dataset",
        &ds,
        "--relation-head",
        &head,
        "--balance",
        "random",
        "--balance-seed",
        "5",
        "--out",
        &file("random.jsonl"),
        "--report",
        &file("random_report.jsonl"),
    ]);
    soco(&["train-classifier", "--dataset", &ds, "--epochs", "100"]);
    soco(&["gradcheck"]);
    soco(&["case", "case1"]);
    soco(&["case", "case2"]);
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            (n, bytes)
        })
        .collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::TempDir::new().unwrap(), tempfile::TempDir::new().unwrap());
    let first = run_all_commands(a.path());
    let second = run_all_commands(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        "11 determinism",
        first.len() == second.len() && differing.is_empty(),
        format!("{} output files compared, differing: {differing:?}", first.len()),
    )
}

fn easy_only_baseline() -> Outcome {
    let cfg = SimulatorConfig {
        hard_fraction: 0.0,
        ..SimulatorConfig::default()
    };
    let variants = [Variant::new("visual", RunConfig::visual_only())];
    let train = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let map = run_battery(&cfg, 0..SEEDS, &variants, &train).unwrap().summary[0].map;
    Outcome {
        id: "simulator example: hard_fraction 0 baseline mAP >= 95",
        passed: map >= 95.0,
        detail: format!("baseline mAP {map:.2} at the default easy noise"),
        enforced: false,
    }
}

fn main() {
    let b = battery();
    let outcomes = [
        propagation_oracle(),
        softmax_normalization(),
        gradient_checks(),
        metric_fixtures(),
        inp_below_ap(),
        directional(&b),
        balance_ordering(&b),
        modality_ablation(&b),
        degenerate_equivalences(),
        case_fixtures(),
        drwm_learnability(&b),
        determinism(),
        easy_only_baseline(),
    ];
    for o in &outcomes {
        let tag = match (o.passed, o.enforced) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (not enforced)",
        };
        println!("{tag}  {}: {}", o.id, o.detail);
    }
    let failed = outcomes.iter().filter(|o| o.enforced && !o.passed).count();
    println!("acceptance: {failed} enforced criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
