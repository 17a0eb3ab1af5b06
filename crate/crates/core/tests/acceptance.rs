//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p pshape-core --test acceptance` runs all nine; pass criterion
//! numbers after `--` to run a subset, e.g. `-- 1 8 9`.

use std::collections::{BTreeMap, VecDeque};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use diffnet::{finite_diff_check, ConvEncoder, GradCheckConfig, Graph, GruCell, Mlp, ParameterSet, Tensor, Var};
use pshape::clustering::{kmeans_fit, kmeans_pp_init, lloyd, ClusterModel};
use pshape::config::{Experiment, ExperimentConfig};
use pshape::cpc::{CpcConfig, EncoderModel, SegmentBatch};
use pshape::envs::{ActionSpace, EnvId, Environment, GridLayout, LayoutTag, Pendulum, PendulumState};
use pshape::pipeline::{Pipeline, Stage};
use pshape::rl::{compute_gae, normalize_advantages, ppo_loss_graph, PolicyModel, PpoConfig, PpoLearner, RolloutBuffer};
use pshape::shaping::{shape_raw_distance, shaped_step, RewardScheme, Shaper};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    run: fn(&Path) -> Verdict,
}

const fn mins(m: u64) -> Duration {
    Duration::from_secs(m * 60)
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient integrity", limit: mins(1), run: gradient_integrity },
        Criterion { id: 2, name: "infonce baseline", limit: mins(10), run: infonce_baseline },
        Criterion { id: 3, name: "distance correlation", limit: mins(5), run: distance_correlation },
        Criterion { id: 4, name: "maze success with cluster bonus", limit: mins(90), run: maze_success },
        Criterion { id: 5, name: "pendulum reward setups", limit: mins(60), run: pendulum_setups },
        Criterion { id: 6, name: "reacher shaping vs features", limit: mins(40), run: reacher_modes },
        Criterion { id: 7, name: "texture generalization", limit: mins(30), run: texture },
        Criterion { id: 8, name: "determinism", limit: Duration::MAX, run: determinism },
        Criterion { id: 9, name: "unit invariants", limit: mins(1), run: unit_invariants },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&work);
    std::fs::create_dir_all(&work).expect("work directory");
    println!("artifacts in {}", work.display());

    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let v = std::panic::catch_unwind(AssertUnwindSafe(|| (c.run)(&work)))
            .unwrap_or_else(|e| verdict(false, format!("panicked: {}", panic_text(&e))));
        let took = start.elapsed();
        let in_time = took <= c.limit;
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let limit = if c.limit == Duration::MAX { String::new() } else { format!(" / limit {}s", c.limit.as_secs()) };
        let late = if in_time { "" } else { " (over time limit)" };
        println!(
            "criterion {} {}: {} ({}) [{:.1}s{limit}]{late}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(text).expect("acceptance config")
}

/// Runs `stage` unless its main output is already on disk.
fn ensure(p: &Pipeline, stage: Stage) {
    let existing = match stage {
        Stage::Collect => Some(p.trajectories_path()),
        Stage::TrainCpc => Some(p.encoder_path()),
        Stage::Cluster => Some(p.clusters_path()),
        _ => None,
    };
    if existing.is_some_and(|f| f.is_file()) {
        return;
    }
    println!("  {} {} ...", p.env_id(), stage.name());
    p.run(stage).unwrap_or_else(|e| panic!("{} failed: {e}", stage.name()));
}

fn run(p: &Pipeline, stage: Stage) -> Value {
    println!("  {} {} ...", p.env_id(), stage.name());
    p.run(stage).unwrap_or_else(|e| panic!("{} failed: {e}", stage.name())).summary
}

// ---------------------------------------------------------------- 1

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn grad_error<F>(params: &ParameterSet, build: F) -> f64
where
    F: for<'a> Fn(&mut Graph<'a>, &'a ParameterSet) -> diffnet::Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let l = build(&mut g, params).unwrap();
        g.backward(l).unwrap()
    };
    let loss = |p: &ParameterSet| {
        let mut g = Graph::new();
        let l = build(&mut g, p).unwrap();
        g.value(l).item()
    };
    finite_diff_check(loss, params, &analytic, GradCheckConfig { samples: 300, ..Default::default() }).max_rel_error
}

fn gradient_integrity(_: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut errors = BTreeMap::new();

    let mlp = Mlp::new("m.", &[6, 12, 4]);
    let p = mlp.init(&mut rng);
    let x = random_tensor(&mut rng, &[5, 6]);
    errors.insert(
        "mlp",
        grad_error(&p, |g, p| {
            let xv = g.input(x.clone());
            let logits = mlp.forward(g, p, xv)?;
            g.softmax_cross_entropy(logits, vec![0, 3, 1, 2, 3])
        }),
    );

    let conv = ConvEncoder::new("c.", [9, 9, 2], [3, 4], 5).unwrap();
    let p = conv.init(&mut rng);
    let x = random_tensor(&mut rng, &[2, 9, 9, 2]);
    errors.insert(
        "conv",
        grad_error(&p, |g, p| {
            let xv = g.input(x.clone());
            let z = conv.forward(g, p, xv)?;
            let t = g.tanh(z);
            let s = g.square(t);
            Ok(g.sum(s))
        }),
    );

    let gru = GruCell::new("g.", 3, 6);
    let p = gru.init(&mut rng);
    let xs: Vec<Tensor> = (0..5).map(|_| random_tensor(&mut rng, &[2, 3])).collect();
    let target = random_tensor(&mut rng, &[2, 6]);
    errors.insert(
        "gru",
        grad_error(&p, |g, p| {
            let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
            let h = gru.forward(g, p, &vars)?;
            let t = g.input(target.clone());
            let d = g.sub(h, t)?;
            let s = g.square(d);
            Ok(g.mean(s))
        }),
    );

    let cpc = CpcConfig { context: 3, predict: 2, batch: 4, embedding: 5, context_size: 4, hidden: 6, score_init: 0.5, ..Default::default() };
    let model = EncoderModel::new(cpc.clone(), &[3], &mut rng).unwrap();
    let segments = (0..4).map(|_| (0..cpc.segment_len()).map(|_| random_tensor(&mut rng, &[3])).collect()).collect();
    let batch = SegmentBatch::new(segments, cpc.context, cpc.predict).unwrap();
    errors.insert("infonce", grad_error(&model.params, |g, p| Ok(model.infonce_graph(g, p, &batch).expect("infonce"))));

    for (name, space) in [("ppo-discrete", ActionSpace::Discrete(3)), ("ppo-gaussian", ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 })] {
        let policy = PolicyModel::new(2, space, 6, &mut rng);
        let mut feats = Vec::new();
        let (mut actions, mut old) = (Vec::new(), Vec::new());
        for (i, off) in [0.05, -0.1, 0.4, -0.03, -0.5].into_iter().enumerate() {
            let s = [(i % 2) as f64, ((i + 1) % 2) as f64];
            let step = policy.step(&s, &mut rng, false).unwrap();
            feats.extend_from_slice(&s);
            actions.push(step.stored);
            old.push(step.log_prob + off);
        }
        let x = Tensor::new(vec![5, 2], feats).unwrap();
        let (adv, ret) = (vec![1.0, -0.5, 0.8, 0.3, -1.2], vec![0.5, -0.2, 1.0, 0.0, 0.3]);
        let cfg = PpoConfig::default();
        errors.insert(
            name,
            grad_error(&policy.params, |g, p| {
                Ok(ppo_loss_graph(g, p, &policy, x.clone(), &actions, &old, &adv, &ret, &cfg).expect("ppo loss").total)
            }),
        );
    }
    let worst = errors.values().cloned().fold(0.0, f64::max);
    let detail = errors.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(worst < 1e-4, format!("max relative error < 1e-4: {detail}"))
}

// ---------------------------------------------------------------- 2, 3

fn umaze_config() -> ExperimentConfig {
    config(r#"{"version": 1, "env": {"id": "gridworld", "layout": "umaze"}, "eval": {"pairs": 500}}"#)
}

fn infonce_baseline(work: &Path) -> Verdict {
    let p = Pipeline::new(umaze_config(), work, 0).unwrap();
    ensure(&p, Stage::Collect);
    let s = run(&p, Stage::TrainCpc);
    let ln_b = s["ln_batch"].as_f64().unwrap();
    let init = s["initial_loss"].as_f64().unwrap();
    let fin = s["smoothed_final_loss"].as_f64().unwrap();
    let ok = (init - ln_b).abs() <= 0.1 && fin < ln_b - 0.5;
    verdict(ok, format!("ln B {ln_b:.4}, initial loss {init:.4} (±0.1), smoothed final {fin:.4} (< {:.4})", ln_b - 0.5))
}

/// Breadth-first flood fill over a character grid.
fn flood_fill(rows: &[Vec<char>], from: (usize, usize)) -> Vec<Vec<Option<usize>>> {
    let mut dist = vec![vec![None; rows[0].len()]; rows.len()];
    dist[from.0][from.1] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r][c].unwrap();
        for (nr, nc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
            if rows[nr][nc] != '#' && dist[nr][nc].is_none() {
                dist[nr][nc] = Some(d + 1);
                queue.push_back((nr, nc));
            }
        }
    }
    dist
}

const FIXTURE: &str = "\
#######
#..#..#
#.##..#
#...#.#
##.#..#
#....G#
#######
";

fn distance_correlation(work: &Path) -> Verdict {
    let layout = GridLayout::parse(FIXTURE).unwrap();
    let rows: Vec<Vec<char>> = FIXTURE.lines().map(|l| l.chars().collect()).collect();
    let cells = layout.free_cells();
    let mut mismatches = 0;
    for &a in &cells {
        let oracle = flood_fill(&rows, a);
        for &b in &cells {
            if layout.true_distance(a, b).ok() != oracle[b.0][b.1] {
                mismatches += 1;
            }
        }
    }

    let mut c = umaze_config();
    c.eval.experiment = Experiment::DistanceCorrelation;
    let p = Pipeline::new(c, work, 0).unwrap();
    ensure(&p, Stage::Collect);
    ensure(&p, Stage::TrainCpc);
    let s = run(&p, Stage::Eval);
    let r = s["r"].as_f64().unwrap();
    let pairs = cells.len() * cells.len();
    verdict(
        mismatches == 0 && r >= 0.8,
        format!("BFS oracle mismatches {mismatches}/{pairs}; U-Maze Pearson r {r:.3} over 500 pairs (>= 0.8)"),
    )
}

// ---------------------------------------------------------------- 4, 5, 6

fn arms(summary: &Value) -> BTreeMap<String, (f64, Vec<f64>, Option<u64>)> {
    summary["arms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let fin: Vec<f64> = a["final_success"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            (a["scheme"].as_str().unwrap().to_string(), (a["mean_final_success"].as_f64().unwrap(), fin, a["steps_to_half_success"].as_u64()))
        })
        .collect()
}

fn compare(work: &Path, text: &str, upstream: &[Stage]) -> BTreeMap<String, (f64, Vec<f64>, Option<u64>)> {
    let p = Pipeline::new(config(text), work, 0).unwrap();
    for &s in upstream {
        ensure(&p, s);
    }
    arms(&run(&p, Stage::Eval))
}

fn fmt_arm(name: &str, a: &(f64, Vec<f64>, Option<u64>)) -> String {
    let seeds = a.1.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join("/");
    format!("{name} {:.3} [{seeds}]", a.0)
}

fn maze_success(work: &Path) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for layout in ["umaze", "fourrooms"] {
        let text = format!(
            r#"{{"version": 1, "env": {{"id": "gridworld", "layout": "{layout}"}}, "seeds": [0, 1, 2],
                "ppo": {{"total_steps": 300000}},
                "eval": {{"experiment": "compare", "episodes": 100,
                          "schemes": [{{"kind": "sparse"}}, {{"kind": "cluster-bonus"}}]}}}}"#
        );
        let a = compare(work, &text, &[Stage::Collect, Stage::TrainCpc, Stage::Cluster]);
        let (sparse, bonus) = (&a["sparse"], &a["cluster-bonus"]);
        let gap = bonus.0 - sparse.0;
        ok &= gap >= 0.15;
        parts.push(format!("{layout}: {} vs {}, gap {gap:+.3} (>= 0.15)", fmt_arm("cluster-bonus", bonus), fmt_arm("sparse", sparse)));
    }
    verdict(ok, parts.join("; "))
}

fn pendulum_setups(work: &Path) -> Verdict {
    let text = r#"{"version": 1, "env": {"id": "pendulum"}, "seeds": [0, 1, 2],
        "collect": {"count": 200, "max_len": 300}, "cpc": {"epochs": 10}, "cluster": {"k": 8},
        "ppo": {"total_steps": 400000},
        "eval": {"experiment": "compare", "episodes": 100, "schemes": [
            {"kind": "sparse"}, {"kind": "hand-shaped"}, {"kind": "raw-distance"}, {"kind": "embedding-distance"}]}}"#;
    let a = compare(work, text, &[Stage::Collect, Stage::TrainCpc]);
    let (sparse, hand, raw, emb) = (&a["sparse"], &a["hand-shaped"], &a["raw-distance"], &a["embedding-distance"]);
    let faster = match (emb.2, raw.2) {
        (Some(e), Some(r)) => e < r,
        (Some(_), None) => true,
        _ => false,
    };
    let ok = emb.0 >= 0.7 && emb.0 > sparse.0 && hand.0 > sparse.0 && faster;
    let steps = |s: Option<u64>| s.map_or("never".to_string(), |v| v.to_string());
    verdict(
        ok,
        format!(
            "{}, {}, {}, {}; steps to 0.5 success: embedding {} vs raw {}",
            fmt_arm("embedding-distance", emb),
            fmt_arm("sparse", sparse),
            fmt_arm("hand-shaped", hand),
            fmt_arm("raw-distance", raw),
            steps(emb.2),
            steps(raw.2)
        ),
    )
}

fn reacher_modes(work: &Path) -> Verdict {
    let text = r#"{"version": 1, "env": {"id": "reacher"}, "seeds": [0, 1, 2],
        "ppo": {"total_steps": 300000},
        "eval": {"experiment": "compare", "episodes": 100, "schemes": [
            {"kind": "embedding-distance", "label": "shaping"},
            {"kind": "sparse", "feature_mode": "embedding", "label": "features"}]}}"#;
    let a = compare(work, text, &[Stage::Collect, Stage::TrainCpc]);
    let (shaping, features) = (&a["shaping"], &a["features"]);
    verdict(shaping.0 >= features.0, format!("{} vs {} (shaping >= features)", fmt_arm("shaping", shaping), fmt_arm("features", features)))
}

// ---------------------------------------------------------------- 7

fn texture(work: &Path) -> Verdict {
    let text = r#"{"version": 1,
        "env": {"id": "pendulum", "texture": {"train": ["bricks", "sand", "cloth"], "holdout": "wood"}},
        "collect": {"count": 200, "max_len": 300}, "cpc": {"encoder": "conv", "epochs": 10, "segment_stride": 4}, "cluster": {"k": 8},
        "eval": {"experiment": "texture", "texture_states": 1000}}"#;
    let dir = work.join("texture");
    let p = Pipeline::new(config(text), &dir, 0).unwrap();
    ensure(&p, Stage::Collect);
    ensure(&p, Stage::TrainCpc);
    let s = run(&p, Stage::Eval);
    let agreement = s["agreement"].as_f64().unwrap();
    let (nt, nh) = (s["nmi_train"].as_f64().unwrap(), s["nmi_holdout"].as_f64().unwrap());
    let gap = if nt > 0.0 { (nh - nt).abs() / nt } else { f64::INFINITY };
    let degenerate = s["degenerate"].as_bool().unwrap();
    verdict(
        agreement >= 0.6 && gap <= 0.2 && !degenerate,
        format!("agreement {agreement:.3} (>= 0.6); angle NMI train {nt:.3}, holdout {nh:.3}, relative gap {gap:.3} (<= 0.2)"),
    )
}

// ---------------------------------------------------------------- 8

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism(work: &Path) -> Verdict {
    let grid = r#"{"version": 1, "env": {"id": "gridworld", "layout": "fourrooms"},
        "collect": {"count": 20, "max_len": 60}, "cpc": {"epochs": 1, "context_size": 32},
        "cluster": {"samples": 400, "restarts": 3},
        "scheme": {"kind": "cluster-bonus", "two_policy": true},
        "ppo": {"rollout": 512, "total_steps": 1024, "minibatch": 64, "eval_episodes": 3},
        "eval": {"episodes": 10, "pairs": 100, "schemes": [{"kind": "sparse"}, {"kind": "raw-distance"}, {"kind": "cluster-bonus"}]}}"#;
    let pend = r#"{"version": 1, "env": {"id": "pendulum"},
        "collect": {"count": 10, "max_len": 60}, "cpc": {"epochs": 1, "context_size": 32},
        "cluster": {"k": 8, "samples": 300, "restarts": 2},
        "scheme": {"kind": "embedding-distance"},
        "ppo": {"rollout": 512, "total_steps": 1024, "minibatch": 64, "eval_episodes": 3, "feature_mode": "embedding"},
        "eval": {"episodes": 10}}"#;
    let tex = r#"{"version": 1, "env": {"id": "pendulum", "texture": {"train": ["bricks", "cloth"], "holdout": "wood"}},
        "collect": {"count": 4, "max_len": 40}, "cpc": {"encoder": "conv", "epochs": 1, "context_size": 16},
        "cluster": {"k": 4, "samples": 80, "restarts": 1},
        "eval": {"experiment": "texture", "texture_states": 50}}"#;
    let plans: [(&str, &[Stage], &[Experiment]); 3] = [
        (grid, &Stage::ALL, &[Experiment::Success, Experiment::DistanceCorrelation, Experiment::Compare]),
        (pend, &Stage::ALL, &[Experiment::Success]),
        (tex, &[Stage::Collect, Stage::TrainCpc, Stage::Cluster, Stage::Eval], &[Experiment::Texture]),
    ];
    let mut files = 0;
    let mut differing = Vec::new();
    for (i, (text, stages, experiments)) in plans.iter().enumerate() {
        let c = config(text);
        let snaps: Vec<_> = ["a", "b"]
            .iter()
            .map(|run| {
                let dir = work.join(format!("determinism-{i}-{run}"));
                for &stage in stages.iter() {
                    let exps: Vec<Option<Experiment>> =
                        if stage == Stage::Eval { experiments.iter().map(|&e| Some(e)).collect() } else { vec![None] };
                    for e in exps {
                        let mut c = c.clone();
                        if let Some(e) = e {
                            c.eval.experiment = e;
                        }
                        Pipeline::new(c, &dir, 0).unwrap().run(stage).unwrap_or_else(|err| panic!("{}: {err}", stage.name()));
                    }
                }
                snapshot(&dir)
            })
            .collect();
        files += snaps[0].len();
        if snaps[0].keys().ne(snaps[1].keys()) {
            differing.push(format!("plan {i}: file sets differ"));
        }
        for (name, bytes) in &snaps[0] {
            if snaps[1].get(name) != Some(bytes) {
                differing.push(name.clone());
            }
        }
    }
    verdict(differing.is_empty(), format!("{files} artifacts compared across reruns; differing: {differing:?}"))
}

// ---------------------------------------------------------------- 9

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unit_invariants(_: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut broken = Vec::new();

    for case in 0..200 {
        let d = rng.gen_range(1..4);
        let n = rng.gen_range(6..50);
        let k = rng.gen_range(1..5);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
        let run = lloyd(&pts, kmeans_pp_init(&pts, k, &mut rng), 500);
        if run.inertia_trace.windows(2).any(|w| w[1] > w[0] + 1e-9) {
            broken.push(format!("kmeans inertia increased (case {case})"));
        }
        for (p, &l) in pts.iter().zip(&run.labels) {
            if run.centroids.iter().any(|c| sq(p, c) + 1e-9 < sq(p, &run.centroids[l])) {
                broken.push(format!("kmeans label not nearest (case {case})"));
                break;
            }
        }
        if let Ok(m) = kmeans_fit(&pts, k, &mut rng, 2, 100) {
            let got: f64 = pts.iter().map(|p| sq(p, &m.centroids[m.assign(p).unwrap()])).sum();
            if (got - m.inertia).abs() > 1e-6 * (1.0 + m.inertia) {
                broken.push(format!("kmeans reported inertia mismatch (case {case})"));
            }
        }
    }

    for seed in 0..10 {
        for id in [EnvId::GridWorld(LayoutTag::UMaze), EnvId::Pendulum, EnvId::Reacher] {
            let mut env = id.make();
            for (env_r, shaped) in episode(env.as_mut(), RewardScheme::Sparse, seed) {
                if env_r != shaped {
                    broken.push(format!("sparse changed the reward on {id}"));
                }
            }
        }
    }
    {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let encoder = std::sync::Arc::new(EncoderModel::new(CpcConfig::default(), &[3], &mut r).unwrap());
        let states: Vec<Tensor> =
            (0..200).map(|_| PendulumState { theta: r.gen_range(-3.1..3.1), omega: r.gen_range(-2.0..2.0) }.observation()).collect();
        let z: Vec<Vec<f64>> = states.iter().map(|s| encoder.encode_state(s).unwrap().data().to_vec()).collect();
        let fitted = kmeans_fit(&z, 4, &mut r, 2, 100).unwrap();
        let goal = encoder.encode_state(&Pendulum::new().goal_observation()).unwrap();
        let clusters = std::sync::Arc::new(ClusterModel { goal: Some(fitted.assign(goal.data()).unwrap()), ..fitted });
        let scheme = RewardScheme::cluster_bonus(encoder, clusters, 0.5, false).unwrap();
        for seed in 0..20 {
            let paid = episode(&mut Pendulum::new(), scheme.clone(), seed).iter().filter(|s| s.1 != s.0).count();
            if paid > 1 {
                broken.push(format!("cluster bonus paid {paid} times in one episode"));
            }
        }
    }
    for _ in 0..100 {
        let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if shape_raw_distance(&Tensor::vector(g.clone()), &Tensor::vector(g), 1.7).unwrap() != 0.0 {
            broken.push("raw distance nonzero at the goal".into());
        }
    }
    {
        let encoder = EncoderModel::new(CpcConfig::default(), &[3], &mut rng).unwrap();
        let goal = Pendulum::new().goal_observation();
        if pshape::shaping::shape_embedding_distance(&encoder, &goal, &goal, 2.0).unwrap() != 0.0 {
            broken.push("embedding distance nonzero at the goal".into());
        }
    }

    for _ in 0..200 {
        let n = rng.gen_range(1..30);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
        let boot = rng.gen_range(-2.0..2.0);
        let gamma = rng.gen_range(0.0..1.0);
        let (a, _) = compute_gae(&r, &v, &d, boot, gamma, 0.0);
        for t in 0..n {
            let next = if t + 1 < n { v[t + 1] } else { boot };
            let delta = r[t] + gamma * next * if d[t] { 0.0 } else { 1.0 } - v[t];
            if (a[t] - delta).abs() > 1e-12 {
                broken.push("GAE with lambda 0 is not the TD error".into());
            }
        }
        let (a, _) = compute_gae(&r, &v, &vec![false; n], boot, 1.0, 1.0);
        for t in 0..n {
            if (a[t] - (r[t..].iter().sum::<f64>() + boot - v[t])).abs() > 1e-9 {
                broken.push("GAE with gamma = lambda = 1 does not telescope".into());
            }
        }
        let mut adv = r.clone();
        if n > 1 {
            normalize_advantages(&mut adv);
            let mean = adv.iter().sum::<f64>() / n as f64;
            if mean.abs() > 1e-6 {
                broken.push("normalized advantages not centred".into());
            }
        }
    }

    for space in [ActionSpace::Discrete(4), ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 }] {
        let model = PolicyModel::new(3, space, 16, &mut rng);
        let mut buf = RolloutBuffer::new(3);
        for t in 0..300 {
            let f: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = model.step(&f, &mut rng, false).unwrap();
            buf.push(&f, s.stored, s.log_prob, s.value, rng.gen_range(-1.0..1.0), t % 17 == 16);
        }
        buf.finish(0.0, 0.99, 0.95);
        let config = PpoConfig::default();
        let stats = PpoLearner::new(model, &config).update(&buf, &config, &mut rng).unwrap();
        if stats.first_ratio_deviation > 1e-10 {
            broken.push(format!("first minibatch ratio deviates by {}", stats.first_ratio_deviation));
        }
    }

    broken.dedup();
    verdict(broken.is_empty(), if broken.is_empty() { "k-means, shaping, GAE and PPO ratio checks hold".into() } else { broken.join("; ") })
}

fn episode(env: &mut dyn Environment, scheme: RewardScheme, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shaper = Shaper::new(scheme);
    let obs = env.reset(&mut rng);
    shaper.begin_episode(env, &obs).unwrap();
    let mut out = Vec::new();
    loop {
        let a = env.action_space().sample(&mut rng);
        let (o, s) = shaped_step(env, &mut shaper, &a).unwrap();
        out.push((o.reward, s.reward));
        if o.done {
            return out;
        }
    }
}
