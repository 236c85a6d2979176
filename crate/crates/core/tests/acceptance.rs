//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances are the constants below.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use common::{read_fixture, tree_bytes, StubServer};
use witforge::agents::mock::canonical_metric;
use witforge::agents::{AgentClient, MockBackend};
use witforge::geometry::{area, convex_intersection, hull_2d, Point2, Polygon2D};
use witforge::metriclang::{evaluate, parse_metric, ObjectState, ObjsSnapshot, ParticleState, RigidState, FELL_OFF};
use witforge::mutation::{
    codes as mutation_codes, delta_statistics_from, import_tree_json, AddKind, CampaignAgents, CampaignConfig,
    MutationCampaign, MutationNode, MutationStrategy, StepOutcome, StrategyClass, APPLY_CAP,
};
use witforge::pipeline::{build_resolver, FamilyReport, run_full, run_seed_stage, scene_from_value, BackendKind, PipelineConfig};
use witforge::scene::{validate_scene, Region2D, SceneViolationCode, WorkspaceSpec};
use witforge::schema::{canonical_json, parse_task, quoted_names, validate_task, TaskSpec};
use witforge::verification::{
    codes, gate_decision, Feasibility, GateConfig, Simulatability, VerificationReport, YesNo,
};

const CAMPAIGN_TIME_LIMIT: Duration = Duration::from_secs(5);
const MAX_ROUNDS: u32 = 3;
const ADVERSARIAL_MUTATIONS: u64 = 100;
const HULL_SETS: u64 = 500;
const HULL_MAX_POINTS: usize = 12;
const POLYGON_PAIRS: u64 = 200;
/// Samples per Monte Carlo estimate, as a square jittered grid.
const MC_GRID: usize = 1000;
const MC_SIGMAS: f64 = 3.0;
const SWAP_TOLERANCE: f64 = 1e-9;
const GEOMETRY_TIME_LIMIT: Duration = Duration::from_secs(30);
const METRIC_FUZZ_PAIRS: u64 = 1000;
const STATS_TOLERANCE: f64 = 1e-9;
const FAMILY_RANGE: std::ops::RangeInclusive<usize> = 3..=9;
const RUN_RNG: u64 = 7;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("campaign conformance", campaign_conformance),
        ("mutation contract enforcement", contract_enforcement),
        ("geometry oracle equivalence", geometry_oracles),
        ("metric semantics", metric_semantics),
        ("scene constants", scene_constants),
        ("statistics fidelity", statistics_fidelity),
        ("determinism and replay", determinism),
        ("verification gate truth table", gate_truth_table),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {}. {name}: {detail} ({secs:.2} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {detail} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn mock_client(cfg: &PipelineConfig, backend: MockBackend) -> AgentClient {
    AgentClient::new(Arc::new(backend), cfg.token_budget, cfg.in_flight)
}

fn seed_fixture() -> TaskSpec {
    parse_task(&read_fixture("seed_retrieve_cube.task.json")).expect("seed fixture parses")
}

// ---------------------------------------------------------------------------
// 1

fn campaign_conformance() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig { rng_seed: RUN_RNG, ..Default::default() };
    let client = mock_client(&cfg, MockBackend::new());
    let resolver = build_resolver(&cfg).map_err(err)?;
    let prompts = cfg.prompt_context();
    let agents = CampaignAgents { client: &client, prompts: &prompts, resolver: resolver.as_ref() };

    let seeds = run_seed_stage(&cfg, &client).map_err(err)?;
    let accepted: Vec<_> = seeds.iter().filter(|s| s.is_accepted()).collect();
    ensure!(!accepted.is_empty(), "no seed was accepted");

    let mut members = 0;
    for (i, s) in accepted.iter().enumerate() {
        let task = s.task.clone().ok_or("accepted seed without a task")?;
        let d = s.decision.as_ref().and_then(|d| d.operational_difficulty).ok_or("seed without difficulty")?;
        let mut c = MutationCampaign::new(task, d, CampaignConfig::default(), RUN_RNG + i as u64).map_err(err)?;
        if let Err(e) = c.run(&agents) {
            return Err(format!("campaign {i}: {e}"));
        }
        let nodes = c.nodes();
        ensure!(nodes.len() == 1 + c.config.steps as usize, "campaign {i}: {} nodes for {} steps", nodes.len(), c.config.steps);

        let mut applied: BTreeMap<(u32, StrategyClass), u32> = BTreeMap::new();
        for n in nodes.iter().skip(1) {
            ensure!(n.rounds_used <= MAX_ROUNDS, "node {} used {} rounds", n.id, n.rounds_used);
            ensure!(n.attempts.len() as u32 == n.rounds_used, "node {} attempt log disagrees", n.id);
            if n.is_accepted() {
                *applied.entry((n.parent.unwrap(), n.strategy.unwrap().class())).or_default() += 1;
            }
        }
        ensure!(applied.values().all(|&k| k <= APPLY_CAP), "campaign {i}: apply counts {applied:?}");
        ensure!(&applied == c.apply_counts(), "campaign {i}: recorded apply counts disagree");
        let calls = c.counters().mutation_calls;
        ensure!(calls <= MAX_ROUNDS * c.config.steps, "campaign {i}: {calls} mutation calls");

        for n in c.pool_tasks() {
            let v = validate_task(&n.task);
            ensure!(v.is_ok(), "pool member {} fails validation: {:?}", n.id, v.errors().collect::<Vec<_>>());
            if n.id == 0 {
                continue;
            }
            let report = n.report.as_ref().ok_or(format!("pool member {} has no report", n.id))?;
            let g = gate_decision(&n.task, report, &GateConfig::default()).map_err(err)?;
            ensure!(g.is_accepted(), "pool member {} fails the offline gate: {:?}", n.id, g.reasons);
            ensure!(g.operational_difficulty == n.difficulty, "pool member {} difficulty drifted", n.id);
        }
        members += c.pool().len();
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < CAMPAIGN_TIME_LIMIT, "took {elapsed:?}");
    Ok(format!("{} campaigns, {members} pool members, apply cap {APPLY_CAP}, rounds <= {MAX_ROUNDS}", accepted.len()))
}

// ---------------------------------------------------------------------------
// 2

/// Names the child had to keep, computed straight from the task text.
fn dropped_names(parent: &TaskSpec, child: &TaskSpec, strategy: MutationStrategy) -> Vec<String> {
    let has = |t: &TaskSpec, n: &str| t.object_list.iter().any(|o| o.object_name == n);
    let required: Vec<String> = match strategy {
        MutationStrategy::Pivot => quoted_names(parent.task_success_criteria.as_deref().unwrap_or(""))
            .into_iter()
            .filter(|n| has(parent, n))
            .collect(),
        _ => parent.object_list.iter().map(|o| o.object_name.clone()).collect(),
    };
    required.into_iter().filter(|n| !has(child, n)).collect()
}

fn contract_enforcement() -> Outcome {
    let cfg = PipelineConfig::default();
    let client = mock_client(&cfg, MockBackend::adversarial());
    let resolver = build_resolver(&cfg).map_err(err)?;
    let prompts = cfg.prompt_context();
    let agents = CampaignAgents { client: &client, prompts: &prompts, resolver: resolver.as_ref() };
    let seed = seed_fixture();
    let strategies = [
        MutationStrategy::Pivot,
        MutationStrategy::Trap,
        MutationStrategy::Add(AddKind::Related),
        MutationStrategy::Add(AddKind::Unrelated),
    ];

    let (mut false_accepts, mut attempts) = (0, 0);
    for i in 0..ADVERSARIAL_MUTATIONS {
        let strategy = strategies[i as usize % strategies.len()];
        let mut c = MutationCampaign::new(seed.clone(), 3, CampaignConfig::default(), i).map_err(err)?;
        let id = match c.step_with(&agents, 0, strategy).map_err(err)? {
            StepOutcome::Rejected(id) => id,
            StepOutcome::Accepted(id) => {
                false_accepts += 1;
                id
            }
            StepOutcome::Skipped { .. } => return Err(format!("mutation {i} was skipped")),
        };
        let node = c.node(id).unwrap();
        ensure!(!node.attempts.is_empty(), "mutation {i} made no attempt");
        for a in &node.attempts {
            attempts += 1;
            ensure!(
                a.reasons.iter().any(|r| r == mutation_codes::MUTATION_CONTRACT),
                "mutation {i} ({}) attempt lacks MUTATION_CONTRACT: {:?}",
                strategy.mutation_type(),
                a.reasons
            );
        }
        ensure!(
            !dropped_names(&seed, &node.task, strategy).is_empty(),
            "mutation {i}: the final child keeps every required object"
        );
    }
    ensure!(false_accepts == 0, "{false_accepts} false accepts");
    Ok(format!("{ADVERSARIAL_MUTATIONS} mutations, {attempts} attempts, all MUTATION_CONTRACT, 0 false accepts"))
}

// ---------------------------------------------------------------------------
// 3

/// `p` lies in the closed segment `ab`.
fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    c == 0.0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// `p` lies in the closed, non-degenerate triangle `abc`. Collinear
/// triples are left to [`on_segment`].
fn in_triangle(p: Point2, a: Point2, b: Point2, c: Point2) -> bool {
    if (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x) == 0.0 {
        return false;
    }
    let s = |u: Point2, v: Point2| (v.x - u.x) * (p.y - u.y) - (v.y - u.y) * (p.x - u.x);
    let (d1, d2, d3) = (s(a, b), s(b, c), s(c, a));
    (d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0) || (d1 <= 0.0 && d2 <= 0.0 && d3 <= 0.0)
}

/// Exact coordinates, with -0.0 folded into 0.0.
fn key(p: Point2) -> (u64, u64) {
    ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits())
}

/// Extreme points: those outside the closed hull of all the others.
fn brute_force_hull(points: &[Point2]) -> BTreeSet<(u64, u64)> {
    let mut pts: Vec<Point2> = Vec::new();
    for p in points {
        if !pts.contains(p) {
            pts.push(*p);
        }
    }
    let mut out = BTreeSet::new();
    for (i, &p) in pts.iter().enumerate() {
        let others: Vec<Point2> = pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| *q).collect();
        let n = others.len();
        let mut covered = false;
        'outer: for a in 0..n {
            for b in a + 1..n {
                if on_segment(p, others[a], others[b]) {
                    covered = true;
                    break 'outer;
                }
                for c in b + 1..n {
                    if in_triangle(p, others[a], others[b], others[c]) {
                        covered = true;
                        break 'outer;
                    }
                }
            }
        }
        if !covered {
            out.insert(key(p));
        }
    }
    out
}

fn random_convex(rng: &mut ChaCha8Rng) -> Polygon2D {
    let k = rng.random_range(3..=8);
    let (cx, cy) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let r = rng.random_range(0.2..0.8);
    let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let pts = angles.iter().map(|a| Point2::new(cx + r * a.cos(), cy + r * a.sin())).collect();
    Polygon2D::new(pts).expect("random polygon has area")
}

fn inside_convex(p: Point2, poly: &[Point2]) -> bool {
    (0..poly.len()).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

fn geometry_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut degenerate = 0;
    for set in 0..HULL_SETS {
        let n = rng.random_range(1..=HULL_MAX_POINTS);
        // Every other set is snapped to a coarse grid, which exercises
        // duplicates and collinear runs with exact arithmetic.
        let snap = set % 2 == 1;
        let pts: Vec<Point2> = (0..n)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                if snap {
                    Point2::new((x * 2.0).round() / 2.0, (y * 2.0).round() / 2.0)
                } else {
                    Point2::new(x, y)
                }
            })
            .collect();
        let expected = brute_force_hull(&pts);
        match hull_2d(&pts) {
            Ok(h) => {
                let got: BTreeSet<(u64, u64)> = h.vertices().iter().map(|p| key(*p)).collect();
                ensure!(got.len() == h.len(), "set {set}: hull repeats a vertex");
                ensure!(got == expected, "set {set}: hull {:?} vs oracle {:?} over {pts:?}", h.vertices(), expected.iter().map(|(x, y)| (f64::from_bits(*x), f64::from_bits(*y))).collect::<Vec<_>>());
            }
            Err(_) => {
                degenerate += 1;
                // A degenerate hull is correct only when the extreme points
                // do not span an area: fewer than three, or all collinear.
                let ext: Vec<(u64, u64)> = expected.iter().copied().collect();
                ensure!(ext.len() < 3, "set {set}: hull_2d refused {pts:?} with {} extreme points", ext.len());
            }
        }
    }

    let pairs: Vec<(Polygon2D, Polygon2D, u64)> =
        (0..POLYGON_PAIRS).map(|i| (random_convex(&mut rng), random_convex(&mut rng), 1000 + i)).collect();
    let results: Vec<Result<f64, String>> = pairs
        .par_iter()
        .map(|(a, b, seed)| {
            let ab = convex_intersection(a, b).map_err(err)?.map_or(0.0, |p| area(&p));
            let ba = convex_intersection(b, a).map_err(err)?.map_or(0.0, |p| area(&p));
            if (ab - ba).abs() > SWAP_TOLERANCE {
                return Err(format!("pair {seed}: swapped areas {ab} vs {ba}"));
            }
            let (alo, ahi) = a.bounding_box();
            let (blo, bhi) = b.bounding_box();
            let (x0, x1) = (alo.x.max(blo.x), ahi.x.min(bhi.x));
            let (y0, y1) = (alo.y.max(blo.y), ahi.y.min(bhi.y));
            if x0 >= x1 || y0 >= y1 {
                return if ab == 0.0 { Ok(0.0) } else { Err(format!("pair {seed}: disjoint boxes, area {ab}")) };
            }
            // Jittered grid: one uniform sample per cell of the overlap box.
            let mut r = ChaCha8Rng::seed_from_u64(*seed);
            let (w, h) = ((x1 - x0) / MC_GRID as f64, (y1 - y0) / MC_GRID as f64);
            let mut hits = 0u64;
            for i in 0..MC_GRID {
                for j in 0..MC_GRID {
                    let p = Point2::new(
                        x0 + (i as f64 + r.random::<f64>()) * w,
                        y0 + (j as f64 + r.random::<f64>()) * h,
                    );
                    if inside_convex(p, a.vertices()) && inside_convex(p, b.vertices()) {
                        hits += 1;
                    }
                }
            }
            let n = (MC_GRID * MC_GRID) as f64;
            let box_area = (x1 - x0) * (y1 - y0);
            let estimate = box_area * hits as f64 / n;
            let p = (ab / box_area).clamp(0.0, 1.0);
            let sigma = box_area * (p * (1.0 - p) / n).sqrt();
            if (ab - estimate).abs() > MC_SIGMAS * sigma {
                return Err(format!("pair {seed}: area {ab} vs estimate {estimate} (sigma {sigma:.3e})"));
            }
            Ok(if sigma > 0.0 { (ab - estimate).abs() / sigma } else { 0.0 })
        })
        .collect();
    let mut worst: f64 = 0.0;
    for r in results {
        worst = worst.max(r?);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < GEOMETRY_TIME_LIMIT, "took {elapsed:?}");
    Ok(format!(
        "{HULL_SETS} hulls exact ({degenerate} degenerate), {POLYGON_PAIRS} pairs within {MC_SIGMAS} sigma (worst {worst:.2}), swap <= {SWAP_TOLERANCE:e}"
    ))
}

// ---------------------------------------------------------------------------
// 4

fn snapshot(name: &str) -> ObjsSnapshot {
    ObjsSnapshot::from_json_str(&read_fixture(name)).expect("snapshot fixture parses")
}

fn random_rigid(rng: &mut ChaCha8Rng) -> ObjectState {
    let half = rng.random_range(0.01..0.1);
    let z = if rng.random_bool(0.2) { rng.random_range(0.0..0.5) } else { 0.76 + half + rng.random_range(-0.003..0.003) };
    let pos = [rng.random_range(0.2..1.0), rng.random_range(-0.7..0.7), z];
    let vel = if rng.random_bool(0.5) { [0.0; 3] } else { [rng.random_range(-0.05..0.05), 0.0, 0.0] };
    ObjectState::Rigid(RigidState {
        pos,
        euler: Some([0.0; 3]),
        vel,
        bounds: Some([[pos[0] - half, pos[1] - half, pos[2] - half], [pos[0] + half, pos[1] + half, pos[2] + half]]),
        convex_hull_2d: None,
    })
}

fn random_num(rng: &mut ChaCha8Rng, depth: u32) -> String {
    let obj = |rng: &mut ChaCha8Rng| ["\"a\"", "\"b\"", "\"w\""][rng.random_range(0..3)];
    let rigid = |rng: &mut ChaCha8Rng| ["\"a\"", "\"b\""][rng.random_range(0..2)];
    let pick = if depth == 0 { rng.random_range(0..4) } else { rng.random_range(0..9) };
    match pick {
        0 => format!("{:.3}", rng.random_range(0.0..2.0)),
        1 => format!("dist({}, {})", obj(rng), obj(rng)),
        2 => format!("max_z({})", obj(rng)),
        3 => format!("overlap_frac({}, {})", rigid(rng), rigid(rng)),
        4 => format!("abs({} - {})", random_num(rng, depth - 1), random_num(rng, depth - 1)),
        5 => format!("({} + {})", random_num(rng, depth - 1), random_num(rng, depth - 1)),
        6 => format!("{} * {}", random_num(rng, depth - 1), random_num(rng, depth - 1)),
        7 => format!("x_of(pos({}))", obj(rng)),
        _ => format!("area(hull({}))", rigid(rng)),
    }
}

fn random_bool(rng: &mut ChaCha8Rng, depth: u32) -> String {
    let pick = if depth == 0 { rng.random_range(0..4) } else { rng.random_range(0..7) };
    match pick {
        0 => ["true", "false"][rng.random_range(0..2)].to_string(),
        1 => format!("on_table({})", ["\"a\"", "\"b\""][rng.random_range(0..2)]),
        2 => format!("still({}, {:.3})", ["\"a\"", "\"b\"", "\"w\""][rng.random_range(0..3)], rng.random_range(0.0..0.1)),
        3 => format!("{} {} {}", random_num(rng, 1), ["<", "<=", ">", ">="][rng.random_range(0..4)], random_num(rng, 1)),
        4 => format!("not ({})", random_bool(rng, depth - 1)),
        5 => format!("({} and {})", random_bool(rng, depth - 1), random_bool(rng, depth - 1)),
        _ => format!("({} or {})", random_bool(rng, depth - 1), random_bool(rng, depth - 1)),
    }
}

fn metric_semantics() -> Outcome {
    let ws = WorkspaceSpec::default();
    let source = read_fixture("metric/retrieve_cube.wit");
    ensure!(source == canonical_metric(&seed_fixture()), "fixture differs from the canonical retrieve-cube metric");
    let p = parse_metric(&source).map_err(err)?;

    let ok = evaluate(&p, &snapshot("metric/success.json"), &ws).map_err(err)?;
    ensure!(ok.success && ok.progress == 1.0, "success fixture: {} / {}", ok.success, ok.progress);
    let half = evaluate(&p, &snapshot("metric/overlap_040.json"), &ws).map_err(err)?;
    ensure!(!half.success, "overlap 0.4 fixture succeeded");
    let fell = evaluate(&p, &snapshot("metric/fallen_cube.json"), &ws).map_err(err)?;
    ensure!(!fell.success, "fallen cube fixture succeeded");
    ensure!(fell.codes.iter().any(|c| c == FELL_OFF), "fallen cube trace lacks {FELL_OFF}: {:?}", fell.codes);
    ensure!(fell.trace.iter().any(|t| t.expr == FELL_OFF), "trace has no {FELL_OFF} entry");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut successes = 0;
    for i in 0..METRIC_FUZZ_PAIRS {
        let mut src = format!("metric {{\n  success: {};\n", random_bool(&mut rng, 3));
        for m in 0..rng.random_range(0..4) {
            src.push_str(&format!("  milestone m{m} weight {}: {};\n", rng.random_range(1..4), random_bool(&mut rng, 2)));
        }
        src.push_str("}\n");
        let prog = parse_metric(&src).map_err(|e| format!("fuzz {i}: {e} in {src}"))?;
        let mut snap = ObjsSnapshot::default();
        snap.insert("a", random_rigid(&mut rng));
        snap.insert("b", random_rigid(&mut rng));
        let (x, y) = (rng.random_range(0.3..0.7), rng.random_range(-0.4..0.4));
        snap.insert(
            "w",
            ObjectState::Particle(ParticleState {
                pos: (0..4).map(|k| [x + 0.01 * k as f64, y + 0.005 * (k % 2) as f64, 0.77 + 0.01 * k as f64]).collect(),
                vel: (0..4).map(|_| [0.0, 0.0, rng.random_range(-0.02..0.02)]).collect(),
            }),
        );
        let r = evaluate(&prog, &snap, &ws).map_err(|e| format!("fuzz {i}: {e} in {src}"))?;
        ensure!((0.0..=1.0).contains(&r.progress), "fuzz {i}: progress {} out of range", r.progress);
        if r.success {
            successes += 1;
            ensure!(r.progress == 1.0, "fuzz {i}: success with progress {} in {src}", r.progress);
        }
    }
    Ok(format!(
        "fixtures ok (overlap 0.4 fails, fallen cube {FELL_OFF}), {METRIC_FUZZ_PAIRS} fuzz pairs, {successes} successes all at progress 1"
    ))
}

// ---------------------------------------------------------------------------
// 5

fn scene_constants() -> Outcome {
    let bits = |r: &Region2D| [r.x_min, r.x_max, r.y_min, r.y_max].map(f64::to_bits);
    let check = |ws: &WorkspaceSpec, via: &str| -> Result<(), String> {
        ensure!(ws.table_height.to_bits() == 0.76f64.to_bits(), "{via}: table z {}", ws.table_height);
        ensure!(bits(&ws.reachable) == [0.30f64, 0.72, -0.45, 0.45].map(f64::to_bits), "{via}: reachable {:?}", ws.reachable);
        let forbidden: Vec<_> = ws.forbidden.iter().map(bits).collect();
        let expected = vec![
            [0.30f64, 0.61, 0.20, 0.40].map(f64::to_bits),
            [0.30f64, 0.61, -0.40, -0.20].map(f64::to_bits),
        ];
        ensure!(forbidden == expected, "{via}: forbidden {:?}", ws.forbidden);
        Ok(())
    };
    let ws = WorkspaceSpec::default();
    check(&ws, "default")?;
    let json: WorkspaceSpec = serde_json::from_str(&serde_json::to_string(&ws).map_err(err)?).map_err(err)?;
    check(&json, "json")?;
    let cfg = PipelineConfig::from_toml(&PipelineConfig::default().to_toml()).map_err(err)?;
    check(&cfg.workspace, "toml")?;

    let scene = |name: &str| -> Result<_, String> {
        let v: Value = serde_json::from_str(&read_fixture(name)).map_err(err)?;
        Ok(validate_scene(&scene_from_value(&v, &ws)?))
    };
    let bad = scene("scene/in_forbidden.json")?;
    ensure!(bad.has(SceneViolationCode::InForbidden), "(0.45, 0.30) fixture: {:?}", bad.violations);
    let good = scene("scene/shifted.json")?;
    ensure!(good.is_ok(), "(0.45, 0.10) fixture: {:?}", good.violations);
    Ok("workspace bit-exact through json and toml; (0.45, 0.30) IN_FORBIDDEN, (0.45, 0.10) valid".into())
}

// ---------------------------------------------------------------------------
// 6

/// Welford's running moments plus extrema.
#[derive(Default)]
struct Streaming {
    n: usize,
    mean: f64,
    m2: f64,
    min: Option<i32>,
    max: Option<i32>,
}

impl Streaming {
    fn push(&mut self, x: i32) {
        self.n += 1;
        let d = f64::from(x) - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (f64::from(x) - self.mean);
        self.min = Some(self.min.map_or(x, |m| m.min(x)));
        self.max = Some(self.max.map_or(x, |m| m.max(x)));
    }

    fn std(&self) -> f64 {
        (self.m2 / self.n as f64).sqrt()
    }
}

fn statistics_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<(StrategyClass, i32)> = (0..2000)
        .map(|_| (StrategyClass::ALL[rng.random_range(0..3)], rng.random_range(-4..=4)))
        .collect();
    let table = delta_statistics_from(samples.iter().copied());
    let mut oracle: BTreeMap<StrategyClass, Streaming> = BTreeMap::new();
    for (c, d) in &samples {
        oracle.entry(*c).or_default().push(*d);
    }
    for c in StrategyClass::ALL {
        let (s, o) = (table.get(c), &oracle[&c]);
        ensure!(s.count == o.n, "{c:?} count {} vs {}", s.count, o.n);
        ensure!((s.mean.unwrap() - o.mean).abs() <= STATS_TOLERANCE, "{c:?} mean {:?} vs {}", s.mean, o.mean);
        ensure!((s.std.unwrap() - o.std()).abs() <= STATS_TOLERANCE, "{c:?} std {:?} vs {}", s.std, o.std());
        ensure!(s.max == o.max && s.min == o.min, "{c:?} extrema {:?}/{:?}", s.max, s.min);
    }
    let rendered = table.render();
    let lines: Vec<&str> = rendered.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    ensure!(header == ["Pivot", "Trap", "Add"], "header {header:?}");
    let labels: Vec<&str> = lines[1..].iter().filter_map(|l| l.split_whitespace().next()).collect();
    ensure!(labels == ["count", "mean", "max", "min", "std"], "rows {labels:?}");
    let mean_cells: Vec<&str> = lines[2].split_whitespace().skip(1).collect();
    let expected: Vec<String> = StrategyClass::ALL.iter().map(|c| format!("{:.2}", oracle[c].mean)).collect();
    ensure!(mean_cells == expected, "mean row {mean_cells:?} vs {expected:?}");

    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = PipelineConfig { rng_seed: RUN_RNG, output_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let manifest = run_full(&cfg).map_err(err)?;
    ensure!(!manifest.families.is_empty(), "the run produced no families");
    let mut counts = Vec::new();
    for name in &manifest.families {
        let fam = dir.path().join(name);
        let f: FamilyReport =
            serde_json::from_str(&std::fs::read_to_string(fam.join("stats.json")).map_err(err)?).map_err(err)?;
        let nodes = import_tree_json(&std::fs::read_to_string(fam.join("tree.json")).map_err(err)?).map_err(err)?;
        let accepted = nodes.iter().skip(1).filter(|n: &&MutationNode| n.is_accepted()).count();
        ensure!(accepted == f.accepted_mutations, "{}: report says {}, tree has {accepted}", f.dir, f.accepted_mutations);
        let in_range = FAMILY_RANGE.contains(&accepted) || (accepted == 0 && f.stalled);
        ensure!(in_range, "{}: {accepted} accepted mutations (stalled: {})", f.dir, f.stalled);
        counts.push(accepted);
    }
    Ok(format!("oracle agrees to {STATS_TOLERANCE:e}; rng {RUN_RNG} families accepted {counts:?}"))
}

// ---------------------------------------------------------------------------
// 7

fn cli_run(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_witforge"))
        .args(["run", "--backend", "mock", "--rng", &RUN_RNG.to_string(), "--out"])
        .arg(out)
        .env_remove("WITFORGE_BACKEND")
        .env_remove("WITFORGE_RNG_SEED")
        .output()
        .map_err(err)?;
    ensure!(status.status.success(), "witforge run failed: {}", String::from_utf8_lossy(&status.stderr));
    Ok(())
}

/// Canonical JSON of every accepted task: seeds plus accepted mutations.
fn accepted_tasks(dir: &Path) -> Result<BTreeSet<String>, String> {
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).map_err(err)?).map_err(err)?;
    let mut out = BTreeSet::new();
    for f in manifest["families"].as_array().ok_or("manifest has no families")? {
        let fam = dir.join(f.as_str().ok_or("family entry is not a string")?);
        let nodes = import_tree_json(&std::fs::read_to_string(fam.join("tree.json")).map_err(err)?).map_err(err)?;
        out.extend(nodes.iter().filter(|n| n.is_accepted()).map(|n| canonical_json(&n.task)));
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    cli_run(a.path())?;
    cli_run(b.path())?;
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    ensure!(!ta.is_empty(), "empty run directory");
    let names_a: Vec<&String> = ta.keys().collect();
    let names_b: Vec<&String> = tb.keys().collect();
    ensure!(names_a == names_b, "file sets differ");
    if let Some(k) = ta.keys().find(|k| ta[*k] != tb[*k]) {
        return Err(format!("{k} differs between runs"));
    }

    let server = StubServer::start(0, 200);
    let rec = tempfile::tempdir().map_err(err)?;
    let mut http = PipelineConfig {
        backend: BackendKind::Http,
        rng_seed: RUN_RNG,
        output_dir: Some(rec.path().to_path_buf()),
        ..Default::default()
    };
    http.http.endpoint = server.url.clone();
    http.http.model = "stub".into();
    http.http.base_delay_ms = 1;
    let recorded = run_full(&http).map_err(err)?;
    ensure!(recorded.errors.is_empty(), "recorded run errors: {:?}", recorded.errors);

    let rep = tempfile::tempdir().map_err(err)?;
    let replay = PipelineConfig {
        backend: BackendKind::Replay,
        rng_seed: RUN_RNG,
        output_dir: Some(rep.path().to_path_buf()),
        replay_path: Some(rec.path().to_path_buf()),
        ..Default::default()
    };
    let replayed = run_full(&replay).map_err(err)?;
    ensure!(replayed.errors.is_empty(), "replayed run errors: {:?}", replayed.errors);
    let (sa, sb) = (accepted_tasks(rec.path())?, accepted_tasks(rep.path())?);
    ensure!(!sa.is_empty() && sa == sb, "accepted sets differ: {} recorded vs {} replayed", sa.len(), sb.len());
    ensure!(recorded.counts == replayed.counts, "counts differ: {:?} vs {:?}", recorded.counts, replayed.counts);
    Ok(format!(
        "{} files byte-identical; replay of {} HTTP requests reproduces {} accepted tasks",
        ta.len(),
        server.request_count(),
        sa.len()
    ))
}

// ---------------------------------------------------------------------------
// 8

fn gate_truth_table() -> Outcome {
    let task = parse_task(&read_fixture("reference_task.json")).map_err(err)?;
    let report_json: Value = serde_json::from_str(&read_fixture("reference_report.json")).map_err(err)?;
    let base = VerificationReport::from_json(&report_json).map_err(err)?;

    let d = gate_decision(&task, &base, &GateConfig::default()).map_err(err)?;
    ensure!(d.is_accepted(), "reference example rejected: {:?}", d.reasons);
    ensure!(d.operational_difficulty == Some(4), "reference difficulty {:?}", d.operational_difficulty);
    ensure!(d.advisories == [codes::SOFT_FEASIBILITY], "reference advisories {:?}", d.advisories);

    let mut incomplete = task.clone();
    incomplete.initial_scene_setup.push_str(" Keep the 'spare wedge' next to the board.");

    let mut rows = 0;
    for bits in 0u8..16 {
        let (complete, possible, feasible, efficient) = (bits & 1 == 0, bits & 2 == 0, bits & 4 == 0, bits & 8 == 0);
        let t = if complete { &task } else { &incomplete };
        let mut r = base.clone();
        r.simulatability.difficulty = if possible { Simulatability::Hard } else { Simulatability::Impossible };
        r.solution_feasibility.level = if feasible { Feasibility::KindOfFeasible } else { Feasibility::NotFeasible };
        r.solution_efficiency.flag = if efficient { YesNo::Yes } else { YesNo::No };
        let d = gate_decision(t, &r, &GateConfig::default()).map_err(err)?;

        let mut expected = Vec::new();
        if !complete {
            expected.push(codes::INCOMPLETE);
        }
        if !possible {
            expected.push(codes::SIM_IMPOSSIBLE);
        }
        if !feasible {
            expected.push(codes::NOT_FEASIBLE);
        }
        if !efficient {
            expected.push(codes::BYPASS_EXISTS);
        }
        let all_pass = complete && possible && feasible && efficient;
        ensure!(d.is_accepted() == all_pass, "row {bits:04b}: accepted = {}", d.is_accepted());
        ensure!(d.reasons == expected, "row {bits:04b}: reasons {:?} vs {expected:?}", d.reasons);
        ensure!(d.operational_difficulty == all_pass.then_some(4), "row {bits:04b}: difficulty {:?}", d.operational_difficulty);
        rows += 1;
    }
    Ok(format!("{rows}/16 rows accept iff all four axes pass; reference example accepted, difficulty 4, SOFT_FEASIBILITY"))
}
