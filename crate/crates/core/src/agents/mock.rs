//! Offline backend: a pure function of (role, payload, seed).
//!
//! The seed generator draws from three parametric templates, the verifier
//! applies a keyword rule table, the mutator applies syntactic transforms
//! (and, with probability 0.8 per attempt, plants one detectable flaw), the
//! scene generator lays objects out on a grid and the metric generator
//! returns canonical programs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{AgentBackend, AgentError, AgentReply, AgentRequest, AgentRole};
use crate::scene::{
    EntityPlacement, EntitySource, MaterialKind, PhysicalParams, Scale, SceneConfig, SupportRelation, WorkspaceSpec,
};
use crate::schema::{name_tokens, task_from_value, task_to_value, Category, ObjectSpec, ParseOptions, TaskSpec};
use crate::verification::{
    completeness_check, AssetAssignment, CompletenessAxis, DifficultyAxis, EfficiencyAxis, Feasibility,
    FeasibilityAxis, Simulatability, SimulatabilityAxis, VerificationReport, YesNo,
};

/// Functional attributes that mark an object as a deliberate decoy.
pub const TRAP_MARKERS: [&str; 5] =
    ["collapses under load", "too light", "bolted to the table", "beyond the arms' reach", "too short"];
/// Attribute the mock mutator plants to open a shortcut.
pub const BYPASS_MARKER: &str = "directly solves the goal";
/// Probability that one mutator attempt comes back without a planted flaw.
pub const CLEAN_PROBABILITY: f64 = 0.2;

const IMPOSSIBLE_WORDS: [&str; 8] =
    ["magnetic", "magnet", "magnetism", "aerodynamic", "aerodynamics", "sticky", "thermodynamic", "thermodynamics"];
const HARD_WORDS: [&str; 7] = ["water", "liquid", "fluid", "juice", "sand", "dough", "granular"];
const NOT_FEASIBLE_WORDS: [&str; 9] = ["break", "breaking", "tear", "tearing", "drill", "drilling", "cut", "cutting", "smash"];
const SOFT_FEASIBLE_WORDS: [&str; 8] = ["throw", "throwing", "catch", "catching", "hit", "hitting", "toss", "tossing"];

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    adversarial: bool,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// A mutator that breaks the mutation contract on every reply: Pivot
    /// renames a success-criteria object, additive types drop an original.
    pub fn adversarial() -> Self {
        Self { adversarial: true }
    }
}

fn rng_for(role: AgentRole, payload: &Value, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(role.as_str().as_bytes());
    h.update([0]);
    h.update(serde_json::to_string(payload).expect("JSON value").as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn fenced(v: &Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(v).expect("JSON value"))
}

fn payload_task(payload: &Value) -> Result<TaskSpec, AgentError> {
    let t = payload.get("task").ok_or_else(|| AgentError::Payload("payload has no task".into()))?;
    task_from_value(t, &ParseOptions::default()).map_err(|e| AgentError::Payload(e.to_string()))
}

impl AgentBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        let payload = req.payload().ok_or_else(|| AgentError::Payload("user message is not JSON".into()))?;
        let mut rng = rng_for(req.role, &payload, req.seed.unwrap_or(0));
        let text = match req.role {
            AgentRole::SeedGenerator => {
                let n = payload.get("num_tasks").and_then(Value::as_u64).unwrap_or(3) as usize;
                let category = payload.get("category").and_then(Value::as_str).and_then(|c| c.parse().ok());
                format!("Here are the tasks.\n\n{}", fenced(&seed_tasks(n, category, &mut rng)))
            }
            AgentRole::Verifier => fenced(&mock_report(&payload_task(&payload)?).to_json()),
            AgentRole::Mutator => {
                let task = payload_task(&payload)?;
                let kind = payload.get("mutation_type").and_then(Value::as_str).unwrap_or("related");
                let previous = payload
                    .get("previous_attempt")
                    .and_then(|v| task_from_value(v, &ParseOptions::default()).ok());
                let child = match previous {
                    _ if self.adversarial => adversarial_mutation(&task, kind, &mut rng),
                    Some(prev) => repair(&task, &prev, &mut rng),
                    None => mutate(&task, kind, &mut rng),
                };
                fenced(&task_to_value(&child))
            }
            AgentRole::SceneGenerator => {
                let scene = grid_scene(&payload_task(&payload)?, &WorkspaceSpec::default());
                fenced(&serde_json::to_value(scene).expect("plain data"))
            }
            AgentRole::MetricGenerator => fenced(&json!({ "metric": canonical_metric(&payload_task(&payload)?) })),
        };
        Ok(AgentReply::text(text))
    }
}

// ---------------------------------------------------------------------------
// Seed templates

fn object(name: &str, appearance: &[&str], functional: &[&str], instances: &[&str]) -> ObjectSpec {
    ObjectSpec {
        appearance_attribute: appearance.iter().map(|s| s.to_string()).collect(),
        functional_attribute: functional.iter().map(|s| s.to_string()).collect(),
        potential_instances: instances.iter().map(|s| s.to_string()).collect(),
        ..ObjectSpec::new(name)
    }
}

fn retrieve_cube(rng: &mut ChaCha8Rng) -> TaskSpec {
    let color = *["red", "blue", "yellow", "orange"].choose(rng).expect("non-empty");
    let gap = *[15, 20, 25].choose(rng).expect("non-empty");
    TaskSpec {
        task_name: "retrieve cube from container".into(),
        object_list: vec![
            object("cube", &["small", color], &["rigid", "light"], &["dice", "sugar cube", "toy block"]),
            object(
                "narrow opening container",
                &["tall", "opening narrower than the gripper"],
                &["rigid", "movable"],
                &["bottle", "vase", "jar"],
            ),
            object("target_area", &["flat", "green"], &["thin", "stays in place"], &["green mat", "coaster", "paper sheet"]),
        ],
        initial_scene_setup: format!(
            "The 'cube' sits at the bottom of the 'narrow opening container', which stands upright on the table. \
             The 'target_area' lies flat on the table {gap} cm in front of the 'narrow opening container'."
        ),
        task_instruction: format!("Get the small {color} block out of the tall vessel and onto the green mat."),
        task_success_criteria: Some(
            "The 'cube' is on the table surface, the overlap between the 'cube' and the 'target_area' is greater \
             than 50%, and the speed of the 'cube' is below 0.01 m/s."
                .into(),
        ),
        potential_solution: "Grasp the 'narrow opening container' by its body. Tip it over above the 'target_area' \
                             so the 'cube' slides out. Set the 'narrow opening container' upright beside the 'target_area'."
            .into(),
        task_description: "The gripper cannot reach inside the 'narrow opening container', so the 'cube' has to be \
                           poured out. Tipping the container over the 'target_area' releases the 'cube' in one motion."
            .into(),
        category: Some(Category::Geometry),
        ..Default::default()
    }
}

fn align_blocks(rng: &mut ChaCha8Rng) -> TaskSpec {
    let spread = *[20, 25, 30].choose(rng).expect("non-empty");
    TaskSpec {
        task_name: "align two blocks".into(),
        object_list: vec![
            object("block 1", &["cuboid", "5 cm wide"], &["rigid", "slides on the table"], &["wooden block", "eraser", "soap bar"]),
            object("block 2", &["cuboid", "5 cm wide"], &["rigid", "slides on the table"], &["wooden block", "eraser", "soap bar"]),
            object("straightedge tool", &["long", "flat", "straight edge"], &["rigid", "movable"], &["ruler", "spatula", "paint stirrer"]),
        ],
        initial_scene_setup: format!(
            "The 'block 1' and the 'block 2' stand on the table {spread} cm apart at different distances from the robot. \
             The 'straightedge tool' lies flat on the table between them."
        ),
        task_instruction: "Line up the two small blocks side by side at the same distance from the robot.".into(),
        task_success_criteria: Some(
            "The x positions of the 'block 1' and the 'block 2' differ by less than 0.01 m, both rest on the table \
             surface, and both have a speed below 0.01 m/s."
                .into(),
        ),
        potential_solution: "Place the 'straightedge tool' on the table along the y axis. Push the 'block 1' against \
                             the 'straightedge tool'. Push the 'block 2' against the 'straightedge tool' next to the \
                             'block 1'. Slide the 'straightedge tool' away."
            .into(),
        task_description: "Eyeballing the alignment is imprecise, so the 'straightedge tool' acts as a fence that \
                           both the 'block 1' and the 'block 2' are pushed against."
            .into(),
        category: Some(Category::Assembly),
        ..Default::default()
    }
}

fn hold_cup(rng: &mut ChaCha8Rng) -> TaskSpec {
    let height = *[8, 10, 12].choose(rng).expect("non-empty");
    TaskSpec {
        task_name: "carry cup of water onto platform".into(),
        object_list: vec![
            object("cup", &["cylindrical", "open top"], &["rigid", "holds liquid"], &["mug", "glass", "paper cup"]),
            object("water", &["clear"], &["liquid"], &["water", "juice", "tea"]),
            object(
                "platform block",
                &["box-shaped", &format!("{height} cm high")],
                &["rigid", "heavy", "stable"],
                &["book stack", "wooden crate", "brick"],
            ),
        ],
        initial_scene_setup: "The 'water' fills more than half of the 'cup', which stands on the table. The \
                              'platform block' stands on the table beside the 'cup'."
            .into(),
        task_instruction: "Put the cup on top of the box without spilling what is inside.".into(),
        task_success_criteria: Some(
            "The 'cup' stands on top of the 'platform block', at least 90% of the 'water' particles remain inside \
             the 'cup', and the speed of the 'cup' is below 0.01 m/s."
                .into(),
        ),
        potential_solution: "Grasp the 'cup' by its side while keeping it upright. Lift the 'cup' slowly so the \
                             'water' does not slosh. Lower the 'cup' onto the top of the 'platform block'."
            .into(),
        task_description: "The 'water' spills if the 'cup' tilts or accelerates, so the lift has to stay slow and \
                           level until the 'cup' rests on the 'platform block'."
            .into(),
        category: Some(Category::Material),
        ..Default::default()
    }
}

type Template = fn(&mut ChaCha8Rng) -> TaskSpec;
const TEMPLATES: [(Category, Template); 3] =
    [(Category::Geometry, retrieve_cube), (Category::Assembly, align_blocks), (Category::Material, hold_cup)];

pub fn seed_tasks(n: usize, category: Option<Category>, rng: &mut ChaCha8Rng) -> Value {
    let pool: Vec<Template> =
        TEMPLATES.iter().filter(|(c, _)| category.is_none_or(|want| *c == want)).map(|(_, t)| *t).collect();
    let tasks: Vec<Value> = (0..n)
        .map(|i| {
            let mut t = pool[i % pool.len()](rng);
            let round = i / pool.len();
            if round > 0 {
                t.task_name = format!("{} v{}", t.task_name, round + 1);
            }
            task_to_value(&t)
        })
        .collect();
    Value::Array(tasks)
}

// ---------------------------------------------------------------------------
// Verifier rule table

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn object_words(o: &ObjectSpec) -> Vec<String> {
    let mut w = words(&o.object_name);
    for a in o.attributes() {
        w.extend(words(a));
    }
    w
}

/// Sentences in `text`: terminators followed by whitespace or the end.
pub fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut pending = false;
    for (i, c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            if pending {
                count += 1;
            }
            pending = false;
        } else if !c.is_whitespace() {
            pending = true;
        }
    }
    count + usize::from(pending)
}

pub fn is_trap(o: &ObjectSpec) -> bool {
    o.functional_attribute.iter().any(|a| TRAP_MARKERS.iter().any(|m| a.contains(m)))
}

/// `ceil(0.75 × solution sentences)`, plus one for a decoy object, plus one
/// for a crowded scene (seven objects or more), clamped to 1..=5.
pub fn mock_difficulty(t: &TaskSpec) -> u8 {
    let steps = (0.75 * sentence_count(&t.potential_solution) as f64).ceil() as i64;
    let trap = i64::from(t.object_list.iter().any(is_trap));
    let crowded = i64::from(t.object_list.len() >= 7);
    (steps + trap + crowded).clamp(1, 5) as u8
}

fn default_primitive(name: &str) -> Option<&'static str> {
    let toks = name_tokens(name);
    if toks.iter().any(|t| t == "cube" || t == "block") {
        Some("cube")
    } else if toks.iter().any(|t| t == "ball" || t == "sphere") {
        Some("sphere")
    } else {
        None
    }
}

pub fn mock_report(t: &TaskSpec) -> VerificationReport {
    let local = completeness_check(t);
    let hits = |vocab: &[&str]| -> Vec<String> {
        t.object_list
            .iter()
            .filter(|o| object_words(o).iter().any(|w| vocab.contains(&w.as_str())))
            .map(|o| o.object_name.clone())
            .collect()
    };
    let impossible = hits(&IMPOSSIBLE_WORDS);
    let hard = hits(&HARD_WORDS);
    let simulatability = if !impossible.is_empty() {
        SimulatabilityAxis {
            difficulty: Simulatability::Impossible,
            reason: "Magnetism, aerodynamics, thermodynamics and sticky materials cannot be simulated.".into(),
            challenging_objects: impossible,
        }
    } else if !hard.is_empty() {
        SimulatabilityAxis {
            difficulty: Simulatability::Hard,
            reason: "Liquids and granular media need particle simulation.".into(),
            challenging_objects: hard,
        }
    } else {
        SimulatabilityAxis {
            difficulty: Simulatability::Easy,
            reason: "Standard rigid-body interactions with simple geometries.".into(),
            challenging_objects: vec![],
        }
    };

    let solution = words(&t.potential_solution);
    let has = |vocab: &[&str]| solution.iter().find(|w| vocab.contains(&w.as_str())).cloned();
    let solution_feasibility = if let Some(w) = has(&NOT_FEASIBLE_WORDS) {
        FeasibilityAxis {
            level: Feasibility::NotFeasible,
            not_feasible_step: w.clone(),
            reason: format!("The solution requires destructive manipulation ('{w}')."),
        }
    } else if let Some(w) = has(&SOFT_FEASIBLE_WORDS) {
        FeasibilityAxis {
            level: Feasibility::KindOfFeasible,
            not_feasible_step: String::new(),
            reason: format!("The solution relies on highly dynamic control ('{w}')."),
        }
    } else {
        FeasibilityAxis {
            level: Feasibility::VeryFeasible,
            not_feasible_step: String::new(),
            reason: "Every step is reachable with a parallel gripper.".into(),
        }
    };

    let bypass: Vec<String> = t
        .object_list
        .iter()
        .filter(|o| o.attributes().any(|a| a.contains(BYPASS_MARKER)))
        .map(|o| o.object_name.clone())
        .collect();
    let solution_efficiency = if bypass.is_empty() {
        EfficiencyAxis { flag: YesNo::Yes, bypass_solution: String::new(), bypass_objects: vec![] }
    } else {
        let quoted: Vec<String> = bypass.iter().map(|b| format!("'{b}'")).collect();
        EfficiencyAxis {
            flag: YesNo::No,
            bypass_solution: format!("Using {} reaches the goal directly.", quoted.join(", ")),
            bypass_objects: bypass,
        }
    };

    let score = mock_difficulty(t);
    let updated = t
        .object_list
        .iter()
        .map(|o| {
            let (use_primitive, asset_id) = if o.is_resolved() {
                (o.use_primitive.clone(), o.asset_id.clone())
            } else {
                (default_primitive(&o.object_name).map(str::to_string), None)
            };
            AssetAssignment { object_name: o.object_name.clone(), use_primitive, asset_id }
        })
        .collect();

    VerificationReport {
        completeness: Some(CompletenessAxis {
            flag: local.flag,
            reason: if local.is_complete() {
                "Every mentioned object is listed.".into()
            } else {
                "Some mentioned objects are not listed.".into()
            },
            missing_objects: local.missing_objects,
        }),
        simulatability,
        solution_feasibility,
        solution_efficiency,
        difficulty: DifficultyAxis {
            score,
            reason: format!(
                "{} solution step(s) over {} object(s).",
                sentence_count(&t.potential_solution),
                t.object_list.len()
            ),
        },
        updated_object_list: Some(updated),
    }
}

// ---------------------------------------------------------------------------
// Mutator

const PIVOT_TOOLS: [(&str, &[&str], &[&str]); 4] = [
    ("hook tool", &["long", "hooked end"], &["rigid", "movable"], ),
    ("flat spatula", &["flat", "thin blade"], &["rigid", "movable"]),
    ("pushing stick", &["long", "slim"], &["rigid", "light"]),
    ("shallow tray", &["flat", "raised rim"], &["rigid", "slides on the table"]),
];
const PIVOT_INSTANCES: [&[&str]; 4] = [
    &["coat hanger", "cane", "back scratcher"],
    &["spatula", "pancake turner", "putty knife"],
    &["chopstick", "dowel", "wooden spoon"],
    &["baking tray", "serving tray", "lid"],
];

const TRAPS: [(&str, &str, &str); 5] = [
    ("foam bridge", "long", "collapses under load"),
    ("plastic hammer", "hammer-shaped", "too light to move anything"),
    ("screwdriver", "long", "bolted to the table"),
    ("long stick", "slim", "beyond the arms' reach"),
    ("short ruler", "flat", "too short to span the distance"),
];

const RELATED: [&str; 8] = ["fork", "napkin", "spoon", "coaster", "pencil", "eraser", "notebook", "tape roll"];
const UNRELATED: [&str; 8] = ["apple", "toy car", "rubber duck", "banana", "tennis ball", "stapler", "comb", "clothes peg"];

fn fresh_name(t: &TaskSpec, base: &str) -> String {
    let mut name = base.to_string();
    let mut k = 2;
    while t.object(&name).is_some() {
        name = format!("{base} {k}");
        k += 1;
    }
    name
}

fn append(text: &mut String, sentence: &str) {
    if !text.is_empty() && !text.ends_with(' ') {
        text.push(' ');
    }
    text.push_str(sentence);
}

fn anchor(t: &TaskSpec) -> String {
    t.criteria_objects()
        .into_iter()
        .next()
        .or_else(|| t.object_list.first().map(|o| o.object_name.clone()))
        .unwrap_or_else(|| "table".into())
}

fn pivot(t: &mut TaskSpec, rng: &mut ChaCha8Rng) -> String {
    let criteria = t.criteria_objects();
    let blocked = t
        .object_list
        .iter()
        .find(|o| !criteria.contains(&o.object_name) && !o.functional_attribute.iter().any(|a| a == "fixed in place"))
        .map(|o| o.object_name.clone());
    if let Some(b) = &blocked {
        t.object_mut(b).expect("exists").functional_attribute.push("fixed in place".into());
        append(&mut t.initial_scene_setup, &format!("The '{b}' is fixed in place and cannot be moved."));
    }
    let i = rng.random_range(0..PIVOT_TOOLS.len());
    let (base, appearance, functional) = PIVOT_TOOLS[i];
    let tool = fresh_name(t, base);
    t.object_list.push(object(&tool, appearance, functional, PIVOT_INSTANCES[i]));
    let o1 = anchor(t);
    let o2 = criteria.get(1).cloned().unwrap_or_else(|| o1.clone());
    append(&mut t.initial_scene_setup, &format!("A '{tool}' lies on the table near the '{o1}'."));
    let steps = [
        format!("Grasp the '{tool}' with one arm."),
        format!("Use the '{tool}' to move the '{o1}' toward the '{o2}'."),
        format!("Hold the '{o2}' steady with the other arm."),
        format!("Adjust the '{o1}' until it settles in place."),
        format!("Put the '{tool}' back on the table."),
    ];
    let k = rng.random_range(2..=steps.len());
    t.potential_solution = steps[..k].join(" ");
    t.task_description = match &blocked {
        Some(b) => format!("The '{b}' can no longer be moved, so the '{tool}' opens a different route to the goal."),
        None => format!("The '{tool}' opens a different route to the goal."),
    };
    tool
}

fn trap(t: &mut TaskSpec, rng: &mut ChaCha8Rng) -> String {
    let (base, look, flaw) = *TRAPS.choose(rng).expect("non-empty");
    let name = fresh_name(t, base);
    t.object_list.push(object(&name, &[look], &["rigid", flaw], &[base, "toy version", "prop"]));
    let o1 = anchor(t);
    append(&mut t.initial_scene_setup, &format!("A '{name}' lies on the table near the '{o1}'."));
    append(&mut t.task_description, &format!("The '{name}' looks useful but is {flaw}."));
    name
}

fn additive(t: &mut TaskSpec, bank: &[&str], rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=2);
    let mut last = String::new();
    for base in bank.choose_multiple(rng, n) {
        let name = fresh_name(t, base);
        t.object_list.push(object(&name, &["everyday size"], &["rigid", "movable"], &[base, "toy version", "replica"]));
        append(&mut t.initial_scene_setup, &format!("A '{name}' sits on the table away from the other objects."));
        last = name;
    }
    last
}

fn apply(t: &TaskSpec, kind: &str, rng: &mut ChaCha8Rng) -> (TaskSpec, String) {
    let mut child = t.clone();
    let added = match kind {
        "pivot" => pivot(&mut child, rng),
        "trap" => trap(&mut child, rng),
        "unrelated" => additive(&mut child, &UNRELATED, rng),
        _ => additive(&mut child, &RELATED, rng),
    };
    child.difficulty = None;
    (child, added)
}

const OMISSION_NAME: &str = "support wedge";
const IMPOSSIBLE_MARKER: &str = "magnetic";

/// With probability `1 - CLEAN_PROBABILITY`, plants one flaw the verifier
/// catches: an unlisted object, a shortcut attribute or an unsimulatable
/// material.
fn maybe_flaw(child: &mut TaskSpec, added: &str, rng: &mut ChaCha8Rng) {
    if rng.random_bool(CLEAN_PROBABILITY) {
        return;
    }
    match rng.random_range(0..3) {
        0 => {
            let o1 = anchor(child);
            append(&mut child.initial_scene_setup, &format!("A '{OMISSION_NAME}' rests against the '{o1}'."));
        }
        1 => child.object_mut(added).expect("added").functional_attribute.push(BYPASS_MARKER.into()),
        _ => child.object_mut(added).expect("added").functional_attribute.push(IMPOSSIBLE_MARKER.into()),
    }
}

/// One first-round mutator attempt: the transform, then maybe a flaw.
pub fn mutate(t: &TaskSpec, kind: &str, rng: &mut ChaCha8Rng) -> TaskSpec {
    let (mut child, added) = apply(t, kind, rng);
    maybe_flaw(&mut child, &added, rng);
    child
}

/// A refinement round: strips the planted flaws from the previous attempt,
/// then may plant a new one.
pub fn repair(parent: &TaskSpec, previous: &TaskSpec, rng: &mut ChaCha8Rng) -> TaskSpec {
    let mut child = previous.clone();
    let omission = format!("'{OMISSION_NAME}'");
    child.initial_scene_setup = child
        .initial_scene_setup
        .split_inclusive(". ")
        .filter(|s| !s.contains(&omission))
        .collect::<String>()
        .trim_end()
        .to_string();
    for o in child.object_list.iter_mut().filter(|o| parent.object(&o.object_name).is_none()) {
        o.functional_attribute.retain(|a| a != BYPASS_MARKER && a != IMPOSSIBLE_MARKER);
    }
    let added = child
        .object_list
        .iter()
        .rev()
        .find(|o| parent.object(&o.object_name).is_none())
        .map(|o| o.object_name.clone());
    if let Some(added) = added {
        maybe_flaw(&mut child, &added, rng);
    }
    child
}

fn rename_everywhere(t: &mut TaskSpec, from: &str, to: &str) {
    let (q_from, q_to) = (format!("'{from}'"), format!("'{to}'"));
    if let Some(o) = t.object_mut(from) {
        o.object_name = to.to_string();
    }
    for text in [&mut t.initial_scene_setup, &mut t.potential_solution, &mut t.task_description] {
        *text = text.replace(&q_from, &q_to);
    }
    if let Some(c) = &mut t.task_success_criteria {
        *c = c.replace(&q_from, &q_to);
    }
}

/// A contract-breaking but otherwise clean mutation.
pub fn adversarial_mutation(t: &TaskSpec, kind: &str, rng: &mut ChaCha8Rng) -> TaskSpec {
    let (mut child, _) = apply(t, kind, rng);
    if kind == "pivot" {
        let target = anchor(t);
        let renamed = fresh_name(&child, &format!("{target} replica"));
        rename_everywhere(&mut child, &target, &renamed);
    } else {
        let original = &t.object_list[rng.random_range(0..t.object_list.len())].object_name;
        child.object_list.retain(|o| &o.object_name != original);
        let quoted = format!("'{original}'");
        for text in [&mut child.initial_scene_setup, &mut child.potential_solution, &mut child.task_description] {
            *text = text.replace(&quoted, original);
        }
        if let Some(c) = &mut child.task_success_criteria {
            *c = c.replace(&quoted, original);
        }
    }
    child
}

// ---------------------------------------------------------------------------
// Scene generator

const GRID_X: [f64; 4] = [0.35, 0.45, 0.55, 0.65];
const GRID_Y: [f64; 4] = [-0.15, -0.05, 0.05, 0.15];
const SIDE_SLOTS: [(f64, f64); 2] = [(0.665, 0.30), (0.665, -0.30)];

fn slots() -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = GRID_X.iter().flat_map(|x| GRID_Y.iter().map(move |y| (*x, *y))).collect();
    out.extend(SIDE_SLOTS);
    out
}

fn is_liquid(o: &ObjectSpec) -> bool {
    o.functional_attribute.iter().any(|a| a == "liquid" || a == "granular")
}

fn is_container(o: &ObjectSpec) -> bool {
    let toks = name_tokens(&o.object_name);
    ["cup", "container", "bowl", "mug", "jar", "glass"].iter().any(|c| toks.iter().any(|t| t == c))
}

fn is_flat(o: &ObjectSpec) -> bool {
    let toks = name_tokens(&o.object_name);
    toks.iter().any(|t| t == "area" || t == "target_area" || t == "mat")
}

/// Places every object on a 0.10 m grid inside the free band of the
/// reachable region. Liquids go inside the first container.
pub fn grid_scene(t: &TaskSpec, ws: &WorkspaceSpec) -> SceneConfig {
    let h = ws.table_height;
    let container = t.object_list.iter().find(|o| is_container(o)).map(|o| o.object_name.clone());
    let mut free = slots().into_iter();
    let mut placed: Vec<EntityPlacement> = Vec::new();
    let mut liquids = Vec::new();
    for o in &t.object_list {
        if is_liquid(o) && container.is_some() {
            liquids.push(o);
            continue;
        }
        let (x, y) = free.next().unwrap_or((0.5, 0.0));
        let size = if is_container(o) {
            [0.08, 0.08, 0.10]
        } else if is_flat(o) {
            [0.08, 0.08, 0.002]
        } else {
            [0.06, 0.06, 0.06]
        };
        placed.push(EntityPlacement {
            name: o.object_name.clone(),
            source: source_of(o),
            position: [x, y, h + size[2] / 2.0],
            euler: [0.0; 3],
            scale: Scale::Uniform(1.0),
            size,
            material_kind: if is_liquid(o) { MaterialKind::ParticleFluid } else { MaterialKind::Rigid },
            physical: PhysicalParams::default(),
            containing_volume: None,
            particle_bounds: None,
            out_of_reach_intended: false,
        });
    }
    if let Some(c) = container {
        let home = placed.iter().find(|e| e.name == c).map(|e| e.position).unwrap_or([0.5, 0.0, h]);
        for o in liquids {
            let size = [0.06, 0.06, 0.06];
            placed.push(EntityPlacement {
                name: o.object_name.clone(),
                source: source_of(o),
                position: [home[0], home[1], h + 0.002 + size[2] / 2.0],
                euler: [0.0; 3],
                scale: Scale::Uniform(1.0),
                size,
                material_kind: MaterialKind::ParticleFluid,
                physical: PhysicalParams { density: 1000.0, friction: 0.0, fixed: false },
                containing_volume: Some(c.clone()),
                particle_bounds: None,
                out_of_reach_intended: false,
            });
        }
    }
    let groups: Vec<SupportRelation> = Vec::new();
    SceneConfig { workspace: ws.clone(), entities: placed, groups }
}

fn source_of(o: &ObjectSpec) -> EntitySource {
    match (&o.asset_id, &o.use_primitive) {
        (Some(a), _) => EntitySource::Asset { asset_id: a.clone() },
        (None, Some(p)) => EntitySource::Primitive { primitive: p.clone() },
        (None, None) => EntitySource::Primitive { primitive: "cube".into() },
    }
}

// ---------------------------------------------------------------------------
// Metric generator

pub const RETRIEVE_CUBE_METRIC: &str = r#"metric {
  success: overlap_frac("cube", "target_area") > 0.5 and on_table("cube") and still("cube", 0.01);
  milestone near_target weight 1: dist("cube", "target_area") < 0.1;
  milestone over_target weight 1: overlap_frac("cube", "target_area") > 0.0;
}
"#;

pub const ALIGN_BLOCKS_METRIC: &str = r#"metric {
  success: abs(x_of(pos("block 1")) - x_of(pos("block 2"))) < 0.01 and on_table("block 1") and on_table("block 2") and still("block 1", 0.01) and still("block 2", 0.01);
  milestone roughly_aligned weight 1: abs(x_of(pos("block 1")) - x_of(pos("block 2"))) < 0.05;
  milestone upright weight 1: on_table("block 1") and on_table("block 2");
}
"#;

pub const HOLD_CUP_METRIC: &str = r#"metric {
  success: overlap_frac("cup", "platform block") > 0.5 and min_z("cup") >= max_z("platform block") - 0.005 and contained_frac("water", "cup", min_z("cup"), max_z("cup")) >= 0.9 and still("cup", 0.01);
  milestone lifted weight 1: min_z("cup") > 0.78;
  milestone kept_water weight 2: contained_frac("water", "cup", min_z("cup"), max_z("cup")) >= 0.9;
}
"#;

fn escape(name: &str) -> String {
    name.replace('\\', "\\\\").replace('"', "\\\"")
}

/// The canonical program for a task, chosen by its criteria objects.
pub fn canonical_metric(t: &TaskSpec) -> String {
    let crit = t.criteria_objects();
    let has = |names: &[&str]| names.iter().all(|n| crit.iter().any(|c| c == n));
    if has(&["cube", "target_area"]) {
        return RETRIEVE_CUBE_METRIC.into();
    }
    if has(&["block 1", "block 2"]) {
        return ALIGN_BLOCKS_METRIC.into();
    }
    if has(&["cup", "water", "platform block"]) {
        return HOLD_CUP_METRIC.into();
    }
    let rigid: Vec<&String> = crit.iter().filter(|c| t.object(c).is_some_and(|o| !is_liquid(o))).collect();
    if rigid.is_empty() {
        return "metric {\n  success: false;\n}\n".into();
    }
    let conj = |f: &dyn Fn(&str) -> String| rigid.iter().map(|c| f(&escape(c))).collect::<Vec<_>>().join(" and ");
    format!(
        "metric {{\n  success: {};\n  milestone on_table weight 1: {};\n}}\n",
        conj(&|c| format!("on_table(\"{c}\") and still(\"{c}\", 0.01)")),
        conj(&|c| format!("on_table(\"{c}\")")),
    )
}
