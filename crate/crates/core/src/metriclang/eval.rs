use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use super::ast::{BinaryOp, Expr, MetricProgram, UnaryOp};
use super::snapshot::{ObjectState, ObjsSnapshot};
use crate::geometry::{self, hull_2d, GeometryError, Point2, Polygon2D, Prism};
use crate::scene::{WorkspaceSpec, SUPPORT_TOLERANCE};
use crate::schema::TaskFamily;

/// Objects whose top sinks this far below the table count as fallen.
pub const FELL_OFF_MARGIN: f64 = 0.05;
pub const FELL_OFF: &str = "FELL_OFF";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("object {0:?} is not in the snapshot")]
    MissingObject(String),
    #[error("object {object:?} has no {field}")]
    MissingField { object: String, field: &'static str },
    #[error("numeric error: {0}")]
    NumericError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Num(f64),
    Str(String),
    Vec3([f64; 3]),
    Poly(Polygon2D),
}

impl Value {
    fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Bool(b) => json!(b),
            Value::Num(n) => json!(n),
            Value::Str(s) => json!(s),
            Value::Vec3(v) => json!(v),
            Value::Poly(p) => json!(p.vertices().iter().map(|q| [q.x, q.y]).collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub expr: String,
    pub value: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MilestoneFlag {
    pub name: String,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub success: bool,
    pub progress: f64,
    pub milestone_flags: Vec<MilestoneFlag>,
    pub trace: Vec<TraceEntry>,
    pub codes: Vec<String>,
}

struct Ctx<'a> {
    snap: &'a ObjsSnapshot,
    ws: &'a WorkspaceSpec,
    trace: Vec<TraceEntry>,
}

fn numeric(e: GeometryError) -> EvalError {
    EvalError::NumericError(e.to_string())
}

fn finite(x: f64, what: &str) -> Result<f64, EvalError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EvalError::NumericError(format!("{what} is not finite")))
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl<'a> Ctx<'a> {
    fn object(&self, name: &str) -> Result<&'a ObjectState, EvalError> {
        self.snap.get(name).ok_or_else(|| EvalError::MissingObject(name.to_string()))
    }

    fn pos(&self, name: &str) -> Result<[f64; 3], EvalError> {
        Ok(match self.object(name)? {
            ObjectState::Rigid(r) => r.pos,
            ObjectState::Particle(p) => p.centroid(),
        })
    }

    fn vel_norm(&self, name: &str) -> Result<f64, EvalError> {
        Ok(match self.object(name)? {
            ObjectState::Rigid(r) => norm(r.vel),
            ObjectState::Particle(p) => p.vel.iter().map(|v| norm(*v)).fold(0.0, f64::max),
        })
    }

    fn hull(&self, name: &str) -> Result<Polygon2D, EvalError> {
        match self.object(name)? {
            ObjectState::Rigid(r) => {
                if let Some(h) = &r.convex_hull_2d {
                    let pts: Vec<Point2> = h.iter().map(|p| Point2::from(*p)).collect();
                    hull_2d(&pts).map_err(numeric)
                } else if let Some([lo, hi]) = r.bounds {
                    Polygon2D::rectangle(lo[0], hi[0], lo[1], hi[1]).map_err(numeric)
                } else {
                    Err(EvalError::MissingField { object: name.to_string(), field: "convex_hull_2d or bounds" })
                }
            }
            ObjectState::Particle(p) => {
                let pts: Vec<Point2> = p.pos.iter().map(|q| Point2::new(q[0], q[1])).collect();
                hull_2d(&pts).map_err(numeric)
            }
        }
    }

    fn z_range(&self, name: &str) -> Result<(f64, f64), EvalError> {
        Ok(match self.object(name)? {
            ObjectState::Rigid(r) => match r.bounds {
                Some([lo, hi]) => (lo[2], hi[2]),
                None => (r.pos[2], r.pos[2]),
            },
            ObjectState::Particle(p) => p
                .pos
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(q[2]), hi.max(q[2]))),
        })
    }

    fn on_table(&self, name: &str) -> Result<bool, EvalError> {
        let fp = self.hull(name)?;
        let inside = fp.vertices().iter().all(|v| self.ws.table_surface.contains_point(*v));
        let (bottom, _) = self.z_range(name)?;
        Ok(inside && (bottom - self.ws.table_height).abs() <= SUPPORT_TOLERANCE)
    }

    fn contained_frac(&self, name: &str, region: &str, z_lo: f64, z_hi: f64) -> Result<f64, EvalError> {
        let prism = Prism::new(self.hull(region)?, z_lo, z_hi).map_err(numeric)?;
        match self.object(name)? {
            ObjectState::Particle(p) => geometry::containment_fraction(&p.pos, &prism).map_err(numeric),
            ObjectState::Rigid(r) => Ok(if prism.contains(r.pos) { 1.0 } else { 0.0 }),
        }
    }

    fn euler(&self, name: &str) -> Result<[f64; 3], EvalError> {
        match self.object(name)? {
            ObjectState::Rigid(r) => {
                r.euler.ok_or_else(|| EvalError::MissingField { object: name.to_string(), field: "euler" })
            }
            ObjectState::Particle(_) => Err(EvalError::MissingField { object: name.to_string(), field: "euler" }),
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, EvalError> {
        match e {
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Num(n) => Ok(Value::Num(*n)),
            Expr::Str(s) => Ok(Value::Str(s.clone())),
            Expr::Unary { op, expr } => match (op, self.eval(expr)?) {
                (UnaryOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                (UnaryOp::Neg, Value::Num(n)) => Ok(Value::Num(-n)),
                (_, v) => Err(ill_typed(e, &v)),
            },
            Expr::Binary { op: BinaryOp::And, lhs, rhs } => {
                if self.eval_bool(lhs)? {
                    Ok(Value::Bool(self.eval_bool(rhs)?))
                } else {
                    Ok(Value::Bool(false))
                }
            }
            Expr::Binary { op: BinaryOp::Or, lhs, rhs } => {
                if self.eval_bool(lhs)? {
                    Ok(Value::Bool(true))
                } else {
                    Ok(Value::Bool(self.eval_bool(rhs)?))
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                binary(*op, l, r, e)
            }
            Expr::Call { name, args } => {
                let vals = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
                let v = self.call(name, &vals, e)?;
                self.trace.push(TraceEntry { expr: e.to_string(), value: v.to_json() });
                Ok(v)
            }
        }
    }

    fn eval_bool(&mut self, e: &Expr) -> Result<bool, EvalError> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            v => Err(ill_typed(e, &v)),
        }
    }

    fn call(&self, name: &str, a: &[Value], e: &Expr) -> Result<Value, EvalError> {
        use Value::*;
        Ok(match (name, a) {
            ("pos", [Str(o)]) => Vec3(self.pos(o)?),
            ("vel_norm", [Str(o)]) => Num(self.vel_norm(o)?),
            ("hull", [Str(o)]) => Poly(self.hull(o)?),
            ("overlap_frac", [Str(x), Str(y)]) => {
                Num(geometry::overlap_fraction(&self.hull(x)?, &self.hull(y)?).map_err(numeric)?)
            }
            ("on_table", [Str(o)]) => Bool(self.on_table(o)?),
            ("min_z", [Str(o)]) => Num(self.z_range(o)?.0),
            ("max_z", [Str(o)]) => Num(self.z_range(o)?.1),
            ("dist", [Str(x), Str(y)]) => {
                let (p, q) = (self.pos(x)?, self.pos(y)?);
                Num(norm([p[0] - q[0], p[1] - q[1], p[2] - q[2]]))
            }
            ("contained_frac", [Str(o), Str(r), Num(lo), Num(hi)]) => Num(self.contained_frac(o, r, *lo, *hi)?),
            ("still", [Str(o), Num(eps)]) => Bool(self.vel_norm(o)? < *eps),
            ("euler", [Str(o)]) => Vec3(self.euler(o)?),
            ("x_of", [Vec3(v)]) => Num(v[0]),
            ("y_of", [Vec3(v)]) => Num(v[1]),
            ("z_of", [Vec3(v)]) => Num(v[2]),
            ("norm", [Vec3(v)]) => Num(norm(*v)),
            ("abs", [Num(x)]) => Num(x.abs()),
            ("area", [Poly(p)]) => Num(geometry::area(p)),
            _ => return Err(EvalError::NumericError(format!("ill-typed call {e}"))),
        })
    }
}

fn ill_typed(e: &Expr, v: &Value) -> EvalError {
    EvalError::NumericError(format!("ill-typed operand {v:?} in {e}"))
}

fn binary(op: BinaryOp, l: Value, r: Value, e: &Expr) -> Result<Value, EvalError> {
    use BinaryOp::*;
    Ok(match (op, l, r) {
        (Lt, Value::Num(a), Value::Num(b)) => Value::Bool(a < b),
        (Le, Value::Num(a), Value::Num(b)) => Value::Bool(a <= b),
        (Gt, Value::Num(a), Value::Num(b)) => Value::Bool(a > b),
        (Ge, Value::Num(a), Value::Num(b)) => Value::Bool(a >= b),
        (Eq, a, b) => Value::Bool(a == b),
        (Ne, a, b) => Value::Bool(a != b),
        (Add, Value::Num(a), Value::Num(b)) => Value::Num(finite(a + b, "sum")?),
        (Sub, Value::Num(a), Value::Num(b)) => Value::Num(finite(a - b, "difference")?),
        (Mul, Value::Num(a), Value::Num(b)) => Value::Num(finite(a * b, "product")?),
        (Div, Value::Num(a), Value::Num(b)) => {
            if b == 0.0 {
                return Err(EvalError::NumericError(format!("division by zero in {e}")));
            }
            Value::Num(finite(a / b, "quotient")?)
        }
        (_, l, _) => return Err(ill_typed(e, &l)),
    })
}

/// Evaluates a program on one snapshot. Pure: no I/O, no hidden state.
///
/// Progress is 1 on success; otherwise the weight of true milestones over the
/// total weight (0 when there are no milestones).
pub fn evaluate(p: &MetricProgram, snap: &ObjsSnapshot, ws: &WorkspaceSpec) -> Result<MetricResult, EvalError> {
    let referenced = p.referenced_objects();
    if let Some(missing) = referenced.iter().find(|o| snap.get(o).is_none()) {
        return Err(EvalError::MissingObject(missing.clone()));
    }
    let mut ctx = Ctx { snap, ws, trace: Vec::new() };
    let mut codes = Vec::new();

    let mut success = ctx.eval_bool(&p.success)?;
    ctx.trace.push(TraceEntry { expr: "success".into(), value: json!(success) });

    let floor = ws.table_height - FELL_OFF_MARGIN;
    let mut fallen = Vec::new();
    for o in &referenced {
        if ctx.object(o)?.is_rigid() && ctx.z_range(o)?.1 < floor {
            fallen.push(o.clone());
        }
    }
    if !fallen.is_empty() {
        success = false;
        codes.push(FELL_OFF.to_string());
        ctx.trace.push(TraceEntry { expr: FELL_OFF.into(), value: json!(fallen) });
    }

    let mut flags = Vec::with_capacity(p.milestones.len());
    for m in &p.milestones {
        let value = ctx.eval_bool(&m.expr)?;
        ctx.trace.push(TraceEntry { expr: format!("milestone {}", m.name), value: json!(value) });
        flags.push(MilestoneFlag { name: m.name.clone(), value });
    }

    let progress = if success {
        1.0
    } else if p.milestones.is_empty() {
        0.0
    } else {
        let done: f64 = p.milestones.iter().zip(&flags).filter(|(_, f)| f.value).map(|(m, _)| m.weight).sum();
        (done / p.total_weight()).clamp(0.0, 1.0)
    };
    Ok(MetricResult { success, progress, milestone_flags: flags, trace: ctx.trace, codes })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("task {task:?} has no object {object:?}")]
    UnresolvedObject { task: String, object: String },
}

/// A metric attached to one task family, shared by all of its members.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMetric {
    pub metric_id: String,
    pub program: MetricProgram,
    pub objects: Vec<String>,
    /// Seed first, then members.
    pub tasks: Vec<String>,
}

impl BoundMetric {
    pub fn evaluate(&self, snap: &ObjsSnapshot, ws: &WorkspaceSpec) -> Result<MetricResult, EvalError> {
        evaluate(&self.program, snap, ws)
    }
}

/// Checks every object the program reads against the seed's success criteria
/// and against every family member's object list.
pub fn bind(p: &MetricProgram, family: &TaskFamily) -> Result<BoundMetric, BindError> {
    let objects: Vec<String> = p.referenced_objects().into_iter().collect();
    let criteria = family.seed.criteria_objects();
    for o in &objects {
        if !criteria.is_empty() && !criteria.contains(o) {
            return Err(BindError::UnresolvedObject { task: family.seed.task_name.clone(), object: o.clone() });
        }
        for t in family.tasks() {
            if t.object(o).is_none() {
                return Err(BindError::UnresolvedObject { task: t.task_name.clone(), object: o.clone() });
            }
        }
    }
    Ok(BoundMetric {
        metric_id: family.metric_id.clone(),
        program: p.clone(),
        objects,
        tasks: family.tasks().map(|t| t.task_name.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metriclang::parse_metric;
    use crate::metriclang::snapshot::{ParticleState, RigidState};
    use crate::schema::ObjectSpec;

    fn rigid(pos: [f64; 3], half: f64, vel: [f64; 3]) -> ObjectState {
        ObjectState::Rigid(RigidState {
            pos,
            euler: Some([0.0; 3]),
            vel,
            bounds: Some([[pos[0] - half, pos[1] - half, pos[2] - half], [pos[0] + half, pos[1] + half, pos[2] + half]]),
            convex_hull_2d: None,
        })
    }

    fn snapshot() -> ObjsSnapshot {
        let mut s = ObjsSnapshot::default();
        s.insert("cube", rigid([0.5, 0.0, 0.785], 0.025, [0.0; 3]));
        s.insert("target_area", rigid([0.5, 0.0, 0.761], 0.05, [0.0; 3]));
        s
    }

    #[test]
    fn weighted_milestones() {
        let p = parse_metric(
            "metric { success: false; milestone a weight 1: true; milestone b weight 1: true; milestone c weight 2: false; }",
        )
        .unwrap();
        let r = evaluate(&p, &snapshot(), &WorkspaceSpec::default()).unwrap();
        assert!(!r.success);
        assert_eq!(r.progress, 0.5);
        assert_eq!(r.milestone_flags.iter().map(|f| f.value).collect::<Vec<_>>(), [true, true, false]);
    }

    #[test]
    fn no_milestones() {
        let ws = WorkspaceSpec::default();
        let t = evaluate(&parse_metric("metric { success: true; }").unwrap(), &snapshot(), &ws).unwrap();
        assert_eq!((t.success, t.progress), (true, 1.0));
        let f = evaluate(&parse_metric("metric { success: false; }").unwrap(), &snapshot(), &ws).unwrap();
        assert_eq!((f.success, f.progress), (false, 0.0));
    }

    #[test]
    fn builtins() {
        let ws = WorkspaceSpec::default();
        let mut s = snapshot();
        s.insert(
            "water",
            ObjectState::Particle(ParticleState {
                pos: vec![[0.5, 0.0, 0.77], [0.5, 0.0, 0.78], [0.9, 0.0, 0.77], [0.5, 0.01, 0.99]],
                vel: vec![[0.0; 3], [0.0, 0.3, 0.4], [0.0; 3], [0.0; 3]],
            }),
        );
        let check = |src: &str| {
            let p = parse_metric(&format!("metric {{ success: {src}; }}")).unwrap();
            evaluate(&p, &s, &ws).unwrap().success
        };
        assert!(check(r#"overlap_frac("cube", "target_area") > 0.999999999"#));
        assert!(check(r#"abs(overlap_frac("target_area", "cube") - 0.25) < 0.000000001"#));
        assert!(check(r#"on_table("cube") and not on_table("water")"#));
        assert!(check(r#"abs(vel_norm("water") - 0.5) < 0.000000001"#));
        assert!(check(r#"contained_frac("water", "target_area", 0.76, 0.9) == 0.5"#));
        assert!(check(r#"dist("cube", "target_area") > 0.02 and dist("cube", "target_area") < 0.03"#));
        assert!(check(r#"abs(x_of(pos("water")) - 0.6) < 0.000001"#));
        assert!(check(r#"abs(area(hull("cube")) - 0.0025) < 0.000000001"#));
        assert!(check(r#"still("cube", 0.001) and not still("water", 0.01)"#));
        let p = parse_metric("metric { success: 1 / (dist(\"cube\", \"cube\")) > 0; }").unwrap();
        assert!(matches!(evaluate(&p, &s, &ws), Err(EvalError::NumericError(_))));
        let p = parse_metric("metric { success: on_table(\"ghost\"); }").unwrap();
        assert_eq!(evaluate(&p, &s, &ws), Err(EvalError::MissingObject("ghost".into())));
    }

    #[test]
    fn fell_off_forces_failure() {
        let ws = WorkspaceSpec::default();
        let p = parse_metric("metric { success: still(\"cube\", 1); milestone m weight 1: true; }").unwrap();
        let mut s = snapshot();
        s.insert("cube", rigid([0.5, 0.0, 0.2], 0.025, [0.0; 3]));
        let r = evaluate(&p, &s, &ws).unwrap();
        assert!(!r.success);
        assert_eq!(r.codes, [FELL_OFF]);
        assert_eq!(r.progress, 1.0);
    }

    fn task(name: &str, objects: &[&str]) -> crate::schema::TaskSpec {
        crate::schema::TaskSpec {
            task_name: name.into(),
            object_list: objects.iter().map(|o| ObjectSpec::new(*o)).collect(),
            task_success_criteria: Some("'cube' rests on 'target_area'".into()),
            ..Default::default()
        }
    }

    #[test]
    fn binding() {
        let p = parse_metric(r#"metric { success: overlap_frac("cube", "target_area") > 0.5; }"#).unwrap();
        let fam = TaskFamily {
            seed: task("seed", &["cube", "target_area"]),
            members: (0..3).map(|i| task(&format!("m{i}"), &["cube", "target_area", "box"])).collect(),
            metric_id: "seed/metric".into(),
        };
        let b = bind(&p, &fam).unwrap();
        assert_eq!(b.tasks.len(), 4);
        assert_eq!(bind(&p, &fam).unwrap(), b);
        let mut broken = fam.clone();
        broken.members[1] = task("m1", &["cube"]);
        assert_eq!(
            bind(&p, &broken),
            Err(BindError::UnresolvedObject { task: "m1".into(), object: "target_area".into() })
        );
    }
}
