//! Per-object simulator state, in the `objs_info` layout metric programs read.
//!
//! ```json
//! { "cube": { "material": "rigid", "pos": [x, y, z], "euler": [r, p, y] | null,
//!             "vel": [vx, vy, vz], "bounds": [[x0, y0, z0], [x1, y1, z1]] | null,
//!             "convex_hull_2d": [[x, y], ...] | null },
//!   "water": { "material": "particle", "pos": [[x, y, z], ...], "vel": [[...], ...] } }
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("snapshot {path}: {message}")]
pub struct SnapshotError {
    pub path: String,
    pub message: String,
}

fn err(path: impl Into<String>, message: impl Into<String>) -> SnapshotError {
    SnapshotError { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidState {
    pub pos: [f64; 3],
    /// Degrees.
    pub euler: Option<[f64; 3]>,
    pub vel: [f64; 3],
    /// `[min, max]` corners of the world AABB.
    pub bounds: Option<[[f64; 3]; 2]>,
    pub convex_hull_2d: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub pos: Vec<[f64; 3]>,
    pub vel: Vec<[f64; 3]>,
}

impl ParticleState {
    pub fn centroid(&self) -> [f64; 3] {
        let n = self.pos.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.pos {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectState {
    Rigid(RigidState),
    Particle(ParticleState),
}

impl ObjectState {
    pub fn is_rigid(&self) -> bool {
        matches!(self, ObjectState::Rigid(_))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjsSnapshot {
    pub objects: BTreeMap<String, ObjectState>,
}

impl ObjsSnapshot {
    pub fn get(&self, name: &str) -> Option<&ObjectState> {
        self.objects.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, state: ObjectState) {
        self.objects.insert(name.into(), state);
    }

    pub fn from_json_str(s: &str) -> Result<Self, SnapshotError> {
        let v: Value = serde_json::from_str(s).map_err(|e| err("", e.to_string()))?;
        Self::from_json(&v)
    }

    pub fn from_json(v: &Value) -> Result<Self, SnapshotError> {
        let map = v.as_object().ok_or_else(|| err("", "snapshot must be a JSON object"))?;
        let mut objects = BTreeMap::new();
        for (name, state) in map {
            objects.insert(name.clone(), parse_state(state, &format!("/{name}"))?);
        }
        Ok(Self { objects })
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (name, s) in &self.objects {
            let v = match s {
                ObjectState::Rigid(r) => serde_json::json!({
                    "material": "rigid",
                    "pos": r.pos,
                    "euler": r.euler,
                    "vel": r.vel,
                    "bounds": r.bounds,
                    "convex_hull_2d": r.convex_hull_2d,
                }),
                ObjectState::Particle(p) => serde_json::json!({
                    "material": "particle",
                    "pos": p.pos,
                    "vel": p.vel,
                }),
            };
            m.insert(name.clone(), v);
        }
        Value::Object(m)
    }
}

impl Serialize for ObjsSnapshot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ObjsSnapshot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_json(&v).map_err(serde::de::Error::custom)
    }
}

fn number(v: &Value, path: &str) -> Result<f64, SnapshotError> {
    v.as_f64().filter(|f| f.is_finite()).ok_or_else(|| err(path, "expected a finite number"))
}

fn vec_n<const N: usize>(v: &Value, path: &str) -> Result<[f64; N], SnapshotError> {
    let items = v.as_array().ok_or_else(|| err(path, format!("expected an array of {N} numbers")))?;
    if items.len() != N {
        return Err(err(path, format!("expected shape ({N},), got ({},)", items.len())));
    }
    let mut out = [0.0; N];
    for (i, x) in items.iter().enumerate() {
        out[i] = number(x, &format!("{path}/{i}"))?;
    }
    Ok(out)
}

fn rows<const N: usize>(v: &Value, path: &str) -> Result<Vec<[f64; N]>, SnapshotError> {
    let items = v.as_array().ok_or_else(|| err(path, format!("expected shape (N, {N})")))?;
    items.iter().enumerate().map(|(i, r)| vec_n::<N>(r, &format!("{path}/{i}"))).collect()
}

fn present(v: Option<&Value>) -> Option<&Value> {
    v.filter(|x| !x.is_null())
}

fn parse_state(v: &Value, path: &str) -> Result<ObjectState, SnapshotError> {
    let obj = v.as_object().ok_or_else(|| err(path, "object state must be a JSON object"))?;
    let material = obj
        .get("material")
        .and_then(Value::as_str)
        .ok_or_else(|| err(format!("{path}/material"), "missing material"))?;
    let pos = obj.get("pos").ok_or_else(|| err(format!("{path}/pos"), "missing pos"))?;
    let vel = obj.get("vel").ok_or_else(|| err(format!("{path}/vel"), "missing vel"))?;
    match material {
        "rigid" => {
            let bounds = match present(obj.get("bounds")) {
                Some(b) => {
                    let r = rows::<3>(b, &format!("{path}/bounds"))?;
                    if r.len() != 2 {
                        return Err(err(format!("{path}/bounds"), "expected shape (2, 3)"));
                    }
                    if (0..3).any(|k| r[0][k] > r[1][k]) {
                        return Err(err(format!("{path}/bounds"), "min exceeds max"));
                    }
                    Some([r[0], r[1]])
                }
                None => None,
            };
            let hull = present(obj.get("convex_hull_2d"))
                .map(|h| rows::<2>(h, &format!("{path}/convex_hull_2d")))
                .transpose()?;
            if let (Some(b), Some(h)) = (&bounds, &hull) {
                let tol = 1e-6;
                let outside = h.iter().any(|p| {
                    p[0] < b[0][0] - tol || p[0] > b[1][0] + tol || p[1] < b[0][1] - tol || p[1] > b[1][1] + tol
                });
                if outside {
                    return Err(err(format!("{path}/convex_hull_2d"), "hull extends outside bounds"));
                }
            }
            Ok(ObjectState::Rigid(RigidState {
                pos: vec_n::<3>(pos, &format!("{path}/pos"))?,
                euler: present(obj.get("euler")).map(|e| vec_n::<3>(e, &format!("{path}/euler"))).transpose()?,
                vel: vec_n::<3>(vel, &format!("{path}/vel"))?,
                bounds,
                convex_hull_2d: hull,
            }))
        }
        "particle" => {
            for key in ["euler", "bounds"] {
                if present(obj.get(key)).is_some() {
                    return Err(err(format!("{path}/{key}"), "particle objects carry no euler or bounds"));
                }
            }
            let pos = rows::<3>(pos, &format!("{path}/pos"))?;
            let vel = rows::<3>(vel, &format!("{path}/vel"))?;
            if pos.len() != vel.len() {
                return Err(err(path, format!("pos has {} particles but vel has {}", pos.len(), vel.len())));
            }
            if pos.is_empty() {
                return Err(err(format!("{path}/pos"), "particle object has no particles"));
            }
            Ok(ObjectState::Particle(ParticleState { pos, vel }))
        }
        other => Err(err(format!("{path}/material"), format!("unknown material {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_both_materials() {
        let s = ObjsSnapshot::from_json(&json!({
            "cube": {"material": "rigid", "pos": [0.5, 0.0, 0.79], "euler": null, "vel": [0, 0, 0],
                     "bounds": [[0.47, -0.03, 0.76], [0.53, 0.03, 0.82]], "convex_hull_2d": null},
            "water": {"material": "particle", "pos": [[0.5, 0.1, 0.8], [0.5, 0.1, 0.9]], "vel": [[0,0,0],[0,0,1]]}
        }))
        .unwrap();
        assert!(s.get("cube").unwrap().is_rigid());
        match s.get("water").unwrap() {
            ObjectState::Particle(p) => assert_eq!(p.centroid(), [0.5, 0.1, 0.8500000000000001]),
            _ => panic!(),
        }
        assert_eq!(ObjsSnapshot::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn shape_errors() {
        let bad = [
            json!({"c": {"material": "rigid", "pos": [0, 0], "vel": [0, 0, 0]}}),
            json!({"c": {"material": "rigid", "pos": [0, 0, 0], "vel": [0, 0, 0], "bounds": [[1, 0, 0], [0, 1, 1]]}}),
            json!({"w": {"material": "particle", "pos": [[0, 0, 0]], "vel": [[0, 0, 0]], "euler": [0, 0, 0]}}),
            json!({"w": {"material": "particle", "pos": [[0, 0, 0]], "vel": []}}),
            json!({"w": {"material": "gas", "pos": [0, 0, 0], "vel": [0, 0, 0]}}),
            json!({"c": {"material": "rigid", "pos": [0, 0, 0], "vel": [0, 0, 0],
                         "bounds": [[0, 0, 0], [1, 1, 1]], "convex_hull_2d": [[0, 0], [2, 0], [0, 1]]}}),
        ];
        for b in bad {
            assert!(ObjsSnapshot::from_json(&b).is_err(), "{b}");
        }
    }
}
