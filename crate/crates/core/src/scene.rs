//! Concrete scene configurations and their static validation.
//!
//! Coordinates follow the simulator convention: +x forward, +y right, +z up,
//! meters. Euler angles are degrees, applied as roll about x, then pitch
//! about y, then yaw about z (`R = Rz · Ry · Rx`). An entity's `position` is
//! the center of its box.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, hull_2d, point_in_polygon, Point2, Polygon2D};
use crate::metriclang::snapshot::{ObjectState, ObjsSnapshot};

/// Interpenetration allowed between boxes before they count as overlapping.
pub const OVERLAP_TOLERANCE: f64 = 0.001;
/// Allowed gap between an entity's bottom and its support surface.
pub const SUPPORT_TOLERANCE: f64 = 0.002;
pub const SETTLE_MAX_SHIFT: f64 = 0.005;
pub const SETTLE_MAX_ROTATION_DEG: f64 = 2.0;
pub const SETTLE_MAX_SPEED: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region2D {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn contains_region(&self, other: &Region2D) -> bool {
        other.x_min >= self.x_min && other.x_max <= self.x_max && other.y_min >= self.y_min && other.y_max <= self.y_max
    }

    pub fn contains_point(&self, p: Point2) -> bool {
        let e = geometry::CMP_EPS;
        p.x >= self.x_min - e && p.x <= self.x_max + e && p.y >= self.y_min - e && p.y <= self.y_max + e
    }

    pub fn polygon(&self) -> Polygon2D {
        Polygon2D::rectangle(self.x_min, self.x_max, self.y_min, self.y_max).expect("valid region has area")
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSpec {
    pub table_surface: Region2D,
    pub table_height: f64,
    pub reachable: Region2D,
    pub forbidden: Vec<Region2D>,
}

impl Default for WorkspaceSpec {
    /// The dual-arm tabletop: a 0.79 m × 1.38 m table top at z = 0.76, the
    /// arms' reach, and the two areas the parked arms occupy.
    fn default() -> Self {
        Self {
            table_surface: Region2D::new(0.21, 1.00, -0.69, 0.69),
            table_height: 0.76,
            reachable: Region2D::new(0.30, 0.72, -0.45, 0.45),
            forbidden: vec![Region2D::new(0.30, 0.61, 0.20, 0.40), Region2D::new(0.30, 0.61, -0.40, -0.20)],
        }
    }
}

impl WorkspaceSpec {
    pub fn check(&self) -> Result<(), String> {
        let named = std::iter::once(("table_surface", &self.table_surface))
            .chain(std::iter::once(("reachable", &self.reachable)))
            .chain(self.forbidden.iter().map(|f| ("forbidden", f)));
        for (name, r) in named {
            if !r.is_valid() {
                return Err(format!("{name} region {r:?} is empty"));
            }
        }
        if !self.table_surface.contains_region(&self.reachable) {
            return Err("reachable region is not inside the table surface".into());
        }
        if let Some(f) = self.forbidden.iter().find(|f| !self.table_surface.contains_region(f)) {
            return Err(format!("forbidden region {f:?} is not inside the table surface"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntitySource {
    Primitive { primitive: String },
    Asset { asset_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scale {
    Uniform(f64),
    PerAxis([f64; 3]),
}

impl Default for Scale {
    fn default() -> Self {
        Scale::Uniform(1.0)
    }
}

impl Scale {
    pub fn factors(&self) -> [f64; 3] {
        match *self {
            Scale::Uniform(s) => [s; 3],
            Scale::PerAxis(v) => v,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.factors().iter().all(|f| f.is_finite() && *f > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    Rigid,
    ParticleFluid,
    ParticleGranular,
    ParticleSoft,
}

impl MaterialKind {
    pub fn is_particle(self) -> bool {
        self != MaterialKind::Rigid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// kg/m³.
    pub density: f64,
    pub friction: f64,
    #[serde(default)]
    pub fixed: bool,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { density: 1000.0, friction: 0.5, fixed: false }
    }
}

/// Axis-aligned box, `min` and `max` corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Smallest per-axis overlap depth, or `None` when the boxes are apart.
    pub fn penetration(&self, other: &Aabb) -> Option<f64> {
        let mut depth = f64::INFINITY;
        for k in 0..3 {
            let d = self.max[k].min(other.max[k]) - self.min[k].max(other.min[k]);
            if d <= 0.0 {
                return None;
            }
            depth = depth.min(d);
        }
        Some(depth)
    }

    pub fn contains(&self, inner: &Aabb, tol: f64) -> bool {
        (0..3).all(|k| inner.min[k] >= self.min[k] - tol && inner.max[k] <= self.max[k] + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPlacement {
    pub name: String,
    pub source: EntitySource,
    /// Box center, meters.
    pub position: [f64; 3],
    /// Degrees.
    #[serde(default)]
    pub euler: [f64; 3],
    #[serde(default)]
    pub scale: Scale,
    /// Unscaled box extents of the model, meters.
    pub size: [f64; 3],
    pub material_kind: MaterialKind,
    #[serde(default)]
    pub physical: PhysicalParams,
    /// Entity whose box must hold this entity's particles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub containing_volume: Option<String>,
    /// Explicit particle extent, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particle_bounds: Option<Aabb>,
    /// The task deliberately puts this entity beyond the arms' reach.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub out_of_reach_intended: bool,
}

fn rotation(euler_deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [r, p, y] = euler_deg.map(f64::to_radians);
    let (sr, cr) = r.sin_cos();
    let (sp, cp) = p.sin_cos();
    let (sy, cy) = y.sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

impl EntityPlacement {
    pub fn scaled_size(&self) -> [f64; 3] {
        let f = self.scale.factors();
        [self.size[0] * f[0], self.size[1] * f[1], self.size[2] * f[2]]
    }

    /// World-space corners of the scaled, rotated box.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let half = self.scaled_size().map(|s| s / 2.0);
        let rot = rotation(self.euler);
        let mut out = [[0.0; 3]; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let local = [
                if i & 1 == 0 { -half[0] } else { half[0] },
                if i & 2 == 0 { -half[1] } else { half[1] },
                if i & 4 == 0 { -half[2] } else { half[2] },
            ];
            for (r, row) in rot.iter().enumerate() {
                c[r] = self.position[r] + row[0] * local[0] + row[1] * local[1] + row[2] * local[2];
            }
        }
        out
    }

    pub fn aabb(&self) -> Aabb {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for c in self.corners() {
            for k in 0..3 {
                min[k] = min[k].min(c[k]);
                max[k] = max[k].max(c[k]);
            }
        }
        Aabb { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FootprintError {
    #[error("entity {0:?} has a non-positive scale")]
    NonPositiveScale(String),
    #[error("entity {name:?} has a degenerate footprint: {source}")]
    Degenerate { name: String, source: geometry::GeometryError },
}

/// Table-plane footprint: hull of the xy projection of the box's 8 corners.
pub fn footprint(e: &EntityPlacement) -> Result<Polygon2D, FootprintError> {
    if !e.scale.is_positive() || e.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(FootprintError::NonPositiveScale(e.name.clone()));
    }
    let pts: Vec<Point2> = e.corners().iter().map(|c| Point2::new(c[0], c[1])).collect();
    hull_2d(&pts).map_err(|source| FootprintError::Degenerate { name: e.name.clone(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRelation {
    pub supporter: String,
    pub supported: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default)]
    pub workspace: WorkspaceSpec,
    pub entities: Vec<EntityPlacement>,
    #[serde(default)]
    pub groups: Vec<SupportRelation>,
}

impl SceneConfig {
    pub fn entity(&self, name: &str) -> Option<&EntityPlacement> {
        self.entities.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SceneViolationCode {
    OutOfReachable,
    InForbidden,
    AabbOverlap,
    Unsupported,
    ParticlesUncontained,
    DuplicateEntity,
    InvalidGeometry,
    InvalidWorkspace,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneViolation {
    pub code: SceneViolationCode,
    /// Entity names involved, sorted.
    pub entities: Vec<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneValidation {
    pub violations: Vec<SceneViolation>,
}

impl SceneValidation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: SceneViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn feedback(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("{}: {}", serde_json::to_value(v.code).expect("enum").as_str().unwrap_or(""), v.message))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Static checks over a scene. The result is sorted, so it does not depend on
/// the order of `entities`.
pub fn validate_scene(s: &SceneConfig) -> SceneValidation {
    let mut out: Vec<SceneViolation> = Vec::new();
    let mut push = |code, mut entities: Vec<String>, message: String| {
        entities.sort();
        out.push(SceneViolation { code, entities, message });
    };
    let ws = &s.workspace;
    if let Err(m) = ws.check() {
        push(SceneViolationCode::InvalidWorkspace, vec![], m);
        return finish(out);
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &s.entities {
        *counts.entry(e.name.as_str()).or_default() += 1;
    }
    for (name, n) in counts.iter().filter(|(_, n)| **n > 1) {
        push(SceneViolationCode::DuplicateEntity, vec![name.to_string()], format!("{name:?} appears {n} times"));
    }

    let grouped: BTreeSet<(&str, &str)> = s
        .groups
        .iter()
        .flat_map(|g| [(g.supporter.as_str(), g.supported.as_str()), (g.supported.as_str(), g.supporter.as_str())])
        .collect();

    let mut shapes: Vec<(&EntityPlacement, Polygon2D, Aabb)> = Vec::new();
    for e in &s.entities {
        match footprint(e) {
            Ok(fp) => shapes.push((e, fp, e.aabb())),
            Err(err) => push(SceneViolationCode::InvalidGeometry, vec![e.name.clone()], err.to_string()),
        }
    }

    for (e, fp, bb) in &shapes {
        if !e.out_of_reach_intended && !fp.vertices().iter().all(|p| ws.reachable.contains_point(*p)) {
            push(
                SceneViolationCode::OutOfReachable,
                vec![e.name.clone()],
                format!("'{}' footprint leaves the reachable region", e.name),
            );
        }
        for (i, f) in ws.forbidden.iter().enumerate() {
            if geometry::convex_intersection(fp, &f.polygon()).ok().flatten().is_some() {
                push(
                    SceneViolationCode::InForbidden,
                    vec![e.name.clone()],
                    format!("'{}' footprint intersects forbidden region {i}", e.name),
                );
            }
        }

        if e.material_kind.is_particle() {
            let container = e.containing_volume.as_deref().and_then(|c| s.entity(c));
            match (container, e.particle_bounds) {
                (None, None) => push(
                    SceneViolationCode::ParticlesUncontained,
                    vec![e.name.clone()],
                    format!("'{}' has neither a containing volume nor particle bounds", e.name),
                ),
                (Some(c), pb) => {
                    let inner = pb.unwrap_or(*bb);
                    if !c.aabb().contains(&inner, OVERLAP_TOLERANCE) {
                        push(
                            SceneViolationCode::ParticlesUncontained,
                            vec![e.name.clone(), c.name.clone()],
                            format!("'{}' particles extend outside '{}'", e.name, c.name),
                        );
                    }
                }
                (None, Some(_)) if e.containing_volume.is_some() => push(
                    SceneViolationCode::ParticlesUncontained,
                    vec![e.name.clone()],
                    format!("'{}' names an unknown containing volume", e.name),
                ),
                (None, Some(_)) => {}
            }
        } else if !e.physical.fixed {
            let bottom = bb.min[2];
            let on_table = (bottom - ws.table_height).abs() <= SUPPORT_TOLERANCE;
            let on_supporter = s
                .groups
                .iter()
                .filter(|g| g.supported == e.name)
                .filter_map(|g| shapes.iter().find(|(o, _, _)| o.name == g.supporter))
                .any(|(_, _, sb)| (bottom - sb.max[2]).abs() <= SUPPORT_TOLERANCE);
            if !on_table && !on_supporter {
                push(
                    SceneViolationCode::Unsupported,
                    vec![e.name.clone()],
                    format!("'{}' bottom z = {bottom:.4} rests on neither the table nor a supporter", e.name),
                );
            }
        }
    }

    for i in 0..shapes.len() {
        for j in (i + 1)..shapes.len() {
            let (a, _, ab) = &shapes[i];
            let (b, _, bb) = &shapes[j];
            if grouped.contains(&(a.name.as_str(), b.name.as_str())) || contains_particles_of(a, b) {
                continue;
            }
            if let Some(depth) = ab.penetration(bb) {
                if depth > OVERLAP_TOLERANCE {
                    push(
                        SceneViolationCode::AabbOverlap,
                        vec![a.name.clone(), b.name.clone()],
                        format!("'{}' and '{}' interpenetrate by {:.4} m", a.name, b.name, depth),
                    );
                }
            }
        }
    }
    finish(out)
}

fn contains_particles_of(a: &EntityPlacement, b: &EntityPlacement) -> bool {
    a.containing_volume.as_deref() == Some(b.name.as_str()) || b.containing_volume.as_deref() == Some(a.name.as_str())
}

fn finish(mut v: Vec<SceneViolation>) -> SceneValidation {
    v.sort();
    v.dedup();
    SceneValidation { violations: v }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SettleError {
    #[error("entity {0:?} missing from snapshot")]
    MissingEntity(String),
    #[error("entity {0:?} changed material between snapshots")]
    MaterialMismatch(String),
}

fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn norm3(v: [f64; 3]) -> f64 {
    dist3(v, [0.0; 3])
}

/// Stability proxy over two externally simulated snapshots.
///
/// Rigid entities must move < 5 mm, turn < 2° per axis and end with speed
/// < 1e-3 m/s; particle entities must keep their centroid within 5 mm.
pub fn settle_check(s: &SceneConfig, before: &ObjsSnapshot, after: &ObjsSnapshot) -> Result<bool, SettleError> {
    let mut stable = true;
    for e in &s.entities {
        let b = before.get(&e.name).ok_or_else(|| SettleError::MissingEntity(e.name.clone()))?;
        let a = after.get(&e.name).ok_or_else(|| SettleError::MissingEntity(e.name.clone()))?;
        let ok = match (b, a) {
            (ObjectState::Rigid(rb), ObjectState::Rigid(ra)) => {
                let rotated = match (rb.euler, ra.euler) {
                    (Some(eb), Some(ea)) => (0..3).map(|k| angle_diff_deg(eb[k], ea[k])).fold(0.0, f64::max),
                    _ => 0.0,
                };
                dist3(rb.pos, ra.pos) < SETTLE_MAX_SHIFT
                    && rotated < SETTLE_MAX_ROTATION_DEG
                    && norm3(ra.vel) < SETTLE_MAX_SPEED
            }
            (ObjectState::Particle(pb), ObjectState::Particle(pa)) => {
                dist3(pb.centroid(), pa.centroid()) < SETTLE_MAX_SHIFT
            }
            _ => return Err(SettleError::MaterialMismatch(e.name.clone())),
        };
        stable &= ok;
    }
    Ok(stable)
}

/// `true` when `p` lies inside the reachable region and outside every
/// forbidden region. Used by scene placement heuristics.
pub fn is_free_point(ws: &WorkspaceSpec, p: Point2) -> bool {
    ws.reachable.contains_point(p) && !ws.forbidden.iter().any(|f| point_in_polygon(p, &f.polygon()))
}
