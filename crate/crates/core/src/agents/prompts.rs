//! System prompt templates, one per role, with `{{name}}` placeholders.

use super::{AgentError, AgentRole, PromptContext, Substitutions};
use crate::metriclang::ast::BUILTINS;
use crate::scene::Region2D;

pub const SEED_GENERATOR: &str = include_str!("templates/seed.txt");
pub const VERIFIER: &str = include_str!("templates/verifier.txt");
pub const MUTATOR: &str = include_str!("templates/mutator.txt");
pub const SCENE_GENERATOR: &str = include_str!("templates/scene.txt");
pub const METRIC_GENERATOR: &str = include_str!("templates/metric.txt");

pub fn template(role: AgentRole) -> &'static str {
    match role {
        AgentRole::SeedGenerator => SEED_GENERATOR,
        AgentRole::Verifier => VERIFIER,
        AgentRole::Mutator => MUTATOR,
        AgentRole::SceneGenerator => SCENE_GENERATOR,
        AgentRole::MetricGenerator => METRIC_GENERATOR,
    }
}

/// Shortest decimal form, after rounding away float noise.
fn short(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

fn fixed(v: f64) -> String {
    format!("{v:.2}")
}

fn region(r: &Region2D) -> String {
    format!(
        r#"{{"x_min": {}, "x_max": {}, "y_min": {}, "y_max": {}}}"#,
        fixed(r.x_min),
        fixed(r.x_max),
        fixed(r.y_min),
        fixed(r.y_max)
    )
}

fn bounds(r: &Region2D, z: f64, num: fn(f64) -> String) -> String {
    format!(
        r#"{{"x_min": {}, "x_max": {}, "y_min": {}, "y_max": {}, "z_min": {}, "z_max": {}}}"#,
        num(r.x_min),
        num(r.x_max),
        num(r.y_min),
        num(r.y_max),
        num(z),
        num(z)
    )
}

fn dims(r: &Region2D) -> String {
    format!("{}m x {}m", short(r.width()), short(r.depth()))
}

pub fn substitutions(ctx: &PromptContext) -> Substitutions {
    let ws = &ctx.workspace;
    let p = ctx.planning_table;
    let plan = Region2D::new(p.x_min, p.x_max, p.y_min, p.y_max);
    let mut s = Substitutions::new();
    s.insert("planning_table_dims", dims(&plan));
    s.insert("planning_table_bounds", bounds(&plan, p.z, short));
    s.insert("table_dims", dims(&ws.table_surface));
    s.insert("table_bounds", bounds(&ws.table_surface, ws.table_height, fixed));
    s.insert("table_height", fixed(ws.table_height));
    s.insert("reachable_region", region(&ws.reachable));
    s.insert("forbidden_regions", ws.forbidden.iter().map(region).collect::<Vec<_>>().join(", "));
    let builtins = BUILTINS
        .iter()
        .map(|b| {
            let params = b.params.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ");
            format!("- {}({}) -> {}: {}", b.name, params, b.result, b.doc)
        })
        .collect::<Vec<_>>()
        .join("\n");
    s.insert("builtins", builtins);
    s
}

/// Placeholder names in order of appearance.
pub fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find("{{") {
        let after = &rest[i + 2..];
        match after.find("}}") {
            Some(j) => {
                out.push(&after[..j]);
                rest = &after[j + 2..];
            }
            None => break,
        }
    }
    out
}

/// Fills every placeholder; unknown or unterminated ones are errors.
pub fn fill(text: &str, subs: &Substitutions) -> Result<String, AgentError> {
    let mut out = String::with_capacity(text.len() + 512);
    let mut rest = text;
    while let Some(i) = rest.find("{{") {
        out.push_str(&rest[..i]);
        let after = &rest[i + 2..];
        let j = after.find("}}").ok_or_else(|| AgentError::Template("unterminated placeholder".into()))?;
        let name = &after[..j];
        let value = subs.get(name).ok_or_else(|| AgentError::Template(format!("unknown placeholder {{{{{name}}}}}")))?;
        out.push_str(value);
        rest = &after[j + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render(role: AgentRole, subs: &Substitutions) -> Result<String, AgentError> {
    fill(template(role), subs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_values_render_exactly() {
        let s = substitutions(&PromptContext::default());
        assert_eq!(s["planning_table_dims"], "1.05m x 1.7m");
        assert_eq!(
            s["planning_table_bounds"],
            r#"{"x_min": 0, "x_max": 1.05, "y_min": -0.85, "y_max": 0.85, "z_min": 0.8, "z_max": 0.8}"#
        );
        assert_eq!(s["table_dims"], "0.79m x 1.38m");
        assert_eq!(
            s["table_bounds"],
            r#"{"x_min": 0.21, "x_max": 1.00, "y_min": -0.69, "y_max": 0.69, "z_min": 0.76, "z_max": 0.76}"#
        );
        assert_eq!(s["reachable_region"], r#"{"x_min": 0.30, "x_max": 0.72, "y_min": -0.45, "y_max": 0.45}"#);
        assert_eq!(
            s["forbidden_regions"],
            r#"{"x_min": 0.30, "x_max": 0.61, "y_min": 0.20, "y_max": 0.40}, {"x_min": 0.30, "x_max": 0.61, "y_min": -0.40, "y_max": -0.20}"#
        );
    }

    #[test]
    fn every_template_fills_completely() {
        let s = substitutions(&PromptContext::default());
        for role in AgentRole::ALL {
            let out = render(role, &s).unwrap();
            assert!(!out.contains("{{"), "{role}");
        }
    }

    #[test]
    fn unknown_placeholder() {
        assert!(matches!(fill("a {{nope}} b", &Substitutions::new()), Err(AgentError::Template(_))));
        assert!(matches!(fill("a {{open", &Substitutions::new()), Err(AgentError::Template(_))));
        assert_eq!(placeholders("x {{a}} y {{b}}"), ["a", "b"]);
    }
}
