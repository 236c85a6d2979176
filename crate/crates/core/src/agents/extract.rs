use serde_json::Value;

/// Bodies of fenced blocks whose info string is `json` (any case), in order.
fn json_fences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find("```") {
        let after = &rest[i + 3..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let info = after[..line_end].trim();
        let body_start = (line_end + 1).min(after.len());
        let body = &after[body_start..];
        let Some(close) = body.find("```") else { break };
        if info.eq_ignore_ascii_case("json") {
            out.push(&body[..close]);
        }
        rest = &body[close + 3..];
    }
    out
}

/// Longest JSON object or array that parses starting at some `{` or `[`.
fn longest_embedded(text: &str) -> Option<Value> {
    let mut best: Option<(usize, Value)> = None;
    for (i, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        if best.as_ref().is_some_and(|(len, _)| text.len() - i <= *len) {
            break;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            let len = stream.byte_offset();
            if best.as_ref().is_none_or(|(b, _)| len > *b) {
                best = Some((len, v));
            }
        }
    }
    best.map(|(_, v)| v)
}

/// First parseable ```json block; else the whole message; else the longest
/// embedded object or array. Never fails on garbage.
pub fn extract_json(raw: &str) -> Option<Value> {
    for body in json_fences(raw) {
        if let Ok(v) = serde_json::from_str::<Value>(body) {
            return Some(v);
        }
    }
    if let Ok(v) = serde_json::from_str::<Value>(raw.trim()) {
        return Some(v);
    }
    longest_embedded(raw)
}
