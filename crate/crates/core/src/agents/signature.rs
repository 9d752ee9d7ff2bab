//! The signature rule: `def name(p: T, ...) -> R:` with every parameter and
//! the return annotated.

use crate::domain::is_identifier;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSignature {
    pub name: String,
    pub params: Vec<(String, String)>,
    pub returns: String,
}

/// Splits on commas not nested in brackets or quotes.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '\'' | '"') => quote = Some(c),
            (None, '(' | '[' | '{') => depth += 1,
            (None, ')' | ']' | '}') => depth -= 1,
            (None, ',') if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

pub fn parse_signature(text: &str) -> Result<ParsedSignature, String> {
    let t = text.trim();
    let t = t.strip_suffix(':').unwrap_or(t).trim_end();
    let rest = t
        .strip_prefix("def ")
        .ok_or_else(|| format!("signature must start with `def`: `{text}`"))?;
    let open = rest.find('(').ok_or("signature has no parameter list")?;
    let name = rest[..open].trim();
    if !is_identifier(name) {
        return Err(format!("`{name}` is not a valid function name"));
    }
    let close = rest.rfind(')').ok_or("signature parameter list is not closed")?;
    if close < open {
        return Err("signature parameter list is not closed".into());
    }
    let params_text = &rest[open + 1..close];
    let tail = rest[close + 1..].trim();
    let returns = tail
        .strip_prefix("->")
        .ok_or("signature must declare a return type with `->`")?
        .trim();
    if returns.is_empty() {
        return Err("signature return type is empty".into());
    }

    let mut params = Vec::new();
    if !params_text.trim().is_empty() {
        for raw in split_top_level(params_text) {
            let p = raw.trim();
            if p.is_empty() {
                continue;
            }
            if p.starts_with('*') || p == "/" {
                return Err(format!("variadic or positional-only marker `{p}` is not allowed"));
            }
            let (pname, ty) = p
                .split_once(':')
                .ok_or_else(|| format!("parameter `{p}` has no type annotation"))?;
            let pname = pname.trim();
            let ty = ty.split_once('=').map_or(ty, |(t, _)| t).trim();
            if !is_identifier(pname) {
                return Err(format!("parameter `{pname}` is not a valid identifier"));
            }
            if pname == "self" {
                return Err("methods are not allowed; signature takes `self`".into());
            }
            if ty.is_empty() {
                return Err(format!("parameter `{pname}` has an empty type annotation"));
            }
            params.push((pname.to_string(), ty.to_string()));
        }
    }
    Ok(ParsedSignature { name: name.to_string(), params, returns: returns.to_string() })
}
