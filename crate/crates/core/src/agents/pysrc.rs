//! Line-level views of Python source. No parsing beyond what assembly needs:
//! top-level imports, top-level `def` names, and identifier renaming.

/// Source split into hoistable import statements and everything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSource {
    pub imports: Vec<String>,
    pub body: String,
}

/// Marks which lines sit inside a triple-quoted string (after the opening
/// line). Lines that open or close a string count as code.
fn string_interior(lines: &[&str]) -> Vec<bool> {
    let mut inside: Option<&str> = None;
    lines
        .iter()
        .map(|line| {
            let was_inside = inside.is_some();
            let mut rest = *line;
            loop {
                match inside {
                    Some(q) => match rest.find(q) {
                        Some(i) => {
                            rest = &rest[i + 3..];
                            inside = None;
                        }
                        None => break,
                    },
                    None => {
                        let dq = rest.find("\"\"\"");
                        let sq = rest.find("'''");
                        let (i, q) = match (dq, sq) {
                            (Some(a), Some(b)) if a <= b => (a, "\"\"\""),
                            (Some(_), Some(b)) => (b, "'''"),
                            (Some(a), None) => (a, "\"\"\""),
                            (None, Some(b)) => (b, "'''"),
                            (None, None) => break,
                        };
                        rest = &rest[i + 3..];
                        inside = Some(q);
                    }
                }
            }
            was_inside
        })
        .collect()
}

fn is_import_start(line: &str) -> bool {
    line.starts_with("import ") || (line.starts_with("from ") && line.contains(" import "))
}

/// Pulls column-0 `import`/`from ... import` statements out of `source`.
/// Parenthesized multi-line imports are kept whole.
pub fn split_imports(source: &str) -> SplitSource {
    let lines: Vec<&str> = source.lines().collect();
    let interior = string_interior(&lines);
    let mut imports = Vec::new();
    let mut body = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if !interior[i] && is_import_start(line) {
            let mut stmt = line.trim_end().to_string();
            if line.contains('(') && !line.contains(')') {
                while i + 1 < lines.len() {
                    i += 1;
                    stmt.push('\n');
                    stmt.push_str(lines[i].trim_end());
                    if lines[i].contains(')') {
                        break;
                    }
                }
            }
            imports.push(stmt);
        } else {
            body.push(line);
        }
        i += 1;
    }
    let body = body.join("\n");
    SplitSource { imports, body: body.trim_matches('\n').to_string() }
}

/// Order-preserving union of import statements.
pub fn dedup_imports<'a>(groups: impl IntoIterator<Item = &'a [String]>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for group in groups {
        for imp in group {
            if seen.insert(imp.clone()) {
                out.push(imp.clone());
            }
        }
    }
    out
}

/// Names of column-0 `def` / `async def` statements.
pub fn top_level_defs(source: &str) -> Vec<String> {
    let lines: Vec<&str> = source.lines().collect();
    let interior = string_interior(&lines);
    lines
        .iter()
        .zip(interior)
        .filter(|(_, inside)| !inside)
        .filter_map(|(line, _)| {
            let rest = line.strip_prefix("def ").or_else(|| line.strip_prefix("async def "))?;
            let end = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))?;
            Some(rest[..end].to_string())
        })
        .collect()
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Replaces whole-word occurrences of `from` that are not attribute accesses.
pub fn rename_identifier(source: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(source.len());
    let mut rest = source;
    let mut prev: Option<char> = None;
    while let Some(pos) = rest.find(from) {
        let before = rest[..pos].chars().last().or(prev);
        let after = rest[pos + from.len()..].chars().next();
        out.push_str(&rest[..pos]);
        let word_start = !before.is_some_and(|c| is_ident_char(c) || c == '.');
        let word_end = !after.is_some_and(is_ident_char);
        if word_start && word_end {
            out.push_str(to);
        } else {
            out.push_str(from);
        }
        prev = from.chars().last();
        rest = &rest[pos + from.len()..];
    }
    out.push_str(rest);
    out
}
