//! Lightweight lexical scanner for Python candidate sources.
//!
//! This is not a parser. It finds top-level `def` blocks, import bindings,
//! qualified call sites and literal keyword arguments well enough for the
//! reference worker's metadata and directive handling.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::bridge::protocol::ParamValue;

/// Names defined by top-level `def` statements, in order.
pub fn top_level_functions(source: &str) -> Vec<String> {
    static DEF: OnceLock<Regex> = OnceLock::new();
    let re = DEF.get_or_init(|| Regex::new(r"^(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap());
    source
        .lines()
        .filter_map(|line| re.captures(line).map(|c| c[1].to_owned()))
        .collect()
}

/// Text of the top-level function `name`, including its `def` line.
pub fn function_body<'a>(source: &'a str, name: &str) -> Option<&'a str> {
    let mut start = None;
    let mut offset = 0usize;
    let mut end = source.len();
    for line in source.split_inclusive('\n') {
        let trimmed = line.trim_end();
        if let Some(begin) = start {
            let dedented = !trimmed.is_empty() && !line.starts_with([' ', '\t']) && !trimmed.starts_with('#');
            if dedented && offset > begin {
                end = offset;
                break;
            }
        } else if is_def_of(trimmed, name) {
            start = Some(offset);
        }
        offset += line.len();
    }
    start.map(|s| &source[s..end])
}

fn is_def_of(line: &str, name: &str) -> bool {
    let rest = line
        .strip_prefix("async def ")
        .or_else(|| line.strip_prefix("def "));
    match rest {
        Some(rest) => {
            let rest = rest.trim_start();
            rest.strip_prefix(name)
                .is_some_and(|after| after.trim_start().starts_with('('))
        }
        None => false,
    }
}

/// `# stub: ...` directive payloads inside a block of text.
pub fn directives(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let comment = &line[line.find('#')? + 1..];
            let payload = comment.trim_start().strip_prefix("stub:")?;
            Some(payload.trim().to_owned())
        })
        .collect()
}

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut quote: Option<char> = None;
        let mut cut = line.len();
        for (i, ch) in line.char_indices() {
            match quote {
                Some(q) if ch == q => quote = None,
                Some(_) => {}
                None if ch == '"' || ch == '\'' => quote = Some(ch),
                None if ch == '#' => {
                    cut = i;
                    break;
                }
                None => {}
            }
        }
        out.push_str(&line[..cut]);
        out.push('\n');
    }
    out
}

/// Local name → fully qualified module path, from every import statement.
pub fn import_bindings(source: &str) -> BTreeMap<String, String> {
    static FROM: OnceLock<Regex> = OnceLock::new();
    static IMPORT: OnceLock<Regex> = OnceLock::new();
    let from_re = FROM.get_or_init(|| Regex::new(r"^from\s+([\w\.]+)\s+import\s+(.+)$").unwrap());
    let import_re = IMPORT.get_or_init(|| Regex::new(r"^import\s+(.+)$").unwrap());

    let mut bindings = BTreeMap::new();
    for line in strip_comments(source).lines() {
        let line = line.trim();
        if let Some(c) = from_re.captures(line) {
            let module = &c[1];
            for item in c[2].trim_matches(|ch| ch == '(' || ch == ')').split(',') {
                let (name, alias) = split_alias(item);
                if !name.is_empty() && name != "*" {
                    bindings.insert(alias.to_owned(), format!("{module}.{name}"));
                }
            }
        } else if let Some(c) = import_re.captures(line) {
            for item in c[1].split(',') {
                let (name, alias) = split_alias(item);
                if name.is_empty() {
                    continue;
                }
                if alias == name {
                    // `import a.b` binds `a`
                    let root = name.split('.').next().unwrap_or(name);
                    bindings.insert(root.to_owned(), root.to_owned());
                } else {
                    bindings.insert(alias.to_owned(), name.to_owned());
                }
            }
        }
    }
    bindings
}

fn split_alias(item: &str) -> (&str, &str) {
    let item = item.trim();
    match item.split_once(" as ") {
        Some((name, alias)) => (name.trim(), alias.trim()),
        None => (item, item),
    }
}

/// Qualified API calls in `body` (call instances, in order) and the literal
/// keyword arguments passed to them.
pub fn api_calls(body: &str, bindings: &BTreeMap<String, String>) -> (Vec<String>, Vec<ParamValue>) {
    static CALL: OnceLock<Regex> = OnceLock::new();
    let re = CALL.get_or_init(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*(?:\s*\.\s*[A-Za-z_][A-Za-z0-9_]*)*\s*\(").unwrap());

    let text = strip_comments(body);
    let bytes = text.as_bytes();
    let mut calls = Vec::new();
    let mut params = Vec::new();
    for m in re.find_iter(&text) {
        if m.start() > 0 {
            let prev = bytes[m.start() - 1];
            if prev == b'.' || prev.is_ascii_alphanumeric() || prev == b'_' {
                continue;
            }
        }
        let line_start = text[..m.start()].rfind('\n').map_or(0, |i| i + 1);
        let lead = text[line_start..m.start()].trim();
        if lead == "def" || lead == "async def" {
            continue;
        }
        let dotted: String = m.as_str()[..m.as_str().len() - 1]
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let mut parts = dotted.splitn(2, '.');
        let head = parts.next().unwrap_or_default();
        let Some(qualified_head) = bindings.get(head) else {
            continue;
        };
        let api = match parts.next() {
            Some(rest) => format!("{qualified_head}.{rest}"),
            None => qualified_head.clone(),
        };
        if let Some(args) = call_arguments(&text[m.end()..]) {
            for arg in split_top_level(args) {
                if let Some((key, value)) = arg.split_once('=') {
                    let key = key.trim();
                    let value = value.trim();
                    if is_identifier(key) && !value.starts_with('=') {
                        if let Some(lit) = literal(value) {
                            params.push(ParamValue {
                                api: api.clone(),
                                param: key.to_owned(),
                                value: lit,
                            });
                        }
                    }
                }
            }
        }
        calls.push(api);
    }
    (calls, params)
}

fn call_arguments(after_paren: &str) -> Option<&str> {
    let mut depth = 1usize;
    let mut quote: Option<char> = None;
    for (i, ch) in after_paren.char_indices() {
        match quote {
            Some(q) if ch == q => quote = None,
            Some(_) => {}
            None => match ch {
                '"' | '\'' => quote = Some(ch),
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&after_paren[..i]);
                    }
                }
                _ => {}
            },
        }
    }
    None
}

fn split_top_level(args: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, ch) in args.char_indices() {
        match quote {
            Some(q) if ch == q => quote = None,
            Some(_) => {}
            None => match ch {
                '"' | '\'' => quote = Some(ch),
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth = depth.saturating_sub(1),
                ',' if depth == 0 => {
                    parts.push(&args[start..i]);
                    start = i + 1;
                }
                _ => {}
            },
        }
    }
    parts.push(&args[start..]);
    parts.into_iter().filter(|p| !p.trim().is_empty()).collect()
}

fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn literal(text: &str) -> Option<serde_json::Value> {
    match text {
        "True" => return Some(true.into()),
        "False" => return Some(false.into()),
        "None" => return Some(serde_json::Value::Null),
        _ => {}
    }
    if text.len() >= 2 {
        let first = text.chars().next()?;
        if (first == '"' || first == '\'') && text.ends_with(first) {
            let inner = &text[1..text.len() - 1];
            if !inner.contains(first) {
                return Some(inner.to_owned().into());
            }
        }
    }
    if let Ok(int) = text.parse::<i64>() {
        return Some(int.into());
    }
    let is_numeric = text
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+'));
    if is_numeric {
        if let Ok(float) = text.parse::<f64>() {
            if float.is_finite() {
                return Some(float.into());
            }
        }
    }
    None
}
