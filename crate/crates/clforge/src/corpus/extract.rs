//! API usage extraction over Java-lite token streams.
//!
//! Receiver resolution is purely syntactic: import table, local
//! declarations "Type ident", static calls "Type.method(", and the declared
//! type of a declaration statement whose initializer contains the call.
//! Chained or nested receivers that none of these rules cover are skipped
//! silently.

use std::collections::HashMap;

use crate::corpus::lexer::is_java_keyword;
use crate::corpus::sample::{ApiSite, DomainSpec, MethodSample};

/// Mapping simple type name -> qualified name, e.g. "BigInteger" ->
/// "java.math.BigInteger".
pub type ImportTable = HashMap<String, String>;

fn split_qualified(qualified: &str) -> (String, String) {
    match qualified.rfind('.') {
        Some(pos) => (qualified[..pos].to_string(), qualified[pos + 1..].to_string()),
        None => (String::new(), qualified.to_string()),
    }
}

fn is_identifier(tok: &str) -> bool {
    let mut chars = tok.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$') && !is_java_keyword(tok)
}

/// Resolve a simple type name to (package, interface) via the import table,
/// falling back to a unique match among the domain specs.
fn resolve_type(
    name: &str,
    imports: &ImportTable,
    specs: &[DomainSpec],
) -> Option<(String, String)> {
    if let Some(q) = imports.get(name) {
        return Some(split_qualified(q));
    }
    let mut found = None;
    for spec in specs {
        for e in &spec.entries {
            if e.interface == name {
                if found.is_some() {
                    return None; // ambiguous across specs
                }
                found = Some((e.package.clone(), e.interface.clone()));
            }
        }
    }
    found
}

/// Index of the token closing the paren opened at `open`, if balanced.
fn matching_paren(tokens: &[String], open: usize) -> Option<usize> {
    debug_assert_eq!(tokens[open], "(");
    let mut depth = 0i32;
    for (j, t) in tokens.iter().enumerate().skip(open) {
        match t.as_str() {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extract all resolvable API sites from one method's token stream.
///
/// Constructor invocations are never sites; unresolved receivers are skipped;
/// overlapping spans keep the earliest (outermost) site.
pub fn extract_api_usages(
    tokens: &[String],
    imports: &ImportTable,
    specs: &[DomainSpec],
) -> MethodSample {
    // Pass 1: local declarations "Type ident" where Type resolves.
    let mut locals: HashMap<String, (String, String)> = HashMap::new();
    for i in 0..tokens.len().saturating_sub(1) {
        if !is_identifier(&tokens[i]) || !is_identifier(&tokens[i + 1]) {
            continue;
        }
        if i > 0 && (tokens[i - 1] == "new" || tokens[i - 1] == ".") {
            continue;
        }
        let follows = tokens.get(i + 2).map(String::as_str);
        if !matches!(follows, Some("=") | Some(";") | Some(",") | Some(")") | Some(":") | None) {
            continue;
        }
        if let Some(resolved) = resolve_type(&tokens[i], imports, specs) {
            locals.insert(tokens[i + 1].clone(), resolved);
        }
    }

    // Pass 2: declaration statements "Type ident = ... ;" whose declared type
    // resolves; calls inside the initializer with otherwise-unresolved
    // receivers take the declared type.
    let mut decl_type_at: Vec<Option<(String, String)>> = vec![None; tokens.len()];
    for i in 0..tokens.len().saturating_sub(3) {
        if is_identifier(&tokens[i])
            && is_identifier(&tokens[i + 1])
            && tokens[i + 2] == "="
            && (i == 0 || (tokens[i - 1] != "new" && tokens[i - 1] != "."))
        {
            if let Some(resolved) = resolve_type(&tokens[i], imports, specs) {
                let end = tokens[i + 3..]
                    .iter()
                    .position(|t| t == ";")
                    .map(|p| i + 3 + p)
                    .unwrap_or(tokens.len());
                for slot in decl_type_at[i + 3..end].iter_mut() {
                    *slot = Some(resolved.clone());
                }
            }
        }
    }

    // Pass 3: call sites "recv . method (".
    let mut sites: Vec<ApiSite> = Vec::new();
    let mut last_end = 0usize;
    for j in 2..tokens.len() {
        if !is_identifier(&tokens[j]) || tokens[j - 1] != "." {
            continue;
        }
        if tokens.get(j + 1).map(String::as_str) != Some("(") {
            continue;
        }
        let recv = &tokens[j - 2];
        if !is_identifier(recv) {
            continue; // chained call such as `f().g(` — receiver not a name
        }
        if j >= 3 && tokens[j - 3] == "new" {
            continue; // qualified constructor `new a.B(`
        }
        let resolved = locals
            .get(recv)
            .cloned()
            .or_else(|| resolve_type(recv, imports, specs))
            .or_else(|| decl_type_at[j].clone());
        let Some((package, interface)) = resolved else {
            continue;
        };
        if tokens[j] == interface {
            continue; // constructor-style name, never a site
        }
        let Some(close) = matching_paren(tokens, j + 1) else {
            continue;
        };
        let start = j - 2;
        let end = close + 1;
        if start < last_end {
            continue; // overlaps the previous (outer) site
        }
        sites.push(ApiSite {
            start,
            call: j,
            end,
            package,
            interface,
            method: tokens[j].clone(),
        });
        last_end = end;
    }

    MethodSample::new(tokens.to_vec(), sites)
}

/// Parse `import a.b.C;` statements from a lexed compilation unit.
pub fn parse_imports(tokens: &[String]) -> ImportTable {
    let mut imports = ImportTable::new();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] != "import" {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        if tokens.get(j).map(String::as_str) == Some("static") {
            j += 1;
        }
        let mut parts: Vec<&str> = Vec::new();
        while j < tokens.len() && tokens[j] != ";" {
            if tokens[j] != "." {
                parts.push(&tokens[j]);
            }
            j += 1;
        }
        // Wildcard imports carry no simple name to map.
        if let Some(last) = parts.last() {
            if *last != "*" && parts.len() > 1 {
                imports.insert((*last).to_string(), parts.join("."));
            }
        }
        i = j + 1;
    }
    imports
}

/// Split a lexed compilation unit into method token streams.
///
/// A method is `name ( ... ) { ... }` where `name` is not a control-flow
/// keyword; the return-type token is included when present.
pub fn split_methods(tokens: &[String]) -> Vec<Vec<String>> {
    let mut methods = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !is_identifier(&tokens[i]) || tokens.get(i + 1).map(String::as_str) != Some("(") {
            i += 1;
            continue;
        }
        if i > 0 && (tokens[i - 1] == "." || tokens[i - 1] == "new") {
            i += 1;
            continue;
        }
        let Some(close) = matching_paren(tokens, i + 1) else {
            i += 1;
            continue;
        };
        // Signature may carry `throws X` between `)` and `{`.
        let mut k = close + 1;
        while k < tokens.len() && tokens[k] != "{" && tokens[k] != ";" && k - close <= 6 {
            k += 1;
        }
        if tokens.get(k).map(String::as_str) != Some("{") {
            i += 1;
            continue;
        }
        let mut depth = 0i32;
        let mut body_end = None;
        for (j, t) in tokens.iter().enumerate().skip(k) {
            match t.as_str() {
                "{" => depth += 1,
                "}" => {
                    depth -= 1;
                    if depth == 0 {
                        body_end = Some(j);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(body_end) = body_end else {
            i += 1;
            continue;
        };
        // Include the return type token when the previous token looks like one.
        let mut start = i;
        if i > 0 {
            let prev = &tokens[i - 1];
            let type_like = is_identifier(prev)
                || matches!(prev.as_str(), "int" | "long" | "double" | "float" | "boolean"
                    | "char" | "byte" | "short" | "void" | ">" | "]");
            if type_like {
                start = i - 1;
            }
        }
        methods.push(tokens[start..=body_end].to_vec());
        i = body_end + 1;
    }
    methods
}
