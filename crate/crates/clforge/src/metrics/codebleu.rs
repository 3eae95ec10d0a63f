//! CodeBLEU-lite: a deterministic four-component stand-in for CodeBLEU.
//!
//! Components: plain BLEU, keyword-weighted BLEU (Java keywords weight 5),
//! bracket-tree syntax match, and def/use dataflow match. Reports must label
//! this metric "codebleu_lite"; it is not the cited metric.

use std::collections::HashMap;

use crate::corpus::lexer::is_java_keyword;
use crate::error::{Error, Result};
use crate::metrics::bleu::{bleu, bleu_weighted};

const KEYWORD_WEIGHT: f64 = 5.0;

/// F1 over two multisets; both empty counts as a perfect match.
fn multiset_f1<T: std::hash::Hash + Eq>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for x in b {
        *counts.entry(x).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for x in a {
        if let Some(c) = counts.get_mut(&x) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    let precision = matched as f64 / a.len() as f64;
    let recall = matched as f64 / b.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Canonical serializations of every bracket subtree built from (){}[]
/// nesting, one entry per bracket node.
fn bracket_subtrees(tokens: &[String]) -> Vec<String> {
    struct Node {
        kind: char,
        children: Vec<Node>,
    }
    fn serialize(node: &Node, out: &mut Vec<String>) -> String {
        let inner: String =
            node.children.iter().map(|c| serialize(c, out)).collect::<Vec<_>>().join("");
        let s = format!("{}{}{}", node.kind, inner, closer(node.kind));
        out.push(s.clone());
        s
    }
    fn closer(open: char) -> char {
        match open {
            '(' => ')',
            '{' => '}',
            _ => ']',
        }
    }
    let mut stack: Vec<Node> = vec![Node { kind: 'r', children: Vec::new() }];
    for tok in tokens {
        match tok.as_str() {
            "(" | "{" | "[" => {
                stack.push(Node { kind: tok.chars().next().unwrap(), children: Vec::new() });
            }
            ")" | "}" | "]" => {
                if stack.len() > 1 {
                    let node = stack.pop().unwrap();
                    stack.last_mut().unwrap().children.push(node);
                }
            }
            _ => {}
        }
    }
    // Unclosed opens collapse into the root.
    while stack.len() > 1 {
        let node = stack.pop().unwrap();
        stack.last_mut().unwrap().children.push(node);
    }
    let root = stack.pop().unwrap();
    let mut out = Vec::new();
    for child in &root.children {
        serialize(child, &mut out);
    }
    out
}

/// (identifier, def-or-use) pairs from the Java-lite resolver's view:
/// a def is an identifier being declared ("Type ident") or assigned
/// ("ident ="); every other identifier occurrence is a use.
fn dataflow_pairs(tokens: &[String]) -> Vec<(String, &'static str)> {
    let is_ident = |t: &str| {
        let mut chars = t.chars();
        matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_' || c == '$')
            && t.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '$')
            && !is_java_keyword(t)
            && !matches!(t, "STR" | "NUM" | "CHAR")
    };
    let type_like = |t: &str| {
        is_ident(t)
            || matches!(
                t,
                "int" | "long" | "double" | "float" | "boolean" | "char" | "byte" | "short"
                    | "String"
            )
    };
    let mut pairs = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        if !is_ident(tok) {
            continue;
        }
        let next = tokens.get(i + 1).map(String::as_str);
        let prev = if i > 0 { Some(tokens[i - 1].as_str()) } else { None };
        let declared = prev.map(type_like).unwrap_or(false)
            && matches!(next, Some("=") | Some(";") | Some(",") | Some(")") | None);
        let assigned = next == Some("=");
        if declared || assigned {
            pairs.push((tok.clone(), "def"));
        } else {
            pairs.push((tok.clone(), "use"));
        }
    }
    pairs
}

/// Weighted sum of the four components, each in [0, 100].
pub fn codebleu_lite(
    preds: &[Vec<String>],
    truths: &[Vec<String>],
    weights: (f64, f64, f64, f64),
) -> Result<f64> {
    let (w1, w2, w3, w4) = weights;
    let sum = w1 + w2 + w3 + w4;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("codebleu_lite: weights sum to {sum}, expected 1")));
    }
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Data(format!(
            "codebleu_lite: {} preds vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut score = 0.0;
    if w1 != 0.0 {
        score += w1 * bleu(preds, truths)?;
    }
    if w2 != 0.0 {
        let kw = |gram: &[String]| {
            if gram.iter().any(|t| is_java_keyword(t)) {
                KEYWORD_WEIGHT
            } else {
                1.0
            }
        };
        score += w2 * bleu_weighted(preds, truths, &kw)?;
    }
    if w3 != 0.0 {
        let mut acc = 0.0;
        for (p, t) in preds.iter().zip(truths) {
            acc += multiset_f1(&bracket_subtrees(p), &bracket_subtrees(t));
        }
        score += w3 * 100.0 * acc / preds.len() as f64;
    }
    if w4 != 0.0 {
        let mut acc = 0.0;
        for (p, t) in preds.iter().zip(truths) {
            acc += multiset_f1(&dataflow_pairs(p), &dataflow_pairs(t));
        }
        score += w4 * 100.0 * acc / preds.len() as f64;
    }
    Ok(score)
}

pub const EQUAL_WEIGHTS: (f64, f64, f64, f64) = (0.25, 0.25, 0.25, 0.25);
