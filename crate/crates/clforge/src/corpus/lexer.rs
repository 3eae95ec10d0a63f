//! Java-lite lexer: identifiers, keywords, collapsed literals, operators,
//! punctuation. Comments and whitespace are dropped; literals collapse to
//! the category tokens STR/NUM/CHAR.

use crate::error::{Error, Result};

pub const JAVA_KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally", "float",
    "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long",
    "native", "new", "package", "private", "protected", "public", "return", "short", "static",
    "strictfp", "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try",
    "void", "volatile", "while", "true", "false", "null",
];

pub fn is_java_keyword(tok: &str) -> bool {
    JAVA_KEYWORDS.contains(&tok)
}

/// Multi-character operators, longest first so maximal munch works.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "<<", ">>", "<=", ">=", "==",
    "!=", "&&", "||", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "+", "-", "*", "/", "%",
    "=", "<", ">", "!", "~", "&", "|", "^", "?", ":", "@",
];

const PUNCTUATION: &[char] = &['(', ')', '{', '}', '[', ']', ';', ',', '.'];

/// Lex Java-like source into a flat token stream.
///
/// Unterminated strings, chars, or block comments are errors carrying the
/// line number where the construct started.
pub fn lex_java(source: &str) -> Result<Vec<String>> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1usize;
    let n = chars.len();

    while i < n {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        // Comments.
        if c == '/' && i + 1 < n && chars[i + 1] == '/' {
            while i < n && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && i + 1 < n && chars[i + 1] == '*' {
            let start_line = line;
            i += 2;
            loop {
                if i + 1 >= n {
                    return Err(Error::Data(format!(
                        "unterminated block comment starting at line {start_line}"
                    )));
                }
                if chars[i] == '\n' {
                    line += 1;
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        // String literal -> STR.
        if c == '"' {
            let start_line = line;
            i += 1;
            loop {
                if i >= n {
                    return Err(Error::Data(format!(
                        "unterminated string literal at line {start_line}"
                    )));
                }
                match chars[i] {
                    '\\' => i += 2,
                    '"' => {
                        i += 1;
                        break;
                    }
                    '\n' => {
                        return Err(Error::Data(format!(
                            "unterminated string literal at line {start_line}"
                        )))
                    }
                    _ => i += 1,
                }
            }
            tokens.push("STR".to_string());
            continue;
        }
        // Char literal -> CHAR.
        if c == '\'' {
            let start_line = line;
            i += 1;
            loop {
                if i >= n {
                    return Err(Error::Data(format!(
                        "unterminated character literal at line {start_line}"
                    )));
                }
                match chars[i] {
                    '\\' => i += 2,
                    '\'' => {
                        i += 1;
                        break;
                    }
                    '\n' => {
                        return Err(Error::Data(format!(
                            "unterminated character literal at line {start_line}"
                        )))
                    }
                    _ => i += 1,
                }
            }
            tokens.push("CHAR".to_string());
            continue;
        }
        // Number literal -> NUM (hex, bin, decimals, exponents, suffixes).
        if c.is_ascii_digit() {
            i += 1;
            while i < n
                && (chars[i].is_ascii_alphanumeric()
                    || chars[i] == '_'
                    || chars[i] == '.'
                    || ((chars[i] == '+' || chars[i] == '-')
                        && matches!(chars[i - 1], 'e' | 'E' | 'p' | 'P')))
            {
                i += 1;
            }
            tokens.push("NUM".to_string());
            continue;
        }
        // Identifier or keyword.
        if c.is_alphabetic() || c == '_' || c == '$' {
            let start = i;
            while i < n && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
            continue;
        }
        if PUNCTUATION.contains(&c) {
            tokens.push(c.to_string());
            i += 1;
            continue;
        }
        // Operators by maximal munch.
        let rest: String = chars[i..n.min(i + 4)].iter().collect();
        if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            tokens.push((*op).to_string());
            i += op.len();
            continue;
        }
        // Anything else is kept as a single-character token.
        tokens.push(c.to_string());
        i += 1;
    }
    Ok(tokens)
}
