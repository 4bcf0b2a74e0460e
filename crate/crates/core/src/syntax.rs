//! Java lexeme streams with syntactic classes, method extraction and
//! token-level edit scripts.
//!
//! Parsing is delegated to tree-sitter; this module owns the mapping from
//! parse-tree leaves to [`ClassifiedToken`]s. A token is a lexeme: a leaf of
//! the tree, except that string and character literals are kept whole.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::{Node, Parser, Tree};

use crate::par;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyntaxError {
    #[error("parse error at line {line}, column {col} (byte {byte})")]
    Parse { byte: usize, line: usize, col: usize },
    #[error("unknown grammar `{0}`")]
    UnknownGrammar(String),
}

pub type Result<T, E = SyntaxError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SyntaxClass {
    Type,
    Method,
    Variable,
    StringLit,
    NumLit,
    Other,
}

impl SyntaxClass {
    pub const ALL: [SyntaxClass; 6] = [
        SyntaxClass::Type,
        SyntaxClass::Method,
        SyntaxClass::Variable,
        SyntaxClass::StringLit,
        SyntaxClass::NumLit,
        SyntaxClass::Other,
    ];
    pub const COUNT: usize = 6;

    /// Dense index used for embedding rows and auxiliary labels.
    pub fn index(self) -> usize {
        match self {
            SyntaxClass::Type => 0,
            SyntaxClass::Method => 1,
            SyntaxClass::Variable => 2,
            SyntaxClass::StringLit => 3,
            SyntaxClass::NumLit => 4,
            SyntaxClass::Other => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<SyntaxClass> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            SyntaxClass::Type => "TYPE",
            SyntaxClass::Method => "METHOD",
            SyntaxClass::Variable => "VARIABLE",
            SyntaxClass::StringLit => "STRING_LIT",
            SyntaxClass::NumLit => "NUM_LIT",
            SyntaxClass::Other => "OTHER",
        }
    }

    /// Identifiers and literals; everything the abstraction step may rename.
    pub fn is_abstractable(self) -> bool {
        self != SyntaxClass::Other
    }
}

impl fmt::Display for SyntaxClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedToken {
    pub text: String,
    pub class: SyntaxClass,
    pub byte_start: usize,
    pub byte_end: usize,
    /// 1-based.
    pub line: usize,
    /// 1-based, in bytes.
    pub col: usize,
}

impl AsRef<str> for ClassifiedToken {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Small,
    Medium,
    Oversize,
}

impl Bucket {
    pub const SMALL_LIMIT: usize = 50;
    pub const MEDIUM_LIMIT: usize = 100;

    pub fn from_count(token_count: usize) -> Bucket {
        if token_count < Self::SMALL_LIMIT {
            Bucket::Small
        } else if token_count <= Self::MEDIUM_LIMIT {
            Bucket::Medium
        } else {
            Bucket::Oversize
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Small => "small",
            Bucket::Medium => "medium",
            Bucket::Oversize => "oversize",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodUnit {
    pub name: String,
    /// `package.Outer.Inner.name(ParamType,...)`, used to align methods
    /// across the two sides of a commit.
    pub qualified_name: String,
    pub tokens: Vec<ClassifiedToken>,
    pub token_count: usize,
    pub bucket: Bucket,
}

impl MethodUnit {
    pub fn new(name: String, qualified_name: String, tokens: Vec<ClassifiedToken>) -> Self {
        let token_count = tokens.len();
        MethodUnit {
            name,
            qualified_name,
            tokens,
            token_count,
            bucket: Bucket::from_count(token_count),
        }
    }

    pub fn texts(&self) -> Vec<String> {
        texts(&self.tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grammar {
    Java,
}

impl FromStr for Grammar {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Grammar::Java),
            _ => Err(SyntaxError::UnknownGrammar(s.to_string())),
        }
    }
}

thread_local! {
    static JAVA_PARSER: RefCell<Option<Parser>> = const { RefCell::new(None) };
}

fn parse_tree(grammar: Grammar, source: &str) -> Tree {
    match grammar {
        Grammar::Java => JAVA_PARSER.with(|cell| {
            let mut slot = cell.borrow_mut();
            let parser = slot.get_or_insert_with(|| {
                let mut parser = Parser::new();
                parser
                    .set_language(&tree_sitter_java::LANGUAGE.into())
                    .expect("bundled Java grammar matches the tree-sitter ABI");
                parser
            });
            parser
                .parse(source, None)
                .expect("parser has a language and no cancellation flag")
        }),
    }
}

fn first_error(node: Node<'_>) -> Option<Node<'_>> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    if !node.has_error() {
        return None;
    }
    let mut cursor = node.walk();
    let found = node.children(&mut cursor).find_map(first_error);
    found.or(Some(node))
}

fn parse_error(node: Node<'_>) -> SyntaxError {
    let p = node.start_position();
    SyntaxError::Parse {
        byte: node.start_byte(),
        line: p.row + 1,
        col: p.column + 1,
    }
}

fn is_comment(kind: &str) -> bool {
    matches!(kind, "line_comment" | "block_comment" | "comment")
}

fn literal_class(kind: &str) -> Option<SyntaxClass> {
    match kind {
        "string_literal" | "character_literal" | "text_block" => Some(SyntaxClass::StringLit),
        "decimal_integer_literal"
        | "hex_integer_literal"
        | "octal_integer_literal"
        | "binary_integer_literal"
        | "decimal_floating_point_literal"
        | "hex_floating_point_literal" => Some(SyntaxClass::NumLit),
        _ => None,
    }
}

fn is_field(parent: Node<'_>, field: &str, node: Node<'_>) -> bool {
    parent.child_by_field_name(field).map(|n| n.id()) == Some(node.id())
}

fn classify_identifier(node: Node<'_>) -> SyntaxClass {
    let Some(parent) = node.parent() else {
        return SyntaxClass::Variable;
    };
    match parent.kind() {
        "method_declaration"
        | "constructor_declaration"
        | "compact_constructor_declaration"
        | "method_invocation"
        | "annotation_type_element_declaration"
            if is_field(parent, "name", node) =>
        {
            SyntaxClass::Method
        }
        "method_reference" => {
            // `Type::name`: the identifier after `::` is the method.
            let after_colons = node
                .prev_sibling()
                .map(|s| s.kind() == "::")
                .unwrap_or(false);
            if after_colons {
                SyntaxClass::Method
            } else {
                SyntaxClass::Variable
            }
        }
        "class_declaration"
        | "interface_declaration"
        | "enum_declaration"
        | "record_declaration"
        | "annotation_type_declaration"
        | "marker_annotation"
        | "annotation"
            if is_field(parent, "name", node) =>
        {
            SyntaxClass::Type
        }
        _ => SyntaxClass::Variable,
    }
}

fn classify_leaf(node: Node<'_>) -> SyntaxClass {
    match node.kind() {
        "type_identifier" => SyntaxClass::Type,
        "identifier" => classify_identifier(node),
        kind => literal_class(kind).unwrap_or(SyntaxClass::Other),
    }
}

fn push_token(node: Node<'_>, class: SyntaxClass, source: &str, out: &mut Vec<ClassifiedToken>) {
    let (start, end) = (node.start_byte(), node.end_byte());
    if end <= start || end > source.len() {
        return;
    }
    let text = &source[start..end];
    if text.trim().is_empty() {
        return;
    }
    let p = node.start_position();
    out.push(ClassifiedToken {
        text: text.to_string(),
        class,
        byte_start: start,
        byte_end: end,
        line: p.row + 1,
        col: p.column + 1,
    });
}

fn collect_tokens(node: Node<'_>, source: &str, out: &mut Vec<ClassifiedToken>) {
    let kind = node.kind();
    if is_comment(kind) || node.is_missing() {
        return;
    }
    if let Some(class) = literal_class(kind) {
        push_token(node, class, source, out);
        return;
    }
    if node.child_count() == 0 {
        push_token(node, classify_leaf(node), source, out);
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect_tokens(child, source, out);
    }
}

/// Classified lexemes of `source`, comments and whitespace excluded.
///
/// A source that fails to parse as-is is retried once with a `;` appended,
/// which admits bare expressions such as `foo.bar()`. The appended byte never
/// appears in the output.
pub fn parse_tokens(source: &str, grammar: Grammar) -> Result<Vec<ClassifiedToken>> {
    let tree = parse_tree(grammar, source);
    let root = tree.root_node();
    let mut out = Vec::new();
    if !root.has_error() {
        collect_tokens(root, source, &mut out);
        return Ok(out);
    }
    let completed = format!("{source}\n;");
    let retry = parse_tree(grammar, &completed);
    if !retry.root_node().has_error() {
        collect_tokens(retry.root_node(), &completed, &mut out);
        out.retain(|t| t.byte_end <= source.len());
        return Ok(out);
    }
    Err(parse_error(first_error(root).unwrap_or(root)))
}

/// Java shorthand for [`parse_tokens`].
pub fn tokenize_java(source: &str) -> Result<Vec<ClassifiedToken>> {
    parse_tokens(source, Grammar::Java)
}

fn is_method_node(kind: &str) -> bool {
    matches!(
        kind,
        "method_declaration" | "constructor_declaration" | "compact_constructor_declaration"
    )
}

fn is_type_declaration(kind: &str) -> bool {
    matches!(
        kind,
        "class_declaration"
            | "interface_declaration"
            | "enum_declaration"
            | "record_declaration"
            | "annotation_type_declaration"
    )
}

fn node_text<'s>(node: Node<'_>, source: &'s str) -> &'s str {
    &source[node.byte_range()]
}

fn compact_text(node: Node<'_>, source: &str) -> String {
    node_text(node, source).split_whitespace().collect()
}

fn qualified_name(method: Node<'_>, name: &str, package: Option<&str>, source: &str) -> String {
    let mut scopes = Vec::new();
    let mut cur = method.parent();
    while let Some(n) = cur {
        if is_type_declaration(n.kind()) {
            if let Some(id) = n.child_by_field_name("name") {
                scopes.push(node_text(id, source).to_string());
            }
        } else if n.kind() == "object_creation_expression" {
            scopes.push("<anon>".to_string());
        } else if is_method_node(n.kind()) {
            if let Some(id) = n.child_by_field_name("name") {
                scopes.push(format!("{}()", node_text(id, source)));
            }
        }
        cur = n.parent();
    }
    scopes.reverse();
    let mut params = Vec::new();
    if let Some(formal) = method.child_by_field_name("parameters") {
        let mut cursor = formal.walk();
        for p in formal.named_children(&mut cursor) {
            if let Some(ty) = p.child_by_field_name("type") {
                let mut t = compact_text(ty, source);
                if p.kind() == "spread_parameter" {
                    t.push_str("...");
                }
                params.push(t);
            } else if p.kind() == "spread_parameter" {
                // `T... xs` has no `type` field in some grammar versions.
                let mut c = p.walk();
                let first = p.named_children(&mut c).next();
                if let Some(first) = first {
                    params.push(format!("{}...", compact_text(first, source)));
                }
            }
        }
    }
    let mut q = String::new();
    if let Some(pkg) = package {
        q.push_str(pkg);
        q.push('.');
    }
    for s in scopes {
        q.push_str(&s);
        q.push('.');
    }
    q.push_str(name);
    q.push('(');
    q.push_str(&params.join(","));
    q.push(')');
    q
}

fn package_name(root: Node<'_>, source: &str) -> Option<String> {
    let mut cursor = root.walk();
    let decl = root
        .named_children(&mut cursor)
        .find(|n| n.kind() == "package_declaration")?;
    let mut c = decl.walk();
    let name = decl
        .named_children(&mut c)
        .find(|n| matches!(n.kind(), "scoped_identifier" | "identifier"))?;
    Some(compact_text(name, source))
}

fn find_methods<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    if is_method_node(node.kind()) {
        out.push(node);
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        find_methods(child, out);
    }
}

fn inside_any(node: Node<'_>, spans: &[(usize, usize)]) -> bool {
    spans
        .iter()
        .any(|&(s, e)| node.start_byte() >= s && node.end_byte() <= e)
}

fn error_nodes<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    if node.is_error() || node.is_missing() {
        out.push(node);
        return;
    }
    if !node.has_error() {
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        error_nodes(child, out);
    }
}

/// One [`MethodUnit`] per method or constructor declaration, nested and
/// anonymous classes included. Lambdas are not methods.
///
/// Methods that contain a syntax error are skipped with a warning; an error
/// outside every method declaration fails the whole source.
pub fn extract_methods(source: &str) -> Result<Vec<MethodUnit>> {
    let tree = parse_tree(Grammar::Java, source);
    let root = tree.root_node();
    let mut nodes = Vec::new();
    find_methods(root, &mut nodes);

    if root.has_error() {
        let spans: Vec<(usize, usize)> =
            nodes.iter().map(|n| (n.start_byte(), n.end_byte())).collect();
        let mut errors = Vec::new();
        error_nodes(root, &mut errors);
        if let Some(outside) = errors.into_iter().find(|e| !inside_any(*e, &spans)) {
            return Err(parse_error(outside));
        }
    }

    let package = package_name(root, source);
    let mut methods = Vec::with_capacity(nodes.len());
    for node in nodes {
        let name = node
            .child_by_field_name("name")
            .map(|n| node_text(n, source).to_string())
            .unwrap_or_default();
        if node.has_error() {
            let p = node.start_position();
            log::warn!(
                "skipping unparseable method `{}` at line {}",
                name,
                p.row + 1
            );
            continue;
        }
        let mut tokens = Vec::new();
        collect_tokens(node, source, &mut tokens);
        let qualified = qualified_name(node, &name, package.as_deref(), source);
        methods.push(MethodUnit::new(name, qualified, tokens));
    }
    Ok(methods)
}

/// Extracts methods from many sources. Per-source results keep input order.
pub fn extract_methods_batch<S: AsRef<str> + Sync>(sources: &[S]) -> Vec<Result<Vec<MethodUnit>>> {
    par::map(sources, |s| extract_methods(s.as_ref()))
}

/// Comment-free token list of a method. Comments never become tokens, so this
/// only has to copy; it exists so callers depend on the contract, not on that
/// detail.
pub fn normalize(method: &MethodUnit) -> Vec<ClassifiedToken> {
    method
        .tokens
        .iter()
        .filter(|t| !is_comment_text(&t.text))
        .cloned()
        .collect()
}

fn is_comment_text(text: &str) -> bool {
    text.starts_with("//") || text.starts_with("/*")
}

/// Tokens joined by single spaces.
pub fn render<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

pub fn texts<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens.iter().map(|t| t.as_ref().to_string()).collect()
}

/// Splits a single-space rendering back into lexemes. Spaces inside string
/// and character literals do not split.
pub fn split_rendered(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for ch in text.chars() {
        match quote {
            Some(q) => {
                cur.push(ch);
                if escaped {
                    escaped = false;
                } else if ch == '\\' {
                    escaped = true;
                } else if ch == q {
                    quote = None;
                }
            }
            None if ch == ' ' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            None => {
                if ch == '"' || ch == '\'' {
                    quote = Some(ch);
                }
                cur.push(ch);
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "text", rename_all = "lowercase")]
pub enum EditOp {
    Keep(String),
    Delete(String),
    Insert(String),
}

impl EditOp {
    pub fn is_keep(&self) -> bool {
        matches!(self, EditOp::Keep(_))
    }

    pub fn text(&self) -> &str {
        match self {
            EditOp::Keep(t) | EditOp::Delete(t) | EditOp::Insert(t) => t,
        }
    }
}

/// Minimal keep/delete/insert script turning `a` into `b` (unit costs).
///
/// Matching heads are always kept; otherwise a deletion is preferred over an
/// insertion whenever both reach the optimum.
pub fn token_diff<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> Vec<EditOp> {
    let (n, m) = (a.len(), b.len());
    let eq = |i: usize, j: usize| a[i].as_ref() == b[j].as_ref();
    // cost[i][j] = edits needed for a[i..] -> b[j..]
    let w = m + 1;
    let mut cost = vec![0u32; (n + 1) * w];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            cost[i * w + j] = if i == n {
                (m - j) as u32
            } else if j == m {
                (n - i) as u32
            } else if eq(i, j) {
                cost[(i + 1) * w + j + 1]
            } else {
                1 + cost[(i + 1) * w + j].min(cost[i * w + j + 1])
            };
        }
    }
    let mut script = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && eq(i, j) {
            script.push(EditOp::Keep(a[i].as_ref().to_string()));
            i += 1;
            j += 1;
        } else if i < n && (j == m || cost[i * w + j] == 1 + cost[(i + 1) * w + j]) {
            script.push(EditOp::Delete(a[i].as_ref().to_string()));
            i += 1;
        } else {
            script.push(EditOp::Insert(b[j].as_ref().to_string()));
            j += 1;
        }
    }
    script
}

/// Number of non-keep operations.
pub fn edit_cost(script: &[EditOp]) -> usize {
    script.iter().filter(|op| !op.is_keep()).count()
}

/// Replays `script` over `a`. `None` if the script does not fit `a`.
pub fn apply_script<S: AsRef<str>>(a: &[S], script: &[EditOp]) -> Option<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    for op in script {
        match op {
            EditOp::Keep(t) => {
                if a.get(i)?.as_ref() != t {
                    return None;
                }
                out.push(t.clone());
                i += 1;
            }
            EditOp::Delete(t) => {
                if a.get(i)?.as_ref() != t {
                    return None;
                }
                i += 1;
            }
            EditOp::Insert(t) => out.push(t.clone()),
        }
    }
    (i == a.len()).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn classes(src: &str) -> Vec<(String, SyntaxClass)> {
        tokenize_java(src)
            .unwrap()
            .into_iter()
            .map(|t| (t.text, t.class))
            .collect()
    }

    fn pairs(spec: &[(&str, SyntaxClass)]) -> Vec<(String, SyntaxClass)> {
        spec.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    use SyntaxClass::*;

    #[test]
    fn local_declaration() {
        assert_eq!(
            classes("int x = 3;"),
            pairs(&[("int", Other), ("x", Variable), ("=", Other), ("3", NumLit), (";", Other)])
        );
    }

    #[test]
    fn empty_source() {
        assert!(tokenize_java("").unwrap().is_empty());
        assert!(tokenize_java("  \n\t ").unwrap().is_empty());
    }

    #[test]
    fn bare_call_expression() {
        assert_eq!(
            classes("foo.bar()"),
            pairs(&[("foo", Variable), (".", Other), ("bar", Method), ("(", Other), (")", Other)])
        );
    }

    #[test]
    fn types_generics_annotations_literals() {
        let src = "class A { @Override public <T> List<T> f(Map<String, T> m) { \
                   String s = \"a b\"; char c = 'x'; return new ArrayList<>(m.values()).get(0x1F); } }";
        let got = classes(src);
        let find = |text: &str| got.iter().find(|(t, _)| t == text).map(|(_, c)| *c);
        assert_eq!(find("A"), Some(Type));
        assert_eq!(find("Override"), Some(Type));
        assert_eq!(find("T"), Some(Type));
        assert_eq!(find("List"), Some(Type));
        assert_eq!(find("Map"), Some(Type));
        assert_eq!(find("f"), Some(Method));
        assert_eq!(find("values"), Some(Method));
        assert_eq!(find("get"), Some(Method));
        assert_eq!(find("m"), Some(Variable));
        assert_eq!(find("\"a b\""), Some(StringLit));
        assert_eq!(find("'x'"), Some(StringLit));
        assert_eq!(find("0x1F"), Some(NumLit));
        assert_eq!(find("public"), Some(Other));
        assert_eq!(find("@"), Some(Other));
        assert_eq!(find("<"), Some(Other));
    }

    #[test]
    fn method_references_and_constructors() {
        let got = classes("class A { A() { super(); list.forEach(System.out::println); } }");
        let find = |text: &str| got.iter().filter(|(t, _)| t == text).map(|(_, c)| *c).collect::<Vec<_>>();
        assert_eq!(find("A"), vec![Type, Method]);
        assert_eq!(find("println"), vec![Method]);
        assert_eq!(find("super"), vec![Other]);
    }

    #[test]
    fn comments_are_not_tokens() {
        let got = classes("int /* note */ x = 1; // trailing");
        assert_eq!(got.len(), 5);
    }

    #[test]
    fn token_positions_match_source() {
        let src = "class A {\n  void f() { return; }\n}";
        for t in tokenize_java(src).unwrap() {
            assert_eq!(&src[t.byte_start..t.byte_end], t.text);
        }
        let toks = tokenize_java(src).unwrap();
        let f = toks.iter().find(|t| t.text == "f").unwrap();
        assert_eq!((f.line, f.col), (2, 8));
        assert!(toks.windows(2).all(|w| w[0].byte_end <= w[1].byte_start));
    }

    #[test]
    fn parse_errors_and_unknown_grammar() {
        assert!(matches!(tokenize_java("class {{{ ]"), Err(SyntaxError::Parse { .. })));
        assert_eq!(
            "cobol".parse::<Grammar>(),
            Err(SyntaxError::UnknownGrammar("cobol".into()))
        );
        assert_eq!("Java".parse::<Grammar>(), Ok(Grammar::Java));
    }

    #[test]
    fn extract_single_small_method() {
        let ms = extract_methods("void f() { }").unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].token_count, 6);
        assert_eq!(ms[0].bucket, Bucket::Small);
        assert_eq!(ms[0].name, "f");
    }

    #[test]
    fn extract_nested_anonymous_and_constructors() {
        let src = r#"
package com.acme;
class Outer {
    Outer(int x) { this.x = x; }
    static class Inner { int g(String s, int... xs) { return 1; } }
    Runnable r() {
        return new Runnable() { public void run() { go(); } };
    }
    void lam() { Runnable q = () -> go(); }
}"#;
        let ms = extract_methods(src).unwrap();
        let names: Vec<&str> = ms.iter().map(|m| m.qualified_name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "com.acme.Outer.Outer(int)",
                "com.acme.Outer.Inner.g(String,int...)",
                "com.acme.Outer.r()",
                "com.acme.Outer.r().<anon>.run()",
                "com.acme.Outer.lam()",
            ]
        );
        for m in &ms {
            assert_eq!(m.token_count, m.tokens.len());
        }
    }

    #[test]
    fn broken_method_is_skipped() {
        let src = "class A { void ok() { return; } void bad() { int = ; } }";
        let ms = extract_methods(src).unwrap();
        assert_eq!(ms.iter().map(|m| m.name.as_str()).collect::<Vec<_>>(), vec!["ok"]);
    }

    #[test]
    fn error_outside_methods_fails_file() {
        assert!(extract_methods("class A { int = ; void ok() { } }").is_err());
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(Bucket::from_count(49), Bucket::Small);
        assert_eq!(Bucket::from_count(50), Bucket::Medium);
        assert_eq!(Bucket::from_count(100), Bucket::Medium);
        assert_eq!(Bucket::from_count(101), Bucket::Oversize);
    }

    #[test]
    fn normalize_ignores_layout() {
        let a = extract_methods("int f(int x) {\n\t/* note */\n\treturn x;\n}").unwrap();
        let b = extract_methods("int f(int x) { return x; }").unwrap();
        assert_eq!(texts(&normalize(&a[0])), texts(&normalize(&b[0])));
        let once = normalize(&a[0]);
        let m = MethodUnit::new("f".into(), "f(int)".into(), once.clone());
        assert_eq!(normalize(&m), once);
        assert!(!texts(&once).iter().any(|t| t.contains("note")));
    }

    #[test]
    fn split_rendered_keeps_literals() {
        let toks = vec!["s", "=", "\"a b \\\" c\"", "+", "' '", ";"];
        assert_eq!(split_rendered(&render(&toks)), texts(&toks));
    }

    #[test]
    fn diff_examples() {
        assert_eq!(
            token_diff(&["x", "y"], &["x", "y"]),
            vec![EditOp::Keep("x".into()), EditOp::Keep("y".into())]
        );
        assert_eq!(
            token_diff(&["a", "b", "c"], &["a", "c"]),
            vec![EditOp::Keep("a".into()), EditOp::Delete("b".into()), EditOp::Keep("c".into())]
        );
        assert_eq!(
            token_diff(&["p", "q"], &["q", "r"]),
            vec![EditOp::Delete("p".into()), EditOp::Keep("q".into()), EditOp::Insert("r".into())]
        );
        let empty: [&str; 0] = [];
        assert!(token_diff(&empty, &empty).is_empty());
    }

    #[test]
    fn diff_prefers_delete_on_ties() {
        assert_eq!(
            token_diff(&["a"], &["b"]),
            vec![EditOp::Delete("a".into()), EditOp::Insert("b".into())]
        );
    }

    /// Smallest cost of any keep/delete/insert script, by exhaustive search.
    fn brute_min_cost(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8]) -> usize {
            match (a.split_first(), b.split_first()) {
                (None, _) => b.len(),
                (_, None) => a.len(),
                (Some((x, ar)), Some((y, br))) => {
                    let keep = if x == y { go(ar, br) } else { usize::MAX };
                    keep.min(1 + go(ar, b)).min(1 + go(a, br))
                }
            }
        }
        go(a, b)
    }

    proptest! {
        #[test]
        fn bucket_thresholds(n in 1usize..150) {
            let expected = if n < 50 { Bucket::Small } else if n <= 100 { Bucket::Medium } else { Bucket::Oversize };
            prop_assert_eq!(Bucket::from_count(n), expected);
        }

        #[test]
        fn diff_is_minimal_and_applies(a in proptest::collection::vec(0u8..3, 0..=6),
                                       b in proptest::collection::vec(0u8..3, 0..=6)) {
            let sa: Vec<String> = a.iter().map(|x| x.to_string()).collect();
            let sb: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            let script = token_diff(&sa, &sb);
            prop_assert_eq!(apply_script(&sa, &script), Some(sb.clone()));
            prop_assert_eq!(edit_cost(&script), brute_min_cost(&a, &b));
        }

        #[test]
        fn diff_of_identical_is_all_keeps(a in proptest::collection::vec("[a-c]{1,2}", 0..20)) {
            prop_assert!(token_diff(&a, &a).iter().all(EditOp::is_keep));
        }
    }
}
