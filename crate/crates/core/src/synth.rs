//! Deterministic synthetic Java: source trees for ingestion and bug-fix
//! commits with known mutations. Used as a fixture corpus and by the demo
//! pipeline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommitRecord, FileDiff};

const TYPES: [&str; 8] = ["Widget", "Order", "Account", "Buffer", "Node", "Session", "Config", "Entry"];
const VARS: [&str; 10] = ["count", "total", "index", "value", "item", "name", "size", "offset", "result", "limit"];
const VERBS: [&str; 12] = [
    "compute", "update", "reset", "load", "apply", "check", "merge", "flush", "parse", "render", "scan", "visit",
];
const NOUNS: [&str; 8] = ["Total", "State", "Cache", "Index", "Range", "Value", "Header", "Limit"];
const MESSAGES: [&str; 6] = ["starting", "done", "retry", "skipped", "empty input", "overflow"];
const VISIBILITY: [&str; 3] = ["public", "private", "protected"];

/// The kind of defect injected into a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// The buggy side carries a spurious statement.
    ExtraStatement,
    VisibilitySwap,
    MissingNative,
    OperatorChange,
    MissingNullCheck,
    /// The buggy side discards a call's return value.
    MissingAssignment,
}

impl Mutation {
    pub const ALL: [Mutation; 6] = [
        Mutation::ExtraStatement,
        Mutation::VisibilitySwap,
        Mutation::MissingNative,
        Mutation::OperatorChange,
        Mutation::MissingNullCheck,
        Mutation::MissingAssignment,
    ];
}

/// A method in two versions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodVariant {
    pub buggy: String,
    pub fixed: String,
    pub mutation: Mutation,
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs.choose(&mut self.rng).copied().expect("non-empty pool")
    }

    fn num(&mut self) -> u32 {
        self.rng.gen_range(0..100)
    }

    fn statement(&mut self, vars: &[&str]) -> String {
        let v = self.pick(vars);
        let w = self.pick(vars);
        match self.rng.gen_range(0..6) {
            0 => format!("{v} = {w} + {};", self.num()),
            1 => format!("{v} = {}({w});", self.pick(&VERBS)),
            2 => format!("if ({v} > {}) {{ {w} = {v}; }}", self.num()),
            3 => format!("log.info(\"{}\");", self.pick(&MESSAGES)),
            4 => format!("this.{v} = {w};"),
            _ => format!("for (int i = 0; i < {v}; i++) {{ {w} += i; }}"),
        }
    }

    /// Method with `int` return, an object parameter `p` and int locals.
    /// Returns (visibility, parameter list, body statements, local names).
    fn method_parts(&mut self, stmts: usize) -> (String, String, Vec<String>, Vec<&'static str>) {
        let vis = self.pick(&VISIBILITY).to_string();
        let ty = self.pick(&TYPES);
        let mut vars: Vec<&'static str> = VARS.to_vec();
        vars.shuffle(&mut self.rng);
        vars.truncate(3);
        let params = format!("{ty} p, int {}", vars[0]);
        let mut body = vec![format!("int {} = 0;", vars[1]), format!("int {} = {};", vars[2], self.num())];
        for _ in 0..stmts {
            body.push(self.statement(&vars));
        }
        (vis, params, body, vars)
    }

    fn variant(&mut self, name: &str, mutation: Mutation, stmts: usize) -> MethodVariant {
        let (vis, params, body, vars) = self.method_parts(stmts);
        let ret = format!("return {};", vars[1]);
        let render = |vis: &str, body: &[String]| {
            format!("    {vis} int {name}({params}) {{\n        {}\n        {ret}\n    }}\n", body.join("\n        "))
        };
        let (buggy, fixed) = match mutation {
            Mutation::ExtraStatement => {
                let mut b = body.clone();
                let at = self.rng.gen_range(0..=b.len());
                b.insert(at, format!("{} = {};", vars[1], self.num()));
                (render(&vis, &b), render(&vis, &body))
            }
            Mutation::VisibilitySwap => {
                let other = VISIBILITY.iter().copied().filter(|v| *v != vis).collect::<Vec<_>>();
                let wrong = self.pick(&other);
                (render(wrong, &body), render(&vis, &body))
            }
            Mutation::MissingNative => (
                format!("    {vis} int {name}({params});\n"),
                format!("    {vis} native int {name}({params});\n"),
            ),
            Mutation::OperatorChange => {
                let mut b = body.clone();
                b.push(format!("if ({} < {}) {{ {} = {}; }}", vars[1], vars[2], vars[1], vars[2]));
                let mut f = body.clone();
                f.push(format!("if ({} <= {}) {{ {} = {}; }}", vars[1], vars[2], vars[1], vars[2]));
                (render(&vis, &b), render(&vis, &f))
            }
            Mutation::MissingNullCheck => {
                let mut f = body.clone();
                f.insert(0, "if (p == null) { return 0; }".to_string());
                (render(&vis, &body), render(&vis, &f))
            }
            Mutation::MissingAssignment => {
                let call = format!("{}(p)", self.pick(&VERBS));
                let mut b = body.clone();
                b.push(format!("{call};"));
                let mut f = body.clone();
                f.push(format!("{} = {call};", vars[1]));
                (render(&vis, &b), render(&vis, &f))
            }
        };
        MethodVariant { buggy, fixed, mutation }
    }

    fn plain_method(&mut self, name: &str, stmts: usize) -> String {
        let (vis, params, body, vars) = self.method_parts(stmts);
        format!(
            "    {vis} int {name}({params}) {{\n        {}\n        return {};\n    }}\n",
            body.join("\n        "),
            vars[1]
        )
    }

    fn method_names(&mut self, n: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(n);
        for k in 0..n {
            names.push(format!("{}{}{k}", self.pick(&VERBS), self.pick(&NOUNS)));
        }
        names
    }
}

fn wrap_class(package: &str, class: &str, methods: &[String]) -> String {
    format!(
        "package {package};\n\nimport java.util.logging.Logger;\n\npublic class {class} {{\n    private static final Logger log = Logger.getLogger(\"{class}\");\n\n{}}}\n",
        methods.join("\n")
    )
}

/// Sizes of generated methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthShape {
    pub methods_per_file: usize,
    pub min_statements: usize,
    pub max_statements: usize,
}

impl Default for SynthShape {
    fn default() -> Self {
        SynthShape {
            methods_per_file: 3,
            min_statements: 1,
            max_statements: 4,
        }
    }
}

/// `count` commits. Every fourth commit has a non-fix message and a
/// refactoring-only change; the rest fix exactly one method, cycling through
/// [`Mutation::ALL`].
pub fn synth_commits(seed: u64, count: usize, shape: SynthShape) -> Vec<CommitRecord> {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let class = format!("{}{c}", g.pick(&TYPES));
        let package = format!("org.synth.m{}", c % 7);
        let names = g.method_names(shape.methods_per_file.max(1));
        let target = g.rng.gen_range(0..names.len());
        let bugfix = c % 4 != 3;
        let mutation = Mutation::ALL[(c - c / 4) % Mutation::ALL.len()];
        let mut before = Vec::new();
        let mut after = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let stmts = g.rng.gen_range(shape.min_statements..=shape.max_statements);
            if i == target && bugfix {
                let v = g.variant(name, mutation, stmts);
                before.push(v.buggy);
                after.push(v.fixed);
            } else {
                let m = g.plain_method(name, stmts);
                before.push(m.clone());
                after.push(m);
            }
        }
        let message = if bugfix {
            format!("Fix {} in {class}.{}", describe(mutation), names[target])
        } else {
            format!("Reformat {class}")
        };
        let path = format!("src/{}/{class}.java", package.replace('.', "/"));
        let before_text = wrap_class(&package, &class, &before);
        let after_text = if bugfix {
            wrap_class(&package, &class, &after)
        } else {
            format!("{before_text}\n")
        };
        out.push(CommitRecord {
            message,
            file_diffs: vec![FileDiff {
                path,
                before: before_text,
                after: after_text,
            }],
        });
    }
    out
}

fn describe(m: Mutation) -> &'static str {
    match m {
        Mutation::ExtraStatement => "stray assignment",
        Mutation::VisibilitySwap => "wrong visibility",
        Mutation::MissingNative => "missing native modifier",
        Mutation::OperatorChange => "off-by-one comparison",
        Mutation::MissingNullCheck => "null dereference",
        Mutation::MissingAssignment => "ignored return value",
    }
}

/// One file of a synthetic source tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFile {
    pub repo: String,
    pub path: String,
    pub content: String,
}

const LICENSE: &str = "/*\n * Copyright (c) 2019 Synth Authors\n * Licensed under the Apache License, Version 2.0\n */\n";

/// A source tree over `repos` repositories. Besides ordinary classes it
/// contains licensed files, cross-repository copies, a generated file, a
/// minified file and a data-like file, so every filter fires at least once.
pub fn synth_source_tree(seed: u64, repos: usize, files_per_repo: usize, shape: SynthShape) -> Vec<SynthFile> {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut out = Vec::new();
    for r in 0..repos {
        let repo = format!("repo{r:02}");
        for f in 0..files_per_repo {
            let class = format!("{}{r}x{f}", g.pick(&TYPES));
            let package = format!("org.synth.r{r}");
            let names = g.method_names(shape.methods_per_file.max(1));
            let methods: Vec<String> = names
                .iter()
                .map(|n| {
                    let stmts = g.rng.gen_range(shape.min_statements..=shape.max_statements);
                    g.plain_method(n, stmts)
                })
                .collect();
            let mut content = wrap_class(&package, &class, &methods);
            if g.rng.gen_bool(0.3) {
                content = format!("{LICENSE}{content}");
            }
            out.push(SynthFile {
                repo: repo.clone(),
                path: format!("src/{class}.java"),
                content,
            });
        }
    }
    if let Some(first) = out.first().cloned() {
        out.push(SynthFile {
            repo: format!("repo{repos:02}"),
            path: "vendor/Copied.java".to_string(),
            content: first.content,
        });
        out.push(SynthFile {
            repo: first.repo.clone(),
            path: "gen/Stub.java".to_string(),
            content: "// Generated by protoc. DO NOT EDIT.\npackage gen;\n\npublic class Stub {}\n".to_string(),
        });
        out.push(SynthFile {
            repo: first.repo.clone(),
            path: "min/Packed.java".to_string(),
            content: format!("public class Packed {{ int[] a = {{{}}}; }}\n", vec!["1"; 3000].join(",")),
        });
        let rows: Vec<String> = (0..200).map(|i| format!("        \"entry-{i}-aaaaaaaaaaaaaaaa\",")).collect();
        out.push(SynthFile {
            repo: first.repo,
            path: "data/Table.java".to_string(),
            content: format!("public class Table {{\n    String[] rows = {{\n{}\n    }};\n}}\n", rows.join("\n")),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::mine_pairs;
    use crate::eval::{classify_fix, FixCategory};
    use crate::syntax::{extract_methods, normalize, texts};

    #[test]
    fn deterministic() {
        assert_eq!(synth_commits(3, 20, SynthShape::default()), synth_commits(3, 20, SynthShape::default()));
        assert_ne!(synth_commits(3, 5, SynthShape::default()), synth_commits(4, 5, SynthShape::default()));
    }

    #[test]
    fn commits_parse_and_mine_one_pair_each() {
        let commits = synth_commits(11, 48, SynthShape::default());
        for c in &commits {
            for d in &c.file_diffs {
                extract_methods(&d.before).unwrap();
                extract_methods(&d.after).unwrap();
            }
        }
        let pairs = mine_pairs(&commits);
        assert_eq!(pairs.len(), 36);
        let mut seen = std::collections::HashSet::new();
        for p in &pairs {
            let b = texts(&normalize(&p.buggy));
            let f = texts(&normalize(&p.fixed));
            seen.insert(classify_fix(&b, &f).unwrap());
        }
        for cat in [
            FixCategory::DeletionOnly,
            FixCategory::VisibilitySwap,
            FixCategory::NativeInsert,
            FixCategory::OtherConstructive,
        ] {
            assert!(seen.contains(&cat), "{cat:?} missing");
        }
    }

    #[test]
    fn source_tree_parses() {
        let files = synth_source_tree(5, 3, 4, SynthShape::default());
        assert_eq!(files.len(), 3 * 4 + 4);
        for f in files.iter().filter(|f| f.path.starts_with("src/")) {
            assert!(!extract_methods(&f.content).unwrap().is_empty());
        }
    }
}
