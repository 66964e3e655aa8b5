//! Per-file extraction of classes, fields and functions from a tree-sitter parse.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use tree_sitter::{Node, Parser};

use super::{
    is_test_file, CallSite, ClassRecord, FieldRecord, FieldRef, FileRecord, FunctionKind,
    FunctionRecord, Import, LocalVar, Span,
};
use crate::diff::{InvocationKind, InvocationSite};

pub(crate) struct Extracted {
    pub file: FileRecord,
    pub classes: Vec<ClassRecord>,
    pub fields: Vec<FieldRecord>,
    pub functions: Vec<FunctionRecord>,
}

pub(crate) fn new_parser() -> Parser {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_java::LANGUAGE.into())
        .expect("bundled Java grammar is compatible");
    parser
}

const TYPE_DECLS: &[&str] = &[
    "class_declaration",
    "interface_declaration",
    "enum_declaration",
    "record_declaration",
    "annotation_type_declaration",
];

static ANNOTATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"@[\w$.]+(\s*\([^)]*\))?").unwrap());

/// Drops annotations, generic arguments and whitespace from a type.
pub(crate) fn erase_type(t: &str) -> String {
    let t = ANNOTATION.replace_all(t, "");
    let mut out = String::new();
    let mut depth = 0usize;
    for c in t.chars() {
        match c {
            '<' => depth += 1,
            '>' => depth = depth.saturating_sub(1),
            _ if depth == 0 && !c.is_whitespace() => out.push(c),
            _ => {}
        }
    }
    out
}

/// Returns `None` when the file does not parse cleanly.
pub(crate) fn extract(parser: &mut Parser, path: &str, src: &str) -> Option<Extracted> {
    let tree = parser.parse(src, None)?;
    let root = tree.root_node();
    if root.has_error() {
        return None;
    }
    let mut ex = Extractor {
        src,
        lines: src.lines().collect(),
        path,
        package: String::new(),
        is_test: is_test_file(path),
        classes: Vec::new(),
        fields: Vec::new(),
        functions: Vec::new(),
    };
    let mut imports = Vec::new();
    let mut cursor = root.walk();
    for child in root.named_children(&mut cursor) {
        match child.kind() {
            "package_declaration" => {
                if let Some(n) = child.named_child(0) {
                    ex.package = ex.text(n).to_string();
                }
            }
            "import_declaration" => imports.push(parse_import(&ex, child)),
            k if TYPE_DECLS.contains(&k) => ex.visit_type(child, None),
            _ => {}
        }
    }
    Some(Extracted {
        file: FileRecord {
            path: path.to_string(),
            package: ex.package.clone(),
            imports,
            is_test: ex.is_test,
        },
        classes: ex.classes,
        fields: ex.fields,
        functions: ex.functions,
    })
}

fn parse_import(ex: &Extractor, node: Node) -> Import {
    let mut cursor = node.walk();
    let mut is_static = false;
    let mut wildcard = false;
    let mut path = String::new();
    for c in node.children(&mut cursor) {
        match c.kind() {
            "static" => is_static = true,
            "asterisk" => wildcard = true,
            "scoped_identifier" | "identifier" => path = ex.text(c).to_string(),
            _ => {}
        }
    }
    Import { path, is_static, wildcard }
}

fn span_of(node: Node) -> Span {
    Span::new(node.start_position().row as u32 + 1, node.end_position().row as u32 + 1)
}

fn has_modifier(node: Node, keyword: &str) -> bool {
    let mut cursor = node.walk();
    let found = node
        .named_children(&mut cursor)
        .filter(|c| c.kind() == "modifiers")
        .any(|m| {
            let mut c2 = m.walk();
            let hit = m.children(&mut c2).any(|k| k.kind() == keyword);
            hit
        });
    found
}

fn is_type_like(name: &str) -> bool {
    name.chars().next().is_some_and(char::is_uppercase) && name.chars().any(char::is_lowercase)
}

struct Extractor<'a> {
    src: &'a str,
    lines: Vec<&'a str>,
    path: &'a str,
    package: String,
    is_test: bool,
    classes: Vec<ClassRecord>,
    fields: Vec<FieldRecord>,
    functions: Vec<FunctionRecord>,
}

#[derive(Default)]
struct BodyFacts {
    invocations: Vec<CallSite>,
    refs: BTreeSet<FieldRef>,
    locals: Vec<LocalVar>,
    assigned: BTreeSet<String>,
}

impl<'a> Extractor<'a> {
    fn text(&self, node: Node) -> &'a str {
        &self.src[node.byte_range()]
    }

    fn line_text(&self, node: Node) -> String {
        self.lines
            .get(node.start_position().row)
            .map(|l| l.trim().to_string())
            .unwrap_or_default()
    }

    fn visit_type(&mut self, node: Node, outer: Option<&str>) {
        let Some(name_node) = node.child_by_field_name("name") else {
            return;
        };
        let simple = self.text(name_node).to_string();
        let qname = match outer {
            Some(o) => format!("{o}.{simple}"),
            None if self.package.is_empty() => simple.clone(),
            None => format!("{}.{simple}", self.package),
        };
        let superclass = node
            .child_by_field_name("superclass")
            .and_then(|s| s.named_child(0))
            .map(|t| erase_type(self.text(t)));
        self.classes.push(ClassRecord {
            qualified_name: qname.clone(),
            simple_name: simple.clone(),
            package: self.package.clone(),
            file_path: self.path.to_string(),
            superclass,
            outer: outer.map(str::to_string),
            span: span_of(node),
        });
        let implicit_static = matches!(node.kind(), "interface_declaration" | "annotation_type_declaration");

        if node.kind() == "record_declaration" {
            if let Some(params) = node.child_by_field_name("parameters") {
                let mut cursor = params.walk();
                for p in params.named_children(&mut cursor) {
                    if let (Some(t), Some(n)) = (p.child_by_field_name("type"), p.child_by_field_name("name")) {
                        self.fields.push(FieldRecord {
                            owner_class: qname.clone(),
                            name: self.text(n).to_string(),
                            type_name: erase_type(self.text(t)),
                            is_static: false,
                            declared_in_static_initializer: false,
                            has_initializer: false,
                            file_path: self.path.to_string(),
                            span: span_of(p),
                        });
                    }
                }
            }
        }

        let Some(body) = node.child_by_field_name("body") else {
            return;
        };
        let mut members: Vec<Node> = Vec::new();
        let mut cursor = body.walk();
        for child in body.named_children(&mut cursor) {
            if child.kind() == "enum_body_declarations" {
                let mut c2 = child.walk();
                members.extend(child.named_children(&mut c2));
            } else {
                members.push(child);
            }
        }

        let mut static_regions: Vec<Node> = Vec::new();
        let mut instance_regions: Vec<Node> = Vec::new();
        let first_field = self.fields.len();
        for m in members {
            match m.kind() {
                "method_declaration" | "annotation_type_element_declaration" => {
                    self.method(m, &qname, FunctionKind::Method)
                }
                "constructor_declaration" | "compact_constructor_declaration" => {
                    self.method(m, &qname, FunctionKind::Constructor)
                }
                "static_initializer" => static_regions.push(m),
                "block" => instance_regions.push(m),
                "field_declaration" | "constant_declaration" => {
                    let is_static = implicit_static || has_modifier(m, "static");
                    let type_name = m
                        .child_by_field_name("type")
                        .map(|t| erase_type(self.text(t)))
                        .unwrap_or_default();
                    let mut any_init = false;
                    let mut c2 = m.walk();
                    for d in m.children_by_field_name("declarator", &mut c2) {
                        let Some(n) = d.child_by_field_name("name") else { continue };
                        let has_init = d.child_by_field_name("value").is_some();
                        any_init |= has_init;
                        let dims = d
                            .child_by_field_name("dimensions")
                            .map(|x| erase_type(self.text(x)))
                            .unwrap_or_default();
                        self.fields.push(FieldRecord {
                            owner_class: qname.clone(),
                            name: self.text(n).to_string(),
                            type_name: format!("{type_name}{dims}"),
                            is_static,
                            declared_in_static_initializer: is_static && has_init,
                            has_initializer: has_init,
                            file_path: self.path.to_string(),
                            span: span_of(m),
                        });
                    }
                    if any_init {
                        if is_static {
                            static_regions.push(m);
                        } else {
                            instance_regions.push(m);
                        }
                    }
                }
                "enum_constant" => {
                    if let Some(n) = m.child_by_field_name("name") {
                        self.fields.push(FieldRecord {
                            owner_class: qname.clone(),
                            name: self.text(n).to_string(),
                            type_name: simple.clone(),
                            is_static: true,
                            declared_in_static_initializer: true,
                            has_initializer: true,
                            file_path: self.path.to_string(),
                            span: span_of(m),
                        });
                        static_regions.push(m);
                    }
                }
                k if TYPE_DECLS.contains(&k) => self.visit_type(m, Some(&qname)),
                _ => {}
            }
        }

        if !static_regions.is_empty() {
            let f = self.initializer(&qname, FunctionKind::StaticInit, &static_regions);
            for field in &mut self.fields[first_field..] {
                if field.owner_class == qname && field.is_static && f.referenced_fields_assigned(&field.name) {
                    field.declared_in_static_initializer = true;
                }
            }
            self.functions.push(f.record);
        }
        if !instance_regions.is_empty() {
            let f = self.initializer(&qname, FunctionKind::InstanceInit, &instance_regions);
            self.functions.push(f.record);
        }
    }

    fn method(&mut self, node: Node, class: &str, kind: FunctionKind) {
        let class_simple = class.rsplit('.').next().unwrap_or(class).to_string();
        let simple_name = match kind {
            FunctionKind::Constructor => class_simple,
            _ => node
                .child_by_field_name("name")
                .map(|n| self.text(n).to_string())
                .unwrap_or_default(),
        };
        let mut facts = BodyFacts::default();
        let mut param_types = Vec::new();
        if let Some(params) = node.child_by_field_name("parameters") {
            let mut cursor = params.walk();
            for p in params.named_children(&mut cursor) {
                match p.kind() {
                    "formal_parameter" => {
                        let ty = p
                            .child_by_field_name("type")
                            .map(|t| erase_type(self.text(t)))
                            .unwrap_or_default();
                        let dims = p
                            .child_by_field_name("dimensions")
                            .map(|d| erase_type(self.text(d)))
                            .unwrap_or_default();
                        let ty = format!("{ty}{dims}");
                        if let Some(n) = p.child_by_field_name("name") {
                            facts.locals.push(LocalVar { name: self.text(n).to_string(), type_name: ty.clone() });
                        }
                        param_types.push(ty);
                    }
                    "spread_parameter" => {
                        let mut c2 = p.walk();
                        let mut ty = String::new();
                        let mut name = None;
                        for c in p.named_children(&mut c2) {
                            match c.kind() {
                                "modifiers" => {}
                                "variable_declarator" => name = c.child_by_field_name("name"),
                                _ if ty.is_empty() => ty = erase_type(self.text(c)),
                                _ => {}
                            }
                        }
                        if let Some(n) = name {
                            facts.locals.push(LocalVar { name: self.text(n).to_string(), type_name: format!("{ty}[]") });
                        }
                        param_types.push(format!("{ty}..."));
                    }
                    _ => {}
                }
            }
        } else if kind == FunctionKind::Constructor {
            // Compact record constructor: parameters are the record components.
            if let Some(rec) = node.parent().and_then(|b| b.parent()) {
                if let Some(params) = rec.child_by_field_name("parameters") {
                    let mut cursor = params.walk();
                    for p in params.named_children(&mut cursor) {
                        if let Some(t) = p.child_by_field_name("type") {
                            param_types.push(erase_type(self.text(t)));
                        }
                    }
                }
            }
        }
        if let Some(body) = node.child_by_field_name("body") {
            self.collect(body, &mut facts);
        }
        let qualified_name = format!("{class}#{simple_name}({})", param_types.join(","));
        let span = span_of(node);
        let record = self.finish(
            qualified_name,
            simple_name,
            kind,
            param_types,
            span,
            vec![span],
            self.text(node).to_string(),
            class,
            facts,
        );
        self.functions.push(record);
    }

    fn initializer(&mut self, class: &str, kind: FunctionKind, regions: &[Node]) -> Initializer {
        let mut facts = BodyFacts::default();
        for r in regions {
            self.collect(*r, &mut facts);
        }
        let tag = match kind {
            FunctionKind::StaticInit => "<static-init>",
            _ => "<instance-init>",
        };
        let spans: Vec<Span> = regions.iter().map(|r| span_of(*r)).collect();
        let span = Span::new(
            spans.iter().map(|s| s.start).min().unwrap_or(1),
            spans.iter().map(|s| s.end).max().unwrap_or(1),
        );
        let body = regions.iter().map(|r| self.text(*r)).collect::<Vec<_>>().join("\n");
        let assigned = facts.assigned.clone();
        let record = self.finish(
            format!("{class}.{tag}"),
            tag.to_string(),
            kind,
            Vec::new(),
            span,
            spans,
            body,
            class,
            facts,
        );
        Initializer { record, assigned }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        qualified_name: String,
        simple_name: String,
        kind: FunctionKind,
        param_types: Vec<String>,
        span: Span,
        regions: Vec<Span>,
        body: String,
        class: &str,
        facts: BodyFacts,
    ) -> FunctionRecord {
        let local_names: BTreeSet<&str> = facts.locals.iter().map(|l| l.name.as_str()).collect();
        let referenced_fields = facts
            .refs
            .iter()
            .filter(|r| match r {
                FieldRef::Bare { name } => !local_names.contains(name.as_str()),
                FieldRef::Qualified { .. } => true,
            })
            .cloned()
            .collect();
        FunctionRecord {
            id: qualified_name.clone(),
            qualified_name,
            simple_name,
            kind,
            param_types,
            file_path: self.path.to_string(),
            span,
            regions,
            body,
            is_test: self.is_test,
            invocations: facts.invocations,
            referenced_fields,
            locals: facts.locals,
            enclosing_class: class.to_string(),
        }
    }

    /// Collects calls, field references and locals under `root`.
    fn collect(&self, root: Node, facts: &mut BodyFacts) {
        let mut stack = vec![root];
        let mut order: Vec<Node> = Vec::new();
        while let Some(node) = stack.pop() {
            order.push(node);
            let mut cursor = node.walk();
            let children: Vec<Node> = node.named_children(&mut cursor).collect();
            stack.extend(children.into_iter().rev());
        }
        // Calls are reported in textual order of their callee names.
        let mut keyed: Vec<(usize, CallSite)> = Vec::new();
        for node in order {
            match node.kind() {
                "method_invocation" => {
                    if let Some(site) = self.method_site(node) {
                        let key = node.child_by_field_name("name").map_or(node.start_byte(), |n| n.start_byte());
                        keyed.push((key, CallSite { site, line: node.start_position().row as u32 + 1 }));
                    }
                }
                "object_creation_expression" => {
                    if let Some(t) = node.child_by_field_name("type") {
                        let ty = erase_type(self.text(t));
                        let callee = ty.rsplit('.').next().unwrap_or(&ty).to_string();
                        keyed.push((node.start_byte(), CallSite {
                            site: InvocationSite {
                                callee_name: callee,
                                receiver: None,
                                args: self.args(node),
                                kind: InvocationKind::ConstructorCall,
                                origin_line: self.line_text(node),
                            },
                            line: node.start_position().row as u32 + 1,
                        }));
                    }
                }
                "field_access" => {
                    if let (Some(o), Some(f)) = (node.child_by_field_name("object"), node.child_by_field_name("field")) {
                        facts.refs.insert(FieldRef::Qualified {
                            qualifier: self.text(o).to_string(),
                            name: self.text(f).to_string(),
                        });
                    }
                }
                "identifier" => {
                    if self.is_expression_identifier(node) {
                        facts.refs.insert(FieldRef::Bare { name: self.text(node).to_string() });
                    }
                }
                "assignment_expression" => {
                    if let Some(l) = node.child_by_field_name("left") {
                        let name = match l.kind() {
                            "identifier" => Some(l),
                            "field_access" => l.child_by_field_name("field"),
                            _ => None,
                        };
                        if let Some(n) = name {
                            facts.assigned.insert(self.text(n).to_string());
                        }
                    }
                }
                "local_variable_declaration" | "resource" => {
                    let ty = node
                        .child_by_field_name("type")
                        .map(|t| erase_type(self.text(t)))
                        .unwrap_or_default();
                    if node.kind() == "resource" {
                        if let Some(n) = node.child_by_field_name("name") {
                            facts.locals.push(LocalVar { name: self.text(n).to_string(), type_name: ty.clone() });
                        }
                    }
                    let mut cursor = node.walk();
                    for d in node.children_by_field_name("declarator", &mut cursor) {
                        if let Some(n) = d.child_by_field_name("name") {
                            facts.locals.push(LocalVar { name: self.text(n).to_string(), type_name: ty.clone() });
                        }
                    }
                }
                "enhanced_for_statement" | "formal_parameter" => {
                    if let (Some(t), Some(n)) = (node.child_by_field_name("type"), node.child_by_field_name("name")) {
                        facts.locals.push(LocalVar { name: self.text(n).to_string(), type_name: erase_type(self.text(t)) });
                    }
                }
                "catch_formal_parameter" => {
                    let mut cursor = node.walk();
                    let ty = node
                        .named_children(&mut cursor)
                        .find(|c| c.kind() == "catch_type")
                        .map(|t| erase_type(self.text(t)))
                        .unwrap_or_default();
                    if let Some(n) = node.child_by_field_name("name") {
                        facts.locals.push(LocalVar { name: self.text(n).to_string(), type_name: ty });
                    }
                }
                "lambda_expression" => {
                    if let Some(p) = node.child_by_field_name("parameters") {
                        let mut idents = Vec::new();
                        if p.kind() == "identifier" {
                            idents.push(p);
                        } else if p.kind() == "inferred_parameters" {
                            let mut cursor = p.walk();
                            idents.extend(p.named_children(&mut cursor));
                        }
                        for n in idents {
                            facts.locals.push(LocalVar { name: self.text(n).to_string(), type_name: String::new() });
                        }
                    }
                }
                _ => {}
            }
        }
        keyed.sort_by_key(|(k, _)| *k);
        facts.invocations.extend(keyed.into_iter().map(|(_, c)| c));
    }

    fn method_site(&self, node: Node) -> Option<InvocationSite> {
        let name = self.text(node.child_by_field_name("name")?).to_string();
        let receiver = node.child_by_field_name("object");
        let kind = match receiver {
            Some(o) if matches!(o.kind(), "identifier" | "field_access" | "scoped_identifier") => {
                let text = self.text(o);
                let last = text.rsplit('.').next().unwrap_or(text).trim();
                if is_type_like(last) {
                    InvocationKind::StaticCall
                } else {
                    InvocationKind::MethodCall
                }
            }
            _ => InvocationKind::MethodCall,
        };
        Some(InvocationSite {
            callee_name: name,
            receiver: receiver.map(|o| self.text(o).split_whitespace().collect::<String>()),
            args: self.args(node),
            kind,
            origin_line: self.line_text(node),
        })
    }

    fn args(&self, node: Node) -> Vec<String> {
        let Some(list) = node.child_by_field_name("arguments") else {
            return Vec::new();
        };
        let mut cursor = list.walk();
        let args = list
            .named_children(&mut cursor)
            .filter(|c| !c.is_extra())
            .map(|c| self.text(c).to_string())
            .collect();
        args
    }

    /// True for identifiers used as values rather than declared or called.
    fn is_expression_identifier(&self, node: Node) -> bool {
        let Some(parent) = node.parent() else {
            return false;
        };
        let is_field = |f: &str| parent.child_by_field_name(f) == Some(node);
        match parent.kind() {
            "method_invocation" => is_field("object"),
            "field_access" => is_field("object"),
            "variable_declarator" => !is_field("name"),
            "formal_parameter" | "catch_formal_parameter" | "spread_parameter" | "inferred_parameters"
            | "labeled_statement" | "break_statement" | "continue_statement" | "scoped_identifier"
            | "marker_annotation" | "annotation" | "element_value_pair" | "enum_constant" => false,
            "lambda_expression" => !is_field("parameters"),
            "enhanced_for_statement" | "resource" => !is_field("name"),
            "method_reference" => parent.named_child(0) == Some(node),
            _ => true,
        }
    }
}

struct Initializer {
    record: FunctionRecord,
    assigned: BTreeSet<String>,
}

impl Initializer {
    fn referenced_fields_assigned(&self, name: &str) -> bool {
        self.assigned.contains(name)
    }
}
