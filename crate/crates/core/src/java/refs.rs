//! Syntactic name resolution over the index: types through nesting, imports
//! and packages; fields through lexical nesting, superclasses and static imports.

use std::collections::HashSet;

use super::{ClassRecord, FieldRecord, FieldRef, FileRecord, FunctionRecord, RepoIndex};
use crate::diff::{InvocationKind, InvocationSite};

const MAX_DEPTH: usize = 32;

impl RepoIndex {
    /// Resolves a type name as written in `file` (inside `from_class`, if known).
    pub fn resolve_type(&self, name: &str, file: &FileRecord, from_class: Option<&str>) -> Option<&ClassRecord> {
        let name = super::extract::erase_type(name);
        let name = name.trim_end_matches("[]").trim_end_matches("...");
        if name.is_empty() {
            return None;
        }
        if let Some((head, rest)) = name.split_once('.') {
            if let Some(c) = self.class(name) {
                return Some(c);
            }
            let base = self.resolve_type(head, file, from_class)?;
            return self.class(&format!("{}.{rest}", base.qualified_name));
        }

        let mut scope = from_class.and_then(|c| self.class(c));
        let mut depth = 0;
        while let Some(c) = scope {
            if c.simple_name == name {
                return Some(c);
            }
            if let Some(nested) = self.member_type(&c.qualified_name, name) {
                return Some(nested);
            }
            depth += 1;
            if depth > MAX_DEPTH {
                break;
            }
            scope = c.outer.as_deref().and_then(|o| self.class(o));
        }
        if let Some(c) = self
            .classes
            .iter()
            .find(|c| c.file_path == file.path && c.outer.is_none() && c.simple_name == name)
        {
            return Some(c);
        }
        for imp in file.imports.iter().filter(|i| !i.is_static && !i.wildcard) {
            if imp.path.rsplit('.').next() == Some(name) {
                // An explicit import of an external type shadows everything below.
                return self.class(&imp.path);
            }
        }
        let same_pkg = if file.package.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", file.package)
        };
        if let Some(c) = self.class(&same_pkg) {
            return Some(c);
        }
        file.imports
            .iter()
            .filter(|i| !i.is_static && i.wildcard)
            .find_map(|i| self.class(&format!("{}.{name}", i.path)))
    }

    /// A member type named `name` of `owner` or of its superclasses.
    fn member_type(&self, owner: &str, name: &str) -> Option<&ClassRecord> {
        let mut current = self.class(owner);
        for _ in 0..MAX_DEPTH {
            let c = current?;
            if let Some(found) = self.class(&format!("{}.{name}", c.qualified_name)) {
                return Some(found);
            }
            current = self.superclass_of(c);
        }
        None
    }

    pub fn superclass_of(&self, class: &ClassRecord) -> Option<&ClassRecord> {
        let sup = class.superclass.as_deref()?;
        let file = self.file(&class.file_path)?;
        self.resolve_type(sup, file, class.outer.as_deref())
    }

    /// Finds field `name` declared in `owner` or inherited from its superclasses.
    pub fn resolve_field(&self, owner: &str, name: &str) -> Option<&FieldRecord> {
        let mut current = self.class(owner);
        let mut seen = HashSet::new();
        while let Some(c) = current {
            if !seen.insert(c.qualified_name.as_str()) {
                break;
            }
            if let Some(f) = self.fields.iter().find(|f| f.owner_class == c.qualified_name && f.name == name) {
                return Some(f);
            }
            current = self.superclass_of(c);
        }
        None
    }

    /// Resolves an unqualified field name used inside `func`.
    pub fn resolve_bare_field(&self, func: &FunctionRecord, name: &str) -> Option<&FieldRecord> {
        let mut scope = self.class(&func.enclosing_class);
        let mut depth = 0;
        while let Some(c) = scope {
            if let Some(f) = self.resolve_field(&c.qualified_name, name) {
                return Some(f);
            }
            depth += 1;
            if depth > MAX_DEPTH {
                break;
            }
            scope = c.outer.as_deref().and_then(|o| self.class(o));
        }
        let file = self.file(&func.file_path)?;
        for imp in file.imports.iter().filter(|i| i.is_static) {
            let owner = if imp.wildcard {
                imp.path.as_str()
            } else {
                match imp.path.rsplit_once('.') {
                    Some((owner, member)) if member == name => owner,
                    _ => continue,
                }
            };
            if let Some(f) = self.resolve_field(owner, name) {
                return Some(f);
            }
        }
        None
    }

    /// Resolves a field reference found in `func`'s body.
    pub fn resolve_field_ref(&self, func: &FunctionRecord, r: &FieldRef) -> Option<&FieldRecord> {
        match r {
            FieldRef::Bare { name } => self.resolve_bare_field(func, name),
            FieldRef::Qualified { qualifier, name } => {
                let qualifier: String = qualifier.split_whitespace().collect();
                match qualifier.as_str() {
                    "this" => self.resolve_field(&func.enclosing_class, name),
                    "super" => {
                        let sup = self.superclass_of(self.class(&func.enclosing_class)?)?;
                        self.resolve_field(&sup.qualified_name, name)
                    }
                    q if q.contains(['(', ')', '[', '"']) => None,
                    q => {
                        let owner = self.qualifier_type(func, q)?;
                        self.resolve_field(&owner.qualified_name, name)
                    }
                }
            }
        }
    }

    /// Class denoted by a qualifier: a local's type, a field's type, or a type name.
    fn qualifier_type(&self, func: &FunctionRecord, q: &str) -> Option<&ClassRecord> {
        let file = self.file(&func.file_path)?;
        if !q.contains('.') {
            if let Some(ty) = func.local_type(q) {
                return self.resolve_type(ty, file, Some(&func.enclosing_class));
            }
            if let Some(field) = self.resolve_bare_field(func, q) {
                let ffile = self.file(&field.file_path)?;
                return self.resolve_type(&field.type_name, ffile, Some(&field.owner_class));
            }
        }
        self.resolve_type(q, file, Some(&func.enclosing_class))
    }

    /// Non-test functions whose bodies reference `field`.
    pub fn find_field_references(&self, field: &FieldRecord) -> Vec<&FunctionRecord> {
        self.non_test_functions()
            .filter(|f| {
                f.referenced_fields.iter().any(|r| {
                    r.name() == field.name
                        && self
                            .resolve_field_ref(f, r)
                            .is_some_and(|hit| hit.owner_class == field.owner_class && hit.name == field.name)
                })
            })
            .collect()
    }

    /// In-repo class targeted by a constructor or static call written in `func`.
    pub fn call_target_class(&self, func: Option<&FunctionRecord>, site: &InvocationSite) -> Option<&ClassRecord> {
        let name = match site.kind {
            InvocationKind::ConstructorCall => site.callee_name.as_str(),
            InvocationKind::StaticCall => site.receiver.as_deref()?,
            InvocationKind::MethodCall => return None,
        };
        match func {
            Some(f) => {
                let file = self.file(&f.file_path)?;
                self.resolve_type(name, file, Some(&f.enclosing_class))
            }
            None => self.unique_class(name),
        }
    }

    /// A class resolvable by qualified name or by a unique simple name.
    pub fn unique_class(&self, name: &str) -> Option<&ClassRecord> {
        if let Some(c) = self.class(name) {
            return Some(c);
        }
        let last = name.rsplit('.').next().unwrap_or(name);
        let mut it = self.classes.iter().filter(|c| c.simple_name == last);
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }

    /// Non-test functions containing at least one call satisfying `pred`.
    pub fn functions_with_call(&self, pred: impl Fn(&InvocationSite) -> bool) -> Vec<&FunctionRecord> {
        self.non_test_functions()
            .filter(|f| f.invocations.iter().any(|c| pred(&c.site)))
            .collect()
    }

    /// Non-test functions containing a call to a method `name` with `arity` arguments.
    pub fn functions_invoking(&self, name: &str, arity: usize) -> Vec<&FunctionRecord> {
        self.functions_with_call(|s| {
            s.kind != InvocationKind::ConstructorCall && s.callee_name == name && s.args.len() == arity
        })
    }

    /// Non-test functions that construct `class_name` or call static methods on it.
    /// `class_name` is matched by its last dotted segment.
    pub fn functions_using_class(&self, class_name: &str) -> Vec<&FunctionRecord> {
        let simple = class_name.rsplit('.').next().unwrap_or(class_name);
        self.functions_with_call(|s| s.kind != InvocationKind::MethodCall && s.target_class() == Some(simple))
    }
}
