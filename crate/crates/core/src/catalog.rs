//! Behavior types, attributes, filters and features.
//!
//! The catalog is the shared vocabulary of the engine: every row, index
//! entry and configuration refers back to ids handed out here. Ids are dense
//! and assigned in registration order, so the same declarations always yield
//! the same ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::value::{AttrKind, Value};

/// Milliseconds per simulated day; predicate revisions are keyed by day.
pub const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorId(pub u16);

/// 16-bit filter id. Zero is the null slot value and is never assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FilterId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureId(pub u32);

impl FilterId {
    pub const NULL: FilterId = FilterId(0);

    pub fn is_null(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for BehaviorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

impl fmt::Display for FilterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttrKind,
    #[serde(rename = "width_bytes")]
    pub width: u16,
}

impl AttributeDef {
    pub fn new(name: impl Into<String>, kind: AttrKind, width: u16) -> Self {
        Self { name: name.into(), kind, width }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorType {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<BehaviorId>,
    pub name: String,
    pub attrs: Vec<AttributeDef>,
}

impl BehaviorType {
    pub fn new(name: impl Into<String>, attrs: Vec<AttributeDef>) -> Self {
        Self { id: None, name: name.into(), attrs }
    }

    pub fn behavior_id(&self) -> BehaviorId {
        self.id.expect("registered behavior carries its id")
    }

    pub fn attr(&self, name: &str) -> Option<&AttributeDef> {
        self.attrs.iter().find(|a| a.name == name)
    }

    /// Position of `name` in canonical (declaration) order.
    pub fn attr_position(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }
}

/// An equality test on one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub attr: String,
    pub value: Value,
}

impl Predicate {
    pub fn new(attr: impl Into<String>, value: Value) -> Self {
        Self { attr: attr.into(), value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<FilterId>,
    pub behavior: BehaviorId,
    #[serde(default)]
    pub predicates: Vec<Predicate>,
    pub required_attrs: Vec<String>,
}

impl Filter {
    pub fn new(behavior: BehaviorId, predicates: Vec<Predicate>, required_attrs: Vec<String>) -> Self {
        Self { id: None, behavior, predicates, required_attrs }
    }

    pub fn filter_id(&self) -> FilterId {
        self.id.expect("registered filter carries its id")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fn", content = "attr", rename_all = "snake_case")]
pub enum FeatureFunc {
    Count,
    Sum(String),
    Avg(String),
    Max(String),
    Latest(String),
    Sequence(String),
}

impl FeatureFunc {
    pub fn attr(&self) -> Option<&str> {
        match self {
            FeatureFunc::Count => None,
            FeatureFunc::Sum(a)
            | FeatureFunc::Avg(a)
            | FeatureFunc::Max(a)
            | FeatureFunc::Latest(a)
            | FeatureFunc::Sequence(a) => Some(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<FeatureId>,
    pub filter: FilterId,
    pub window_ms: i64,
    pub func: FeatureFunc,
}

impl Feature {
    pub fn new(filter: FilterId, window_ms: i64, func: FeatureFunc) -> Self {
        Self { id: None, filter, window_ms, func }
    }

    pub fn feature_id(&self) -> FeatureId {
        self.id.expect("registered feature carries its id")
    }
}

/// Replaces a filter's predicates from `day` onwards. Rows logged earlier
/// keep the filter id they were written with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRevision {
    pub day: u32,
    pub filter: FilterId,
    pub predicates: Vec<Predicate>,
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("behavior `{0}` declares no attributes")]
    EmptyAttributeList(String),
    #[error("attribute `{attr}` of kind {kind} cannot be {width} bytes wide")]
    InvalidWidth { attr: String, kind: AttrKind, width: u16 },
    #[error("unknown behavior {0}")]
    UnknownBehavior(BehaviorId),
    #[error("behavior {behavior} has no attribute `{attr}`")]
    UnknownAttribute { behavior: BehaviorId, attr: String },
    #[error("unknown filter {0}")]
    UnknownFilter(FilterId),
    #[error("unknown feature {0}")]
    UnknownFeature(FeatureId),
    #[error("filter on behavior {0} requires no attributes")]
    EmptyRequiredAttrs(BehaviorId),
    #[error("id space exhausted")]
    IdSpaceExhausted,
    #[error("declared id {declared} does not match assigned id {assigned}")]
    IdMismatch { declared: String, assigned: String },
    #[error("catalog file: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("catalog is inconsistent: {0}")]
    Invalid(ValidationReport),
}

/// One broken invariant found by [`Catalog::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub problem: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: impl fmt::Display, problem: impl Into<String>) {
        self.violations.push(Violation { subject: subject.to_string(), problem: problem.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.subject, v.problem)?;
        }
        Ok(())
    }
}

/// On-disk catalog layout.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CatalogFile {
    pub behaviors: Vec<BehaviorType>,
    pub filters: Vec<Filter>,
    pub features: Vec<Feature>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub revisions: Vec<FilterRevision>,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    behaviors: Vec<BehaviorType>,
    filters: BTreeMap<FilterId, Filter>,
    features: BTreeMap<FeatureId, Feature>,
    revisions: Vec<FilterRevision>,
    by_behavior: BTreeMap<BehaviorId, Vec<FilterId>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_behavior(&mut self, mut def: BehaviorType) -> Result<BehaviorId, CatalogError> {
        if self.behaviors.iter().any(|b| b.name == def.name) {
            return Err(CatalogError::DuplicateName(def.name));
        }
        if def.attrs.is_empty() {
            return Err(CatalogError::EmptyAttributeList(def.name));
        }
        let mut seen = BTreeSet::new();
        for a in &def.attrs {
            if !seen.insert(a.name.as_str()) {
                return Err(CatalogError::DuplicateName(format!("{}.{}", def.name, a.name)));
            }
            if !a.kind.accepts_width(a.width) {
                return Err(CatalogError::InvalidWidth { attr: a.name.clone(), kind: a.kind, width: a.width });
            }
        }
        let id = BehaviorId(u16::try_from(self.behaviors.len()).map_err(|_| CatalogError::IdSpaceExhausted)?);
        check_declared(def.id, id)?;
        def.id = Some(id);
        self.behaviors.push(def);
        self.by_behavior.insert(id, Vec::new());
        Ok(id)
    }

    pub fn register_filter(&mut self, mut f: Filter) -> Result<FilterId, CatalogError> {
        let behavior = self.behavior(f.behavior).ok_or(CatalogError::UnknownBehavior(f.behavior))?;
        check_predicates(behavior, &f.predicates)?;
        if f.required_attrs.is_empty() {
            return Err(CatalogError::EmptyRequiredAttrs(f.behavior));
        }
        for a in &f.required_attrs {
            if behavior.attr(a).is_none() {
                return Err(CatalogError::UnknownAttribute { behavior: f.behavior, attr: a.clone() });
            }
        }
        // Canonical order, no duplicates.
        let mut required: Vec<String> = Vec::with_capacity(f.required_attrs.len());
        for a in &behavior.attrs {
            if f.required_attrs.contains(&a.name) {
                required.push(a.name.clone());
            }
        }
        f.required_attrs = required;

        let next = self.filters.keys().next_back().map_or(1, |id| u32::from(id.0) + 1);
        let id = FilterId(u16::try_from(next).map_err(|_| CatalogError::IdSpaceExhausted)?);
        check_declared(f.id, id)?;
        f.id = Some(id);
        self.by_behavior.entry(f.behavior).or_default().push(id);
        self.filters.insert(id, f);
        Ok(id)
    }

    /// Registers a feature. Only the filter reference is checked here; the
    /// remaining invariants are reported by [`Catalog::validate`].
    pub fn register_feature(&mut self, mut feat: Feature) -> Result<FeatureId, CatalogError> {
        if !self.filters.contains_key(&feat.filter) {
            return Err(CatalogError::UnknownFilter(feat.filter));
        }
        let next = self.features.keys().next_back().map_or(0, |id| id.0 + 1);
        let id = FeatureId(next);
        check_declared(feat.id, id)?;
        feat.id = Some(id);
        self.features.insert(id, feat);
        Ok(id)
    }

    pub fn add_revision(&mut self, rev: FilterRevision) -> Result<(), CatalogError> {
        let f = self.filters.get(&rev.filter).ok_or(CatalogError::UnknownFilter(rev.filter))?;
        let behavior = &self.behaviors[f.behavior.0 as usize];
        check_predicates(behavior, &rev.predicates)?;
        let pos = self.revisions.partition_point(|r| (r.day, r.filter) <= (rev.day, rev.filter));
        self.revisions.insert(pos, rev);
        Ok(())
    }

    /// Checks every catalog invariant and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut names = BTreeSet::new();
        for (pos, b) in self.behaviors.iter().enumerate() {
            if b.id != Some(BehaviorId(pos as u16)) {
                report.push(&b.name, "behavior id does not match its position");
            }
            if !names.insert(&b.name) {
                report.push(&b.name, "duplicate behavior name");
            }
            if b.attrs.is_empty() {
                report.push(&b.name, "no attributes");
            }
            let mut attr_names = BTreeSet::new();
            for a in &b.attrs {
                if !attr_names.insert(&a.name) {
                    report.push(format!("{}.{}", b.name, a.name), "duplicate attribute name");
                }
                if !a.kind.accepts_width(a.width) {
                    report.push(format!("{}.{}", b.name, a.name), format!("width {} invalid for {}", a.width, a.kind));
                }
            }
        }
        for (id, f) in &self.filters {
            if id.is_null() || f.id != Some(*id) {
                report.push(id, "filter id is null or inconsistent");
            }
            let Some(b) = self.behavior(f.behavior) else {
                report.push(id, format!("references unknown behavior {}", f.behavior));
                continue;
            };
            if f.required_attrs.is_empty() {
                report.push(id, "no required attributes");
            }
            for a in &f.required_attrs {
                if b.attr(a).is_none() {
                    report.push(id, format!("required attribute `{a}` not declared by {}", b.name));
                }
            }
            for p in &f.predicates {
                predicate_problems(&mut report, *id, b, p);
            }
            if !self.by_behavior.get(&f.behavior).is_some_and(|v| v.contains(id)) {
                report.push(id, "missing from its behavior's filter list");
            }
        }
        for (id, feat) in &self.features {
            let Some(f) = self.filters.get(&feat.filter) else {
                report.push(id, format!("references unknown filter {}", feat.filter));
                continue;
            };
            if feat.window_ms <= 0 {
                report.push(id, "window must be positive");
            }
            if let Some(attr) = feat.func.attr() {
                if !f.required_attrs.iter().any(|a| a == attr) {
                    report.push(id, format!("function attribute `{attr}` is not required by {}", feat.filter));
                }
            }
        }
        for rev in &self.revisions {
            match self.filters.get(&rev.filter) {
                None => report.push(rev.filter, format!("revision on day {} for unknown filter", rev.day)),
                Some(f) => {
                    if let Some(b) = self.behavior(f.behavior) {
                        for p in &rev.predicates {
                            predicate_problems(&mut report, rev.filter, b, p);
                        }
                    }
                }
            }
        }
        report
    }

    pub fn behaviors(&self) -> &[BehaviorType] {
        &self.behaviors
    }

    pub fn behavior(&self, id: BehaviorId) -> Option<&BehaviorType> {
        self.behaviors.get(id.0 as usize)
    }

    pub fn behavior_by_name(&self, name: &str) -> Option<&BehaviorType> {
        self.behaviors.iter().find(|b| b.name == name)
    }

    pub fn filter(&self, id: FilterId) -> Option<&Filter> {
        self.filters.get(&id)
    }

    pub fn filters(&self) -> impl Iterator<Item = &Filter> {
        self.filters.values()
    }

    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }

    pub fn feature(&self, id: FeatureId) -> Option<&Feature> {
        self.features.get(&id)
    }

    pub fn features(&self) -> impl Iterator<Item = &Feature> {
        self.features.values()
    }

    /// Keeps only the features whose id satisfies `keep`.
    pub fn retain_features(&mut self, mut keep: impl FnMut(FeatureId) -> bool) {
        self.features.retain(|id, _| keep(*id));
    }

    pub fn revisions(&self) -> &[FilterRevision] {
        &self.revisions
    }

    /// Filters of one behavior, ascending by id.
    pub fn filters_of(&self, behavior: BehaviorId) -> &[FilterId] {
        self.by_behavior.get(&behavior).map_or(&[], Vec::as_slice)
    }

    /// Predicates of `filter` in force on `day`.
    pub fn predicates_at(&self, filter: FilterId, day: u32) -> Option<&[Predicate]> {
        let f = self.filters.get(&filter)?;
        let latest = self
            .revisions
            .iter()
            .rev()
            .find(|r| r.filter == filter && r.day <= day)
            .map(|r| r.predicates.as_slice());
        Some(latest.unwrap_or(&f.predicates))
    }

    /// Declared width of an attribute of a behavior.
    pub fn attr_width(&self, behavior: BehaviorId, attr: &str) -> Option<u16> {
        self.behavior(behavior)?.attr(attr).map(|a| a.width)
    }

    /// Columns of the single sparse table used by the unsplit layout: every
    /// attribute name in first-appearance order, at its widest declaration.
    pub fn physical_columns(&self) -> Vec<(String, u16)> {
        let mut cols: Vec<(String, u16)> = Vec::new();
        for b in &self.behaviors {
            for a in &b.attrs {
                match cols.iter_mut().find(|(n, _)| *n == a.name) {
                    Some(col) => col.1 = col.1.max(a.width),
                    None => cols.push((a.name.clone(), a.width)),
                }
            }
        }
        cols
    }

    pub fn to_file(&self) -> CatalogFile {
        CatalogFile {
            behaviors: self.behaviors.clone(),
            filters: self.filters.values().cloned().collect(),
            features: self.features.values().cloned().collect(),
            revisions: self.revisions.clone(),
        }
    }

    /// Rebuilds a catalog through the registration path; declared ids must
    /// agree with the ones registration assigns.
    pub fn from_file(file: CatalogFile) -> Result<Self, CatalogError> {
        let mut cat = Catalog::new();
        for b in file.behaviors {
            cat.register_behavior(b)?;
        }
        for f in file.filters {
            cat.register_filter(f)?;
        }
        for feat in file.features {
            cat.register_feature(feat)?;
        }
        for r in file.revisions {
            cat.add_revision(r)?;
        }
        let report = cat.validate();
        if !report.is_empty() {
            return Err(CatalogError::Invalid(report));
        }
        Ok(cat)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CatalogError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn check_declared<T: PartialEq + fmt::Display>(declared: Option<T>, assigned: T) -> Result<(), CatalogError> {
    match declared {
        Some(d) if d != assigned => {
            Err(CatalogError::IdMismatch { declared: d.to_string(), assigned: assigned.to_string() })
        }
        _ => Ok(()),
    }
}

fn check_predicates(behavior: &BehaviorType, predicates: &[Predicate]) -> Result<(), CatalogError> {
    for p in predicates {
        if behavior.attr(&p.attr).is_none() {
            return Err(CatalogError::UnknownAttribute { behavior: behavior.behavior_id(), attr: p.attr.clone() });
        }
    }
    Ok(())
}

fn predicate_problems(report: &mut ValidationReport, subject: FilterId, b: &BehaviorType, p: &Predicate) {
    match b.attr(&p.attr) {
        None => report.push(subject, format!("predicate on undeclared attribute `{}`", p.attr)),
        Some(a) if a.kind.coerce(p.value.clone()).is_none() => {
            report.push(subject, format!("predicate value {} cannot match {} attribute `{}`", p.value, a.kind, a.name))
        }
        Some(_) => {}
    }
}
