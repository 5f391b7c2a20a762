//! Region label templates and their sub-category hierarchy.
//!
//! A template file is a JSON object whose keys are label names and whose
//! values are `{"finding": false}` objects. Hierarchy edges live in a sibling
//! `<region>.hierarchy.json` file as `[child, parent]` pairs.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::model::Region;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template JSON is invalid: {0}")]
    Json(#[from] serde_json::Error),
    #[error("template must be a JSON object of label -> {{\"finding\": ...}}")]
    NotAnObject,
    #[error("template value for {0:?} must be an object with a single \"finding\" member")]
    BadEntry(String),
    #[error("template has no labels")]
    Empty,
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("hierarchy edge references unknown label {0:?}")]
    UnknownLabel(String),
    #[error("hierarchy edge {0:?} -> itself")]
    SelfEdge(String),
    #[error("hierarchy contains a cycle through {0:?}")]
    Cycle(String),
    #[error("no template registered for region {0}")]
    UnknownRegion(Region),
    #[error("region {0} already has a template")]
    DuplicateRegion(Region),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// NFC-normalized, trimmed label name. The only canonicalization applied when
/// matching names.
pub fn normalize_label(name: &str) -> String {
    name.trim().nfc().collect()
}

/// A region's ordered label set plus hierarchy edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTemplate {
    region: Region,
    labels: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    // children before parents
    topo: Vec<usize>,
    subcategory_example: Option<String>,
}

impl LabelTemplate {
    pub fn new<I, S>(region: Region, labels: I, hierarchy: &[(String, String)]) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let labels: Vec<String> = labels.into_iter().map(|l| normalize_label(l.as_ref())).collect();
        if labels.is_empty() {
            return Err(TemplateError::Empty);
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(TemplateError::DuplicateLabel(l.clone()));
            }
        }
        let mut edges = Vec::with_capacity(hierarchy.len());
        for (child, parent) in hierarchy {
            let c = normalize_label(child);
            let p = normalize_label(parent);
            let ci = *index.get(&c).ok_or_else(|| TemplateError::UnknownLabel(c.clone()))?;
            let pi = *index.get(&p).ok_or(TemplateError::UnknownLabel(p))?;
            if ci == pi {
                return Err(TemplateError::SelfEdge(c));
            }
            if !edges.contains(&(ci, pi)) {
                edges.push((ci, pi));
            }
        }
        let topo = children_first(labels.len(), &edges).map_err(|i| TemplateError::Cycle(labels[i].clone()))?;
        Ok(LabelTemplate {
            region,
            labels,
            index,
            edges,
            topo,
            subcategory_example: None,
        })
    }

    /// Parses the template JSON object and a JSON array of `[child, parent]` edges.
    pub fn from_json(region: Region, template_json: &str, hierarchy_json: Option<&str>) -> Result<Self, TemplateError> {
        let value: serde_json::Value = serde_json::from_str(template_json)?;
        let obj = value.as_object().ok_or(TemplateError::NotAnObject)?;
        for (k, v) in obj {
            let entry = v.as_object().ok_or_else(|| TemplateError::BadEntry(k.clone()))?;
            if entry.len() != 1 || !entry.contains_key("finding") {
                return Err(TemplateError::BadEntry(k.clone()));
            }
        }
        let edges: Vec<(String, String)> = match hierarchy_json {
            Some(h) => serde_json::from_str(h)?,
            None => Vec::new(),
        };
        LabelTemplate::new(region, obj.keys(), &edges)
    }

    /// Loads `<path>` and, if present, the sibling `<region>.hierarchy.json`.
    pub fn load(region: Region, path: &Path) -> Result<Self, TemplateError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| TemplateError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let template = read(path)?;
        let hierarchy_path = path.with_file_name(format!("{}.hierarchy.json", region.as_str()));
        let hierarchy = if hierarchy_path.exists() {
            Some(read(&hierarchy_path)?)
        } else {
            None
        };
        let mut t = LabelTemplate::from_json(region.clone(), &template, hierarchy.as_deref())?;
        if let Some(shipped) = shipped_example(&region) {
            if t.contains(shipped) {
                t.subcategory_example = Some(shipped.to_owned());
            }
        }
        Ok(t)
    }

    pub fn with_subcategory_example(mut self, label: impl AsRef<str>) -> Result<Self, TemplateError> {
        let l = normalize_label(label.as_ref());
        if !self.contains(&l) {
            return Err(TemplateError::UnknownLabel(l));
        }
        self.subcategory_example = Some(l);
        Ok(self)
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// `(child, parent)` edges by name.
    pub fn hierarchy(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(c, p)| (self.labels[c].clone(), self.labels[p].clone()))
            .collect()
    }

    /// Label indices ordered so that every child precedes its parents.
    pub fn children_first(&self) -> &[usize] {
        &self.topo
    }

    pub fn parents_of(&self, label: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == label).map(|e| e.1)
    }

    pub fn children_of(&self, label: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == label).map(|e| e.0)
    }

    /// All transitive descendants of `label`.
    pub fn descendants(&self, label: usize) -> Vec<usize> {
        let mut seen = vec![false; self.labels.len()];
        let mut stack = vec![label];
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            for c in self.children_of(n) {
                if !seen[c] {
                    seen[c] = true;
                    out.push(c);
                    stack.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The sub-category named in the prompt's propagation rule.
    ///
    /// Falls back to the first hierarchy child when none was configured.
    pub fn subcategory_example(&self) -> Option<&str> {
        self.subcategory_example
            .as_deref()
            .or_else(|| self.edges.first().map(|&(c, _)| self.labels[c].as_str()))
    }

    /// The template rendered as a JSON object with every finding `false`.
    pub fn template_json(&self) -> String {
        let mut out = String::from("{\n");
        for (i, label) in self.labels.iter().enumerate() {
            let key = serde_json::to_string(label).expect("string serializes");
            out.push_str("  ");
            out.push_str(&key);
            out.push_str(": {\"finding\": false}");
            if i + 1 < self.labels.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push('}');
        out
    }

    /// The hierarchy rendered as a JSON array of `[child, parent]` pairs.
    pub fn hierarchy_json(&self) -> String {
        serde_json::to_string_pretty(&self.hierarchy()).expect("pairs serialize")
    }
}

/// Kahn's algorithm; on a cycle returns one node on it.
fn children_first(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, usize> {
    let mut pending_children = vec![0usize; n];
    for &(_, p) in edges {
        pending_children[p] += 1;
    }
    let mut ready: std::collections::VecDeque<usize> = (0..n).filter(|&i| pending_children[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(node) = ready.pop_front() {
        order.push(node);
        for &(c, p) in edges {
            if c == node {
                pending_children[p] -= 1;
                if pending_children[p] == 0 {
                    ready.push_back(p);
                }
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|i| !order.contains(i)).expect("some node left");
        return Err(stuck);
    }
    Ok(order)
}

const CLAVICLE_JSON: &str = include_str!("../templates/clavicle.json");
const CLAVICLE_HIERARCHY: &str = include_str!("../templates/clavicle.hierarchy.json");
const ELBOW_JSON: &str = include_str!("../templates/elbow.json");
const ELBOW_HIERARCHY: &str = include_str!("../templates/elbow.hierarchy.json");
const THUMB_JSON: &str = include_str!("../templates/thumb.json");
const THUMB_HIERARCHY: &str = include_str!("../templates/thumb.hierarchy.json");

fn shipped_example(region: &Region) -> Option<&'static str> {
    match region.as_str() {
        "clavicle" => Some("Lateral Third Fracture"),
        "elbow" => Some("Radial Head Fracture"),
        "thumb" => Some("First Metacarpal Bone Fracture"),
        _ => None,
    }
}

/// Raw text of a shipped template file and its hierarchy file.
pub fn shipped_source(region: &Region) -> Option<(&'static str, &'static str)> {
    match region.as_str() {
        "clavicle" => Some((CLAVICLE_JSON, CLAVICLE_HIERARCHY)),
        "elbow" => Some((ELBOW_JSON, ELBOW_HIERARCHY)),
        "thumb" => Some((THUMB_JSON, THUMB_HIERARCHY)),
        _ => None,
    }
}

/// Exactly one template per region.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<Region, LabelTemplate>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clavicle, elbow and thumb.
    pub fn shipped() -> Self {
        let mut reg = TemplateRegistry::new();
        for region in [Region::clavicle(), Region::elbow(), Region::thumb()] {
            let (json, hierarchy) = shipped_source(&region).expect("shipped region");
            let example = shipped_example(&region).expect("shipped region");
            let template = LabelTemplate::from_json(region, json, Some(hierarchy))
                .and_then(|t| t.with_subcategory_example(example))
                .expect("shipped templates are valid");
            reg.register(template).expect("distinct regions");
        }
        reg
    }

    pub fn register(&mut self, template: LabelTemplate) -> Result<(), TemplateError> {
        let region = template.region().clone();
        if self.templates.contains_key(&region) {
            return Err(TemplateError::DuplicateRegion(region));
        }
        self.templates.insert(region, template);
        Ok(())
    }

    pub fn get(&self, region: &Region) -> Result<&LabelTemplate, TemplateError> {
        self.templates
            .get(region)
            .ok_or_else(|| TemplateError::UnknownRegion(region.clone()))
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.templates.keys()
    }
}
