//! Knowledge-graph type system and entity-type index.
//!
//! Both stores are loaded once from five TSV tables and are immutable
//! afterwards. The type system answers hierarchy queries (depth, undirected
//! subclass distance) used by the hierarchical gain; the entity index holds
//! the entity sets behind type similarity and the entity descriptions used
//! for description documents.

pub mod ntriples;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const TYPE_HIERARCHY_FILE: &str = "type_hierarchy.tsv";
pub const TYPE_LABELS_FILE: &str = "type_labels.tsv";
pub const TYPE_DESCRIPTIONS_FILE: &str = "type_descriptions.tsv";
pub const ENTITY_TYPES_FILE: &str = "entity_types.tsv";
pub const ENTITY_DESCRIPTIONS_FILE: &str = "entity_descriptions.tsv";

pub const KG_FILES: [&str; 5] = [
    TYPE_HIERARCHY_FILE,
    TYPE_LABELS_FILE,
    TYPE_DESCRIPTIONS_FILE,
    ENTITY_TYPES_FILE,
    ENTITY_DESCRIPTIONS_FILE,
];

#[derive(Debug, Error)]
pub enum KgError {
    #[error("missing KG table {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("type hierarchy contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown type id `{0}`")]
    UnknownType(String),
}

/// KG type vocabulary with its subclass hierarchy.
///
/// Types are interned in lexicographic order, so indices are stable for a
/// given set of type ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeSystem {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    depths: Vec<usize>,
    labels: BTreeMap<String, String>,
    descriptions: BTreeMap<String, String>,
}

impl TypeSystem {
    /// Builds a type system from `(child, parent)` edges plus the textual
    /// tables. Every type mentioned anywhere becomes part of the system.
    pub fn new<I, S>(
        extra_types: I,
        edges: &[(String, String)],
        labels: BTreeMap<String, String>,
        descriptions: BTreeMap<String, String>,
    ) -> Result<Self, KgError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: BTreeSet<String> = extra_types.into_iter().map(Into::into).collect();
        for (child, parent) in edges {
            all.insert(child.clone());
            all.insert(parent.clone());
        }
        all.extend(labels.keys().cloned());
        all.extend(descriptions.keys().cloned());

        let ids: Vec<String> = all.into_iter().collect();
        let index: HashMap<String, usize> =
            ids.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let mut parent_sets = vec![BTreeSet::new(); ids.len()];
        let mut child_sets = vec![BTreeSet::new(); ids.len()];
        for (child, parent) in edges {
            let c = index[child];
            let p = index[parent];
            if c == p {
                return Err(KgError::Cycle(vec![child.clone(), child.clone()]));
            }
            parent_sets[c].insert(p);
            child_sets[p].insert(c);
        }
        let parents: Vec<Vec<usize>> = parent_sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let children: Vec<Vec<usize>> = child_sets.into_iter().map(|s| s.into_iter().collect()).collect();

        if let Some(cycle) = find_cycle(&parents) {
            return Err(KgError::Cycle(cycle.into_iter().map(|i| ids[i].clone()).collect()));
        }
        let depths = root_depths(&parents, &children);

        Ok(Self {
            ids,
            index,
            parents,
            children,
            depths,
            labels,
            descriptions,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, t: &str) -> bool {
        self.index.contains_key(t)
    }

    /// Type ids in lexicographic order.
    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn parents(&self, t: &str) -> Result<impl Iterator<Item = &str>, KgError> {
        let i = self.lookup(t)?;
        Ok(self.parents[i].iter().map(move |&p| self.ids[p].as_str()))
    }

    pub fn label(&self, t: &str) -> Option<&str> {
        self.labels.get(t).map(String::as_str)
    }

    pub fn description(&self, t: &str) -> Option<&str> {
        self.descriptions.get(t).map(String::as_str)
    }

    pub fn max_depth(&self) -> usize {
        self.depths.iter().copied().max().unwrap_or(0)
    }

    /// Minimum number of subclass edges from `t` up to any root.
    pub fn type_depth(&self, t: &str) -> Result<usize, KgError> {
        Ok(self.depths[self.lookup(t)?])
    }

    /// Length of the shortest undirected path between two types in the
    /// subclass graph, or `None` when they lie in disconnected hierarchies.
    pub fn type_distance(&self, t1: &str, t2: &str) -> Result<Option<usize>, KgError> {
        let a = self.lookup(t1)?;
        let b = self.lookup(t2)?;
        if a == b {
            return Ok(Some(0));
        }
        Ok(self.bfs(a)[b])
    }

    /// Undirected distances from `t` to every type, indexed like [`Self::types`].
    pub fn distances_from(&self, t: &str) -> Result<Vec<Option<usize>>, KgError> {
        Ok(self.bfs(self.lookup(t)?))
    }

    pub fn position(&self, t: &str) -> Option<usize> {
        self.index.get(t).copied()
    }

    fn lookup(&self, t: &str) -> Result<usize, KgError> {
        self.position(t).ok_or_else(|| KgError::UnknownType(t.to_string()))
    }

    fn bfs(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.ids.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0) + 1;
            for &v in self.parents[u].iter().chain(&self.children[u]) {
                if dist[v].is_none() {
                    dist[v] = Some(d);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Returns one cycle in the parent graph, if any, as a closed path.
fn find_cycle(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = parents.len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // iterative DFS with an explicit path stack
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Active;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < parents[u].len() {
                let v = parents[u][*next];
                *next += 1;
                match mark[v] {
                    Mark::New => {
                        mark[v] = Mark::Active;
                        stack.push((v, 0));
                    }
                    Mark::Active => {
                        let start = stack.iter().position(|&(w, _)| w == v).unwrap_or(0);
                        let mut cycle: Vec<usize> = stack[start..].iter().map(|&(w, _)| w).collect();
                        cycle.push(v);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[u] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Multi-source BFS downward from all roots.
fn root_depths(parents: &[Vec<usize>], children: &[Vec<usize>]) -> Vec<usize> {
    let mut depth = vec![usize::MAX; parents.len()];
    let mut queue = VecDeque::new();
    for (i, p) in parents.iter().enumerate() {
        if p.is_empty() {
            depth[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &c in &children[u] {
            if depth[c] == usize::MAX {
                depth[c] = depth[u] + 1;
                queue.push_back(c);
            }
        }
    }
    depth
}

/// Entity to type assignments and their inverse, plus entity descriptions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityTypeIndex {
    entity_types: BTreeMap<String, BTreeSet<String>>,
    type_entities: BTreeMap<String, BTreeSet<String>>,
    entity_descriptions: BTreeMap<String, String>,
}

impl EntityTypeIndex {
    pub fn new(assertions: &[(String, String)], entity_descriptions: BTreeMap<String, String>) -> Self {
        let mut entity_types: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut type_entities: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (entity, ty) in assertions {
            entity_types.entry(entity.clone()).or_default().insert(ty.clone());
            type_entities.entry(ty.clone()).or_default().insert(entity.clone());
        }
        Self {
            entity_types,
            type_entities,
            entity_descriptions,
        }
    }

    pub fn entity_types(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.entity_types
    }

    pub fn type_entities(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.type_entities
    }

    pub fn entities_of(&self, t: &str) -> Option<&BTreeSet<String>> {
        self.type_entities.get(t)
    }

    pub fn entity_descriptions(&self) -> &BTreeMap<String, String> {
        &self.entity_descriptions
    }

    pub fn entity_description(&self, e: &str) -> Option<&str> {
        self.entity_descriptions.get(e).map(String::as_str)
    }
}

/// Ingestion diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct LoadReport {
    /// Types referenced only by entity rows, added with empty descriptions.
    pub added_types: Vec<String>,
    pub duplicate_text_rows: usize,
}

/// Loads the five KG tables from `dir`.
pub fn load_kg_tables(dir: &Path) -> Result<(TypeSystem, EntityTypeIndex), KgError> {
    load_kg_tables_with_report(dir).map(|(ts, idx, _)| (ts, idx))
}

pub fn load_kg_tables_with_report(dir: &Path) -> Result<(TypeSystem, EntityTypeIndex, LoadReport), KgError> {
    let mut report = LoadReport::default();

    let hierarchy_rows = read_table(dir, TYPE_HIERARCHY_FILE)?;
    let mut edges = Vec::with_capacity(hierarchy_rows.len());
    let mut seen = BTreeSet::new();
    for row in hierarchy_rows {
        if !seen.insert((row.key.clone(), row.value.clone())) {
            return Err(KgError::Malformed {
                file: TYPE_HIERARCHY_FILE.to_string(),
                line: row.line,
                reason: format!("duplicate hierarchy row {} -> {}", row.key, row.value),
            });
        }
        edges.push((row.key, row.value));
    }

    let labels = text_map(read_table(dir, TYPE_LABELS_FILE)?, &mut report);
    let descriptions = text_map(read_table(dir, TYPE_DESCRIPTIONS_FILE)?, &mut report);
    let assertions: Vec<(String, String)> = read_table(dir, ENTITY_TYPES_FILE)?
        .into_iter()
        .map(|r| (r.key, r.value))
        .collect();
    let entity_descriptions = text_map(read_table(dir, ENTITY_DESCRIPTIONS_FILE)?, &mut report);

    let declared: BTreeSet<&str> = edges
        .iter()
        .flat_map(|(c, p)| [c.as_str(), p.as_str()])
        .chain(labels.keys().map(String::as_str))
        .chain(descriptions.keys().map(String::as_str))
        .collect();
    let added: BTreeSet<String> = assertions
        .iter()
        .filter(|(_, t)| !declared.contains(t.as_str()))
        .map(|(_, t)| t.clone())
        .collect();
    if !added.is_empty() {
        log::warn!(
            "{} types referenced by {} are missing from the type tables; added with empty descriptions",
            added.len(),
            ENTITY_TYPES_FILE
        );
    }
    report.added_types = added.iter().cloned().collect();

    let ts = TypeSystem::new(added, &edges, labels, descriptions)?;
    let index = EntityTypeIndex::new(&assertions, entity_descriptions);
    Ok((ts, index, report))
}

struct Row {
    line: usize,
    key: String,
    value: String,
}

fn read_table(dir: &Path, name: &str) -> Result<Vec<Row>, KgError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(KgError::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|source| KgError::Io {
        path: path.clone(),
        source,
    })?;
    parse_table(name, &text)
}

fn parse_table(name: &str, text: &str) -> Result<Vec<Row>, KgError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| KgError::Malformed {
            file: name.to_string(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let (key, value) = line.split_once('\t').ok_or_else(|| malformed("expected two tab-separated columns"))?;
        if value.contains('\t') {
            return Err(malformed("expected two tab-separated columns, found more"));
        }
        let key = key.trim();
        if key.is_empty() {
            return Err(malformed("empty key column"));
        }
        rows.push(Row {
            line: i + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(rows)
}

fn text_map(rows: Vec<Row>, report: &mut LoadReport) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for row in rows {
        if map.contains_key(&row.key) {
            report.duplicate_text_rows += 1;
            continue;
        }
        map.insert(row.key, row.value);
    }
    map
}

/// Writes the stores back as the five TSV tables.
pub fn write_kg_tables(dir: &Path, ts: &TypeSystem, index: &EntityTypeIndex) -> std::io::Result<()> {
    use std::fmt::Write as _;
    fs::create_dir_all(dir)?;
    let mut hierarchy = String::new();
    for (i, child) in ts.ids.iter().enumerate() {
        for &p in &ts.parents[i] {
            let _ = writeln!(hierarchy, "{child}\t{}", ts.ids[p]);
        }
    }
    fs::write(dir.join(TYPE_HIERARCHY_FILE), hierarchy)?;
    fs::write(dir.join(TYPE_LABELS_FILE), render_map(&ts.labels))?;
    fs::write(dir.join(TYPE_DESCRIPTIONS_FILE), render_map(&ts.descriptions))?;
    let mut assertions = String::new();
    for (e, types) in &index.entity_types {
        for t in types {
            let _ = writeln!(assertions, "{e}\t{t}");
        }
    }
    fs::write(dir.join(ENTITY_TYPES_FILE), assertions)?;
    fs::write(dir.join(ENTITY_DESCRIPTIONS_FILE), render_map(&index.entity_descriptions))?;
    Ok(())
}

fn render_map(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
}
