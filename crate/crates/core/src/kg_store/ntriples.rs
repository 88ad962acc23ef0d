//! N-Triples reader and converter to the KG TSV tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    KgError, ENTITY_DESCRIPTIONS_FILE, ENTITY_TYPES_FILE, TYPE_DESCRIPTIONS_FILE, TYPE_HIERARCHY_FILE,
    TYPE_LABELS_FILE,
};

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const RDFS_SUBCLASS_OF: &str = "http://www.w3.org/2000/01/rdf-schema#subClassOf";
pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
pub const RDFS_COMMENT: &str = "http://www.w3.org/2000/01/rdf-schema#comment";
pub const DBO_ABSTRACT: &str = "http://dbpedia.org/ontology/abstract";
pub const SCHEMA_DESCRIPTION: &str = "http://schema.org/description";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Iri(String),
    Blank(String),
    Literal {
        value: String,
        lang: Option<String>,
        datatype: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
}

/// Parses a single N-Triples line. Blank lines and comments yield `Ok(None)`.
pub fn parse_line(line: &str) -> Result<Option<Triple>, String> {
    let mut cur = Cursor { s: line, pos: 0 };
    cur.skip_ws();
    if cur.at_end() || cur.peek() == Some('#') {
        return Ok(None);
    }
    let subject = match cur.peek() {
        Some('<') => Term::Iri(cur.iri()?),
        Some('_') => Term::Blank(cur.blank()?),
        _ => return Err(format!("bad subject at column {}", cur.pos + 1)),
    };
    cur.skip_ws();
    if cur.peek() != Some('<') {
        return Err(format!("bad predicate at column {}", cur.pos + 1));
    }
    let predicate = cur.iri()?;
    cur.skip_ws();
    let object = match cur.peek() {
        Some('<') => Term::Iri(cur.iri()?),
        Some('_') => Term::Blank(cur.blank()?),
        Some('"') => cur.literal()?,
        _ => return Err(format!("bad object at column {}", cur.pos + 1)),
    };
    cur.skip_ws();
    if cur.peek() != Some('.') {
        return Err(format!("expected '.' at column {}", cur.pos + 1));
    }
    cur.bump();
    cur.skip_ws();
    if !cur.at_end() && cur.peek() != Some('#') {
        return Err(format!("trailing content at column {}", cur.pos + 1));
    }
    Ok(Some(Triple {
        subject,
        predicate,
        object,
    }))
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.s.len()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(' ' | '\t' | '\r' | '\n')) {
            self.bump();
        }
    }

    fn iri(&mut self) -> Result<String, String> {
        self.bump(); // '<'
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err("unterminated IRI".into()),
                Some('>') => return Ok(out),
                Some('\\') => out.push(self.unicode_escape()?),
                Some(c) if c == ' ' || c == '<' || c == '"' => {
                    return Err(format!("invalid character {c:?} in IRI"));
                }
                Some(c) => out.push(c),
            }
        }
    }

    fn blank(&mut self) -> Result<String, String> {
        self.bump();
        if self.bump() != Some(':') {
            return Err("blank node must start with '_:'".into());
        }
        let start = self.pos;
        while matches!(self.peek(), Some(c) if !c.is_whitespace()) {
            self.bump();
        }
        let mut label = &self.s[start..self.pos];
        // "_:b1." is legal; the final dot terminates the statement
        if label.ends_with('.') {
            label = &label[..label.len() - 1];
            self.pos -= 1;
        }
        if label.is_empty() {
            return Err("empty blank node label".into());
        }
        Ok(label.to_string())
    }

    fn literal(&mut self) -> Result<Term, String> {
        self.bump(); // '"'
        let mut value = String::new();
        loop {
            match self.bump() {
                None => return Err("unterminated literal".into()),
                Some('"') => break,
                Some('\\') => {
                    let c = match self.peek() {
                        Some('t') => '\t',
                        Some('b') => '\u{8}',
                        Some('n') => '\n',
                        Some('r') => '\r',
                        Some('f') => '\u{c}',
                        Some('"') => '"',
                        Some('\'') => '\'',
                        Some('\\') => '\\',
                        Some('u' | 'U') => {
                            value.push(self.unicode_escape()?);
                            continue;
                        }
                        other => return Err(format!("bad escape {other:?}")),
                    };
                    self.bump();
                    value.push(c);
                }
                Some(c) => value.push(c),
            }
        }
        let mut lang = None;
        let mut datatype = None;
        match self.peek() {
            Some('@') => {
                self.bump();
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '-') {
                    self.bump();
                }
                if start == self.pos {
                    return Err("empty language tag".into());
                }
                lang = Some(self.s[start..self.pos].to_ascii_lowercase());
            }
            Some('^') => {
                self.bump();
                if self.bump() != Some('^') || self.peek() != Some('<') {
                    return Err("bad datatype marker".into());
                }
                datatype = Some(self.iri()?);
            }
            _ => {}
        }
        Ok(Term::Literal { value, lang, datatype })
    }

    fn unicode_escape(&mut self) -> Result<char, String> {
        let width = match self.bump() {
            Some('u') => 4,
            Some('U') => 8,
            other => return Err(format!("bad escape {other:?}")),
        };
        let end = self.pos + width;
        let hex = self.s.get(self.pos..end).ok_or("truncated unicode escape")?;
        let code = u32::from_str_radix(hex, 16).map_err(|_| format!("bad unicode escape {hex}"))?;
        self.pos = end;
        char::from_u32(code).ok_or_else(|| format!("invalid code point {code:#x}"))
    }
}

/// Which predicates to read and how to shorten IRIs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvertConfig {
    pub type_predicates: Vec<String>,
    pub subclass_predicates: Vec<String>,
    pub label_predicates: Vec<String>,
    pub description_predicates: Vec<String>,
    /// Keep only literals with this language tag (untagged literals always pass).
    pub language: Option<String>,
    /// `(prefix, namespace)` pairs used to compact IRIs into CURIEs.
    pub prefixes: Vec<(String, String)>,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self {
            type_predicates: vec![RDF_TYPE.to_string()],
            subclass_predicates: vec![RDFS_SUBCLASS_OF.to_string()],
            label_predicates: vec![RDFS_LABEL.to_string()],
            description_predicates: vec![
                RDFS_COMMENT.to_string(),
                DBO_ABSTRACT.to_string(),
                SCHEMA_DESCRIPTION.to_string(),
            ],
            language: Some("en".to_string()),
            prefixes: vec![
                ("dbo".to_string(), "http://dbpedia.org/ontology/".to_string()),
                ("dbr".to_string(), "http://dbpedia.org/resource/".to_string()),
                ("wd".to_string(), "http://www.wikidata.org/entity/".to_string()),
                ("owl".to_string(), "http://www.w3.org/2002/07/owl#".to_string()),
                ("schema".to_string(), "http://schema.org/".to_string()),
            ],
        }
    }
}

impl ConvertConfig {
    /// Wikidata-style: instance-of / subclass-of direct claims.
    pub fn wikidata() -> Self {
        Self {
            type_predicates: vec!["http://www.wikidata.org/prop/direct/P31".to_string()],
            subclass_predicates: vec!["http://www.wikidata.org/prop/direct/P279".to_string()],
            ..Self::default()
        }
    }

    fn compact(&self, iri: &str) -> String {
        for (prefix, ns) in &self.prefixes {
            if let Some(local) = iri.strip_prefix(ns.as_str()) {
                return format!("{prefix}:{local}");
            }
        }
        iri.to_string()
    }

    fn accepts_lang(&self, lang: &Option<String>) -> bool {
        match (&self.language, lang) {
            (Some(want), Some(got)) => got == want || got.starts_with(&format!("{want}-")),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConvertReport {
    pub lines: usize,
    pub triples: usize,
    pub malformed: usize,
    /// Up to ten `(file, line, reason)` samples of skipped lines.
    pub malformed_samples: Vec<(String, usize, String)>,
    pub hierarchy_edges: usize,
    pub type_assertions: usize,
    pub types: usize,
    pub entities: usize,
}

#[derive(Default)]
struct Collected {
    edges: BTreeSet<(String, String)>,
    assertions: BTreeSet<(String, String)>,
    labels: BTreeMap<String, String>,
    descriptions: BTreeMap<String, String>,
}

/// Converts one or more N-Triples files into the five KG tables in `out_dir`.
///
/// Malformed lines are skipped and counted. For text predicates the first
/// accepted literal per subject wins, following predicate order in the
/// config.
pub fn convert_ntriples(inputs: &[PathBuf], cfg: &ConvertConfig, out_dir: &Path) -> Result<ConvertReport, KgError> {
    let mut report = ConvertReport::default();
    let mut col = Collected::default();
    // subject -> (predicate rank, text)
    let mut desc_rank: BTreeMap<String, usize> = BTreeMap::new();

    for input in inputs {
        let file = File::open(input).map_err(|source| KgError::Io {
            path: input.clone(),
            source,
        })?;
        let name = input.display().to_string();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| KgError::Io {
                path: input.clone(),
                source,
            })?;
            report.lines += 1;
            let triple = match parse_line(&line) {
                Ok(Some(t)) => t,
                Ok(None) => continue,
                Err(reason) => {
                    report.malformed += 1;
                    if report.malformed_samples.len() < 10 {
                        report.malformed_samples.push((name.clone(), i + 1, reason));
                    }
                    continue;
                }
            };
            report.triples += 1;
            let subject = match &triple.subject {
                Term::Iri(iri) => cfg.compact(iri),
                Term::Blank(_) => continue,
                Term::Literal { .. } => unreachable!("parser never yields literal subjects"),
            };
            let p = triple.predicate.as_str();
            if cfg.type_predicates.iter().any(|x| x == p) {
                if let Term::Iri(o) = &triple.object {
                    col.assertions.insert((subject, cfg.compact(o)));
                }
            } else if cfg.subclass_predicates.iter().any(|x| x == p) {
                if let Term::Iri(o) = &triple.object {
                    let parent = cfg.compact(o);
                    if parent != subject {
                        col.edges.insert((subject, parent));
                    }
                }
            } else if let Term::Literal { value, lang, .. } = &triple.object {
                if !cfg.accepts_lang(lang) {
                    continue;
                }
                let text = clean_text(value);
                if text.is_empty() {
                    continue;
                }
                if cfg.label_predicates.iter().any(|x| x == p) {
                    col.labels.entry(subject).or_insert(text);
                } else if let Some(rank) = cfg.description_predicates.iter().position(|x| x == p) {
                    let better = desc_rank.get(&subject).is_none_or(|&r| rank < r);
                    if better {
                        desc_rank.insert(subject.clone(), rank);
                        col.descriptions.insert(subject, text);
                    }
                }
            }
        }
    }

    let types: BTreeSet<&str> = col
        .edges
        .iter()
        .flat_map(|(c, p)| [c.as_str(), p.as_str()])
        .chain(col.assertions.iter().map(|(_, t)| t.as_str()))
        .collect();

    fs::create_dir_all(out_dir).map_err(|source| KgError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let write = |name: &str, body: String| {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|source| KgError::Io { path, source })
    };
    write(
        TYPE_HIERARCHY_FILE,
        col.edges.iter().map(|(c, p)| format!("{c}\t{p}\n")).collect(),
    )?;
    write(
        TYPE_LABELS_FILE,
        col.labels
            .iter()
            .filter(|(s, _)| types.contains(s.as_str()))
            .map(|(s, l)| format!("{s}\t{l}\n"))
            .collect(),
    )?;
    write(
        TYPE_DESCRIPTIONS_FILE,
        col.descriptions
            .iter()
            .filter(|(s, _)| types.contains(s.as_str()))
            .map(|(s, d)| format!("{s}\t{d}\n"))
            .collect(),
    )?;
    write(
        ENTITY_TYPES_FILE,
        col.assertions.iter().map(|(e, t)| format!("{e}\t{t}\n")).collect(),
    )?;
    write(
        ENTITY_DESCRIPTIONS_FILE,
        col.descriptions
            .iter()
            .filter(|(s, _)| !types.contains(s.as_str()))
            .map(|(s, d)| format!("{s}\t{d}\n"))
            .collect(),
    )?;

    report.hierarchy_edges = col.edges.len();
    report.type_assertions = col.assertions.len();
    report.types = types.len();
    report.entities = col.assertions.iter().map(|(e, _)| e.as_str()).collect::<BTreeSet<_>>().len();
    if report.malformed > 0 {
        log::warn!("skipped {} malformed N-Triples lines", report.malformed);
    }
    Ok(report)
}

/// Collapses all whitespace runs (tabs, newlines included) into single spaces.
pub fn clean_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
