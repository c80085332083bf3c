use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use super::{validate_tree, Comment, DiscussionTree, ValidationError};
use crate::format::raw_f64_array;

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Community id → group id.
pub type CommunityGrouping = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("unmapped communities: {}", .0.join(", "))]
    Unmapped(Vec<String>),
    #[error("discussion {discussion_id:?} has feature dimension {found}, corpus declares {expected}")]
    Dimension {
        discussion_id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate discussion id {0:?}")]
    DuplicateDiscussion(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("grouping: {0}")]
    Grouping(String),
}

/// Discussion trees plus the community → group mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub trees: Vec<DiscussionTree>,
    pub grouping: CommunityGrouping,
    pub d_feat: usize,
}

impl Corpus {
    /// Checks dimensions, grouping totality, and discussion-id uniqueness.
    pub fn new(trees: Vec<DiscussionTree>, grouping: CommunityGrouping, d_feat: usize) -> Result<Self, CorpusError> {
        if d_feat == 0 {
            return Err(CorpusError::Header("d_feat must be positive".into()));
        }
        let mut seen = HashSet::new();
        let mut unmapped = BTreeSet::new();
        for t in &trees {
            if t.d_feat() != d_feat {
                return Err(CorpusError::Dimension {
                    discussion_id: t.discussion_id.clone(),
                    expected: d_feat,
                    found: t.d_feat(),
                });
            }
            if !seen.insert(t.discussion_id.as_str()) {
                return Err(CorpusError::DuplicateDiscussion(t.discussion_id.clone()));
            }
            if !grouping.contains_key(&t.community_id) {
                unmapped.insert(t.community_id.clone());
            }
        }
        if !unmapped.is_empty() {
            return Err(CorpusError::Unmapped(unmapped.into_iter().collect()));
        }
        Ok(Self {
            trees,
            grouping,
            d_feat,
        })
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn group_of(&self, tree: &DiscussionTree) -> &str {
        &self.grouping[&tree.community_id]
    }

    /// Distinct group ids that actually occur in the trees.
    pub fn groups(&self) -> BTreeSet<&str> {
        self.trees.iter().map(|t| self.group_of(t)).collect()
    }

    /// A corpus over the selected trees, same grouping.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            trees: indices.iter().map(|&i| self.trees[i].clone()).collect(),
            grouping: self.grouping.clone(),
            d_feat: self.d_feat,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    format_version: Option<u32>,
    #[serde(default)]
    d_feat: Option<usize>,
    #[serde(default)]
    grouping: Option<CommunityGrouping>,
}

#[derive(Deserialize)]
struct TreeRecord {
    discussion_id: String,
    community_id: String,
    comments: Vec<Comment>,
}

#[derive(Serialize)]
struct CommentOut<'a> {
    id: &'a str,
    parent_id: Option<&'a str>,
    features: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    author_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<i64>,
}

#[derive(Serialize)]
struct TreeOut<'a> {
    discussion_id: &'a str,
    community_id: &'a str,
    comments: Vec<CommentOut<'a>>,
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut w: W) -> Result<(), CorpusError> {
    let header = Header {
        format_version: Some(CORPUS_FORMAT_VERSION),
        d_feat: Some(corpus.d_feat),
        grouping: Some(corpus.grouping.clone()),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for t in &corpus.trees {
        let rec = TreeOut {
            discussion_id: &t.discussion_id,
            community_id: &t.community_id,
            comments: t
                .comments()
                .iter()
                .map(|c| CommentOut {
                    id: &c.id,
                    parent_id: c.parent_id.as_deref(),
                    features: raw_f64_array(&c.features),
                    author_id: c.author_id.as_deref(),
                    timestamp: c.timestamp,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let f = fs::File::create(path)?;
    write_corpus_to(corpus, BufWriter::new(f))
}

/// Reads a corpus whose first line is a complete header.
pub fn read_corpus_from<R: Read>(r: R) -> Result<Corpus, CorpusError> {
    let (header, trees) = parse_lines(r, true)?;
    let d_feat = header
        .as_ref()
        .and_then(|h| h.d_feat)
        .ok_or_else(|| CorpusError::Header("missing d_feat".into()))?;
    let grouping = header
        .and_then(|h| h.grouping)
        .ok_or_else(|| CorpusError::Header("missing grouping".into()))?;
    let trees = trees
        .into_iter()
        .map(|(_, rec)| validate_tree(&rec.discussion_id, &rec.community_id, rec.comments, Some(d_feat)))
        .collect::<Result<Vec<_>, _>>()?;
    Corpus::new(trees, grouping, d_feat)
}

pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    read_corpus_from(BufReader::new(fs::File::open(path)?))
}

/// Reads a discussion file whose header line is optional and may omit
/// `d_feat` or `grouping`. Returns validated trees, the header grouping
/// (possibly empty), and the feature dimension.
pub fn read_discussions(path: &Path) -> Result<(Vec<DiscussionTree>, CommunityGrouping, Option<usize>), CorpusError> {
    let (header, records) = parse_lines(BufReader::new(fs::File::open(path)?), false)?;
    let mut d_feat = header.as_ref().and_then(|h| h.d_feat);
    let grouping = header.and_then(|h| h.grouping).unwrap_or_default();
    let mut trees = Vec::with_capacity(records.len());
    for (_, rec) in records {
        if d_feat.is_none() {
            d_feat = rec.comments.first().map(|c| c.features.len());
        }
        trees.push(validate_tree(
            &rec.discussion_id,
            &rec.community_id,
            rec.comments,
            d_feat,
        )?);
    }
    Ok((trees, grouping, d_feat))
}

type Records = Vec<(usize, TreeRecord)>;

fn parse_lines<R: Read>(r: R, require_header: bool) -> Result<(Option<Header>, Records), CorpusError> {
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
                line: line_no,
                message: e.to_string(),
            })?;
            let is_header = value.get("format_version").is_some() || value.get("d_feat").is_some();
            if is_header {
                let h: Header = serde_json::from_value(value).map_err(|e| CorpusError::Header(e.to_string()))?;
                if let Some(v) = h.format_version {
                    if v != CORPUS_FORMAT_VERSION {
                        return Err(CorpusError::Header(format!("unsupported format_version {v}")));
                    }
                }
                header = Some(h);
                continue;
            }
            if require_header {
                return Err(CorpusError::Header("first line is not a header object".into()));
            }
        }
        let rec: TreeRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push((line_no, rec));
    }
    if require_header && header.is_none() {
        return Err(CorpusError::Header("empty file".into()));
    }
    Ok((header, records))
}
