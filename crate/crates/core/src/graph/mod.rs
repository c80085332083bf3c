//! Rooted discussion trees, topology queries, and the JSON-lines corpus format.

mod corpus;
mod forest;
mod tree;

use thiserror::Error;

pub use corpus::{
    read_corpus, read_corpus_from, read_discussions, write_corpus, write_corpus_to, CommunityGrouping, Corpus,
    CorpusError,
};
pub use forest::Forest;
pub use tree::{validate_tree, Comment, DiscussionTree, ValidationError, Violation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown comment id {0:?}")]
    UnknownId(String),
    #[error("comments {0:?} and {1:?} are in different components")]
    Disconnected(String, String),
    #[error("node {0} lies on a parent cycle")]
    Cycle(usize),
    #[error("node {0} has an out-of-range parent index")]
    BadParentIndex(usize),
}
