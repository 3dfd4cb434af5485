use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task tag prepended to text so one encoder can serve asymmetric retrieval
/// and symmetric similarity without conflicting signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SearchQuery,
    SearchDocument,
    Classification,
    Clustering,
}

pub const PREFIX_SEPARATOR: &str = ": ";

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::SearchQuery,
        TaskKind::SearchDocument,
        TaskKind::Classification,
        TaskKind::Clustering,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            TaskKind::SearchQuery => "search_query",
            TaskKind::SearchDocument => "search_document",
            TaskKind::Classification => "classification",
            TaskKind::Clustering => "clustering",
        }
    }

    /// Only classification embeddings skip L2 normalization.
    pub fn normalizes(self) -> bool {
        self != TaskKind::Classification
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.prefix() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task {s:?}")))
    }
}

/// How a data source's two sides are prefixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairTask {
    /// `search_query` on the query, `search_document` on the document.
    #[default]
    Retrieval,
    /// `classification` on both sides.
    Classification,
    /// `clustering` on both sides.
    Clustering,
}

impl PairTask {
    pub fn query_kind(self) -> TaskKind {
        match self {
            PairTask::Retrieval => TaskKind::SearchQuery,
            PairTask::Classification => TaskKind::Classification,
            PairTask::Clustering => TaskKind::Clustering,
        }
    }

    pub fn document_kind(self) -> TaskKind {
        match self {
            PairTask::Retrieval => TaskKind::SearchDocument,
            other => other.query_kind(),
        }
    }
}

/// `"<prefix>: <text>"`. Not idempotent: apply exactly once per text.
pub fn apply_prefix(task: TaskKind, text: &str) -> String {
    format!("{}{PREFIX_SEPARATOR}{text}", task.prefix())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_prefix() {
        assert_eq!(
            apply_prefix(TaskKind::SearchQuery, "What is the capital of France?"),
            "search_query: What is the capital of France?"
        );
    }

    #[test]
    fn symmetric_tasks_share_prefix() {
        for task in [PairTask::Classification, PairTask::Clustering] {
            assert_eq!(task.query_kind(), task.document_kind());
        }
        let q = apply_prefix(PairTask::Clustering.query_kind(), "a");
        let d = apply_prefix(PairTask::Clustering.document_kind(), "b");
        assert_eq!(q.split(':').next(), d.split(':').next());
        assert_eq!(
            PairTask::Retrieval.document_kind(),
            TaskKind::SearchDocument
        );
    }

    #[test]
    fn double_application_stacks() {
        let once = apply_prefix(TaskKind::Clustering, "t");
        let twice = apply_prefix(TaskKind::Clustering, &once);
        assert_eq!(twice, "clustering: clustering: t");
        assert_ne!(once, twice);
    }

    #[test]
    fn parse_round_trip() {
        for k in TaskKind::ALL {
            assert_eq!(k.prefix().parse::<TaskKind>().unwrap(), k);
        }
        assert!(!TaskKind::Classification.normalizes());
        assert!(TaskKind::SearchQuery.normalizes());
    }
}
