use std::path::PathBuf;

/// Error type shared by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum CldaError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty vocabulary: every word was removed by filtering")]
    EmptyVocabulary,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("corrupt topic data: {0}")]
    Corrupt(String),

    #[error("unscorable document {0}: no in-vocabulary tokens")]
    UnscorableDocument(String),

    #[error("zero probability at document {doc_index}, token {token_index}: topics are unsmoothed")]
    ZeroProbability { doc_index: usize, token_index: usize },

    #[error("missing artifact {0}: run the prerequisite stage first")]
    MissingArtifact(PathBuf),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CldaError>,
    },
}

impl CldaError {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        CldaError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CldaError>;
