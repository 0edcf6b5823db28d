use std::io;
use std::path::PathBuf;

use medslot_core::corpus::CorpusError;
use medslot_core::dualsemi::DualError;
use medslot_core::seq2seq::Seq2SeqError;
use medslot_core::slotval::EvalError;

use crate::checkpoint::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {reason}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}: {source}", path.display())]
    Corpus { path: PathBuf, source: CorpusError },
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        source: CheckpointError,
    },
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }

    fn diverged(&self) -> bool {
        matches!(
            self,
            Error::Model(Seq2SeqError::DivergedTraining { .. })
                | Error::Dual(DualError::Model(Seq2SeqError::DivergedTraining { .. }))
        )
    }

    /// 1 for usage errors, 3 for training divergence, 2 for everything
    /// else (bad or unreadable data).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            e if e.diverged() => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
