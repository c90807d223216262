use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("world size must be at least 1")]
    EmptyWorld,
    #[error("rank {rank} is outside a world of size {world_size}")]
    RankOutOfRange { rank: u32, world_size: u32 },
    #[error("group lists rank {0} twice")]
    DuplicateMember(u32),
    #[error("group is empty")]
    EmptyGroup,
    #[error("rank {0} is not a member of the parent communicator")]
    NotInCommunicator(u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("rank set holds {0} entries, more than a 16-bit header can count")]
    TooManyRanks(usize),
    #[error("rank {rank} does not fit a group of size {size}")]
    RankOutOfRange { rank: u32, size: u32 },
    #[error("ranks are not strictly ascending at index {0}")]
    NotAscending(usize),
    #[error("flag vector has {flags} entries for {ranks} ranks")]
    FlagCount { flags: usize, ranks: usize },
    #[error("truncated input: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after the rank set")]
    TrailingBytes(usize),
    #[error("padding bits are not zero")]
    DirtyPadding,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
