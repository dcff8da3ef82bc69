use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable is not a leaf of this graph")]
    UnknownLeaf,
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),
    #[error("model does not provide an encoder sub-map")]
    NoEncoder,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid experiment plan: {0}")]
    Plan(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("metric undefined: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
