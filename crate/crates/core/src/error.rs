use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain is not star-shaped about its centre: {0}")]
    NotStarShaped(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("inadmissible viewpoint: {0}")]
    InadmissibleViewpoint(String),
    #[error("point on the weight singular axis")]
    OnAxis,
    #[error("stencil leaves the valid region at node {0}")]
    StencilOutOfDomain(usize),
    #[error("order {0} exceeds what the ghost layers support")]
    UnsupportedOrder(usize),
    #[error("field is not valid at node {0}")]
    FieldIncomplete(usize),
    #[error("near-singular system: {0}")]
    NearSingular(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("degenerate slice at theta={0}")]
    DegenerateSlice(f64),
    #[error("source support leaves the slice box")]
    SupportOutsideBox,
    #[error("h={h} below the oscillation floor {floor}")]
    OscillationUnderresolved { h: f64, floor: f64 },
    #[error("boundary condition violated: {0}")]
    BcViolated(String),
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),
    #[error("not enough points: {0}")]
    InsufficientPoints(String),
    #[error("field vanishes identically")]
    ZeroField,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("expression error: {0}")]
    Expr(String),
}
