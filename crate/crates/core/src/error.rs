use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got {len} elements")]
    NonScalarLoss { len: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("stale gradients: no backward pass since the last update")]
    StaleGradients,
    #[error("objective is not deterministic across probe evaluations")]
    NonDeterministic,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty frequency group {0}")]
    EmptyGroup(&'static str),
    #[error("window side must be odd, got {0}")]
    EvenWindow(usize),
    #[error("pixel ({i}, {j}) outside a {height}x{width} cube")]
    OutOfBounds {
        i: usize,
        j: usize,
        height: usize,
        width: usize,
    },
    #[error("class {class} has {available} labelled pixels, need {needed}")]
    InsufficientSamples {
        class: u16,
        available: usize,
        needed: usize,
    },
    #[error("band count mismatch: expected {expected}, got {got}")]
    BandMismatch { expected: usize, got: usize },
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("label {label} out of range 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("blend coefficient {0} outside [0, 1]")]
    BlendOutOfRange(f64),
    #[error("prototype has zero norm")]
    ZeroPrototype,
    #[error("degenerate pseudo-sets: {positives} positive, {negatives} negative")]
    DegeneratePseudoSets { positives: usize, negatives: usize },
    #[error("detection map is not normalised to [0, 1]")]
    Unnormalized,
    #[error("ground truth needs at least one target and one background pixel")]
    MissingClass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
