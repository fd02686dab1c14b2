use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input size {input_size} is not divisible by stride {stride}")]
    IndivisibleInput { input_size: u32, stride: u32 },

    #[error("invalid anchor spec: {0}")]
    AnchorSpec(String),

    #[error("shape mismatch at scale {scale}: {detail}")]
    ShapeMismatch { scale: usize, detail: String },

    #[error("assignment cannot be encoded: {0}")]
    Encode(String),

    #[error("ground-truth center ({cx}, {cy}) lies outside the {size}x{size} input")]
    GtOutsideImage { cx: f64, cy: f64, size: u32 },

    #[error("instance has no labeled keypoints")]
    NoVisibleKeypoints,

    #[error("degenerate ground-truth box (w={w}, h={h})")]
    DegenerateBox { w: f64, h: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fit diverged at step {step}: total loss {total} exceeds 10x initial {initial}")]
    Divergence { step: usize, total: f64, initial: f64 },

    #[error("{path}: {detail}")]
    Format { path: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable identifier used in machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IndivisibleInput { .. } => "indivisible_input",
            Error::AnchorSpec(_) => "anchor_spec",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Encode(_) => "encode",
            Error::GtOutsideImage { .. } => "gt_outside_image",
            Error::NoVisibleKeypoints => "no_visible_keypoints",
            Error::DegenerateBox { .. } => "degenerate_box",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
