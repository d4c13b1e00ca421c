use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A layer's parameters do not fit its input.
    #[error("configuration error{}: {message}", layer_suffix(.layer))]
    Config {
        layer: Option<String>,
        message: String,
    },

    /// The input is too small to survive the strides and pools of a layer.
    #[error("input too small at layer {layer}: {message}")]
    InputTooSmall { layer: String, message: String },

    /// Bad image or tensor handed to an operation.
    #[error("input error: {0}")]
    Input(String),

    /// API misuse: mismatched descriptors, invalid metric configurations.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("weight file corrupted: checksum {stored:#010x} in header, payload hashes to {computed:#010x}")]
    Corrupt { stored: u32, computed: u32 },

    #[error("manifest error for `{entry}`: {message}")]
    Manifest { entry: String, message: String },

    #[error("dataset ingestion failed ({} offender(s)):\n  {}", .offenders.len(), .offenders.join("\n  "))]
    Ingestion { offenders: Vec<String> },

    #[error("failed to decode image {}: {message}", .path.display())]
    Decode { path: PathBuf, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn layer_suffix(layer: &Option<String>) -> String {
    match layer {
        Some(name) => format!(" at layer {name}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config {
            layer: None,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a layer name to a configuration error raised by a kernel.
    pub(crate) fn at_layer(self, name: &str) -> Self {
        match self {
            Error::Config {
                layer: None,
                message,
            } => Error::Config {
                layer: Some(name.to_string()),
                message,
            },
            other => other,
        }
    }
}
