//! JSON messages exchanged over the `/session` WebSocket.

use serde::{Deserialize, Serialize};
use thurston_core::config::{parse_config, Config};
use thurston_core::render::Camera;
use thurston_core::{bundled, Error};

use crate::session::NavCommand;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    /// `config` is a bundled config name, TOML text, or a config object.
    Open { config: serde_json::Value },
    Nav(NavCommand),
    /// Asks for the current full frame again.
    Refresh,
    List,
    Close,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Opened {
        session: u64,
    },
    Frame {
        id: u64,
        w: usize,
        h: usize,
        format: String,
        quality: String,
        data: String,
        camera: CameraPose,
    },
    Error {
        code: String,
        message: String,
    },
    List {
        configs: Vec<String>,
    },
    Closed,
}

/// Camera placement a frame was rendered from, as raw model coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 4],
    pub forward: [f64; 4],
    pub up: [f64; 4],
    pub right: [f64; 4],
}

impl From<&Camera> for CameraPose {
    fn from(c: &Camera) -> Self {
        let [n, u, w] = c.frame.vectors;
        CameraPose {
            position: c.frame.base.0,
            forward: n.0,
            up: u.0,
            right: w.0,
        }
    }
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// Error code reported to clients for a core error.
pub fn error_code(e: &Error) -> &'static str {
    match e {
        Error::ChartStall => "chart-stall",
        Error::UnknownManifold { .. } => "unknown-manifold",
        Error::Parse { .. } | Error::Schema { .. } | Error::Invalid(_) => "config-error",
        _ => "internal",
    }
}

pub fn resolve_config(value: &serde_json::Value) -> Result<Config, Error> {
    match value {
        serde_json::Value::String(s) => match bundled::get(s) {
            Some(text) => parse_config(text),
            None if s.contains('[') || s.contains('=') => parse_config(s),
            None => Err(Error::UnknownManifold {
                name: s.clone(),
                field: "config".into(),
            }),
        },
        other => {
            let config: Config = serde_json::from_value(other.clone()).map_err(|e| Error::Parse {
                line: None,
                message: e.to_string(),
            })?;
            config.validate()?;
            Ok(config)
        }
    }
}
