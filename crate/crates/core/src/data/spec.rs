//! Network spec files. TOML by default; a document starting with `{` is read
//! as JSON.
//!
//! ```toml
//! layers = [2, 3, 2]
//! profile = [1, 2, 2]   # optional
//! filters = [2, 3, 2]   # optional
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::graph::{ActivationProfile, LayeredShape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: LayeredShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ActivationProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<Vec<u64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    layers: Vec<usize>,
    #[serde(default)]
    profile: Option<Vec<usize>>,
    #[serde(default)]
    filters: Option<Vec<u64>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line on which `field` is defined, if it can be found.
fn field_line(text: &str, field: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start().trim_start_matches(['{', ',', '"']);
        t.starts_with(field)
    })
    .map(|i| i + 1)
}

fn mentioned_field(message: &str) -> Option<String> {
    ["layers", "profile", "filters"]
        .into_iter()
        .find(|f| message.contains(f))
        .map(str::to_string)
}

pub fn parse_network_spec(text: &str) -> Result<NetworkSpec, DataError> {
    let raw: RawSpec = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            DataError::Parse {
                line: Some(e.line()),
                field: mentioned_field(&message),
                message,
            }
        })?
    } else {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let line = e.span().map(|s| line_of(text, s.start));
            let field = line
                .and_then(|l| text.lines().nth(l - 1))
                .and_then(|l| l.split('=').next())
                .map(|k| k.trim().to_string())
                .filter(|k| !k.is_empty())
                .or_else(|| mentioned_field(&message));
            DataError::Parse { line, field, message }
        })?
    };
    validate(text, raw)
}

fn invalid(text: &str, field: &str, message: String) -> DataError {
    DataError::Parse {
        line: field_line(text, field),
        field: Some(field.to_string()),
        message,
    }
}

fn validate(text: &str, raw: RawSpec) -> Result<NetworkSpec, DataError> {
    let layers = LayeredShape::new(raw.layers).map_err(|e| invalid(text, "layers", e.to_string()))?;
    let profile = match raw.profile {
        None => None,
        Some(p) => {
            let p = ActivationProfile(p);
            if p.len() != layers.depth() {
                return Err(invalid(
                    text,
                    "profile",
                    format!("{} entries for {} layers", p.len(), layers.depth()),
                ));
            }
            if let Some(i) = p.counts().iter().zip(layers.sizes()).position(|(a, n)| a > n) {
                return Err(invalid(
                    text,
                    "profile",
                    format!(
                        "layer {} has {} active nodes but only {} nodes",
                        i + 1,
                        p.counts()[i],
                        layers.width(i + 1)
                    ),
                ));
            }
            Some(p)
        }
    };
    if let Some(f) = &raw.filters {
        if f.len() != layers.depth() {
            return Err(invalid(
                text,
                "filters",
                format!("{} entries for {} layers", f.len(), layers.depth()),
            ));
        }
    }
    Ok(NetworkSpec {
        layers,
        profile,
        filters: raw.filters,
    })
}

pub fn read_network_spec(path: &Path) -> Result<NetworkSpec, DataError> {
    parse_network_spec(&std::fs::read_to_string(path)?)
}

pub fn write_network_spec(spec: &NetworkSpec) -> String {
    toml::to_string(spec).expect("network specs always serialize")
}
