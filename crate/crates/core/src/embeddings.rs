//! Plain-text pretrained vectors: `token v1 v2 ... vd` per line.

use std::path::Path;

use crate::error::{RatError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl Embeddings {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(t, _)| t == token)
            .map(|(_, v)| v.as_slice())
    }
}

pub fn parse_embeddings(text: &str) -> Result<Embeddings> {
    let mut dim = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        let values = parts
            .map(|p| match p.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(RatError::Config(format!(
                    "embeddings line {}: bad value {p:?}",
                    i + 1
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(RatError::Config(format!(
                "embeddings line {}: no values",
                i + 1
            )));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(RatError::Config(format!(
                    "embeddings line {}: {} values, expected {d}",
                    i + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        entries.push((token.to_string(), values));
    }
    Ok(Embeddings {
        dim: dim.unwrap_or(0),
        entries,
    })
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    let text = std::fs::read_to_string(path).map_err(|e| RatError::io(path, e))?;
    parse_embeddings(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_checks_dimensions() {
        let e = parse_embeddings("a 1 2\nb 0.5 -1e-3\n\n").unwrap();
        assert_eq!(e.dim, 2);
        assert_eq!(e.get("b"), Some(&[0.5, -1e-3][..]));
        assert!(parse_embeddings("a 1 2\nb 1").is_err());
        assert!(parse_embeddings("a 1 x").is_err());
        assert!(parse_embeddings("a NaN").is_err());
        assert!(parse_embeddings("a").is_err());
        assert_eq!(parse_embeddings("").unwrap().entries.len(), 0);
    }
}
