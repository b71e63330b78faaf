//! Flat `key = value` configuration files with `#` comments.
//!
//! Keys are flag names without the leading dashes; `_` and `-` are interchangeable.

use std::collections::BTreeMap;

use crate::error::CliError;

pub fn parse_config(text: &str, source: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{source}: line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("{source}: line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_normalization() {
        let c = parse_config("# run\nlambda_grid = 0.1,1\n\nfolds=3\n", "c").unwrap();
        assert_eq!(c["lambda-grid"], "0.1,1");
        assert_eq!(c["folds"], "3");
        assert!(parse_config("folds 3", "c").is_err());
        assert!(parse_config("folds = 3\nfolds = 4", "c").is_err());
    }
}
