use std::fs;
use std::io::Read;
use std::path::Path;

use cmpdak::estimators::CountSample;

use crate::error::CliError;

/// Counts read from a file, with where they came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub counts: CountSample,
    pub source_path: String,
    pub label: Option<String>,
}

impl Dataset {
    /// Reads `path`, or standard input when `path` is `-`.
    pub fn load(path: &Path, label: Option<String>) -> Result<Self, CliError> {
        let text = if path.as_os_str() == "-" {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::Input(format!("cannot read standard input: {e}")))?;
            s
        } else {
            fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read `{}`: {e}", path.display())))?
        };
        let counts = parse_counts(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(Dataset {
            counts,
            source_path: path.display().to_string(),
            label,
        })
    }
}

fn looks_numeric(s: &str) -> bool {
    s.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.')
}

/// Newline-separated nonnegative integers, or a single-column CSV whose first
/// line may be a header.
pub fn parse_counts(text: &str) -> Result<CountSample, String> {
    let mut values = Vec::new();
    let mut seen_first = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let field = raw.trim();
        if field.is_empty() {
            continue;
        }
        if field.contains(',') {
            return Err(format!("line {line_no}: expected a single column, got `{field}`"));
        }
        let field = field.trim_matches('"').trim();
        let first = !seen_first;
        seen_first = true;
        match field.parse::<u64>() {
            Ok(v) => values.push(v),
            Err(_) if first && !looks_numeric(field) => continue,
            Err(_) => {
                let reason = if field.parse::<f64>().is_ok_and(|v| v < 0.0) {
                    "negative; counts must be nonnegative"
                } else {
                    "not a nonnegative integer"
                };
                return Err(format!("line {line_no}: `{field}` is {reason}"));
            }
        }
    }
    if values.is_empty() {
        return Err("no counts found".into());
    }
    CountSample::new(values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_csv() {
        assert_eq!(parse_counts("1\n2\n\n3\n").unwrap().values(), &[1, 2, 3]);
        assert_eq!(parse_counts("count\n4\n\"5\"\n").unwrap().values(), &[4, 5]);
    }

    #[test]
    fn positional_errors() {
        let e = parse_counts("1\n-2\n").unwrap_err();
        assert!(e.contains("line 2") && e.contains("nonnegative"), "{e}");
        let e = parse_counts("1\n2\n2.5\n").unwrap_err();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_counts("x\ny\n").unwrap_err();
        assert!(e.contains("line 2"), "{e}");
        assert!(parse_counts("a,b\n1,2\n").unwrap_err().contains("line 1"));
        assert!(parse_counts("\n\n").unwrap_err().contains("no counts"));
        assert!(parse_counts("count\n").unwrap_err().contains("no counts"));
        assert!(parse_counts("-1\n").unwrap_err().contains("line 1"));
    }
}
