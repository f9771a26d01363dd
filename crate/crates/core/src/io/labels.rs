//! Phase labels: one non-negative integer per line, frame order.

use std::path::Path;

use super::{read_text, write_bytes};
use crate::error::{Error, Result};

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(path, format!("line {}: {:?} is not a phase index", i + 1, l.trim())))
        })
        .collect()
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&read_text(path)?, path)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    write_bytes(path, format_labels(labels).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let labels = vec![0, 0, 3, 12, 1];
        assert_eq!(format_labels(&labels), "0\n0\n3\n12\n1\n");
        assert_eq!(parse_labels(&format_labels(&labels), Path::new("l")).unwrap(), labels);
    }

    #[test]
    fn tolerates_whitespace_rejects_garbage() {
        let p = Path::new("l");
        assert_eq!(parse_labels(" 1\r\n2\n\n", p).unwrap(), vec![1, 2]);
        let err = parse_labels("1\n-2\n", p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_labels("1.5\n", p).is_err());
    }
}
