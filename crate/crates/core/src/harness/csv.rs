//! CSV emission: comma-separated, `.` decimal via Rust's float Display,
//! one `#schema=v1` line first, optional `#` comment lines, then the
//! header row.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

pub const SCHEMA_LINE: &str = "#schema=v1";

/// Renders a table to CSV text. Cells are written verbatim; numeric cells
/// should come from [`cell`].
pub fn csv_text(comments: &[&str], header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(SCHEMA_LINE);
    out.push('\n');
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "row width must match header");
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, comments: &[&str], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    std::fs::write(path, csv_text(comments, header, rows))?;
    Ok(())
}

/// Formats a float cell. Display prints the shortest digits that round-trip,
/// which keeps the output deterministic and diff-friendly.
pub fn cell<T: std::fmt::Display>(v: T) -> String {
    v.to_string()
}
