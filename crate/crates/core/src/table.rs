//! Pipe-table rendering shared by context schemas and variable snapshots.

use crate::model::Cell;

/// Cells longer than this many characters are truncated.
pub const MAX_CELL_CHARS: usize = 50;
pub const TRUNCATION_MARKER: &str = "…";
/// Columns shown before the rest are elided with `| ... |`.
pub const MAX_COLUMNS: usize = 20;
/// Data rows shown in a prompt rendering.
pub const MAX_ROWS: usize = 3;

pub fn truncate_cell(value: &str) -> String {
    let flat: String = value
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    if flat.chars().count() > MAX_CELL_CHARS {
        let mut out: String = flat.chars().take(MAX_CELL_CHARS).collect();
        out.push_str(TRUNCATION_MARKER);
        out
    } else {
        flat
    }
}

/// Pandas-like display of a single value.
pub fn format_cell(cell: &Cell) -> String {
    match cell {
        Cell::Null => "None".to_string(),
        Cell::Bool(true) => "True".to_string(),
        Cell::Bool(false) => "False".to_string(),
        Cell::Int(i) => i.to_string(),
        Cell::Float(f) => format_float(*f),
        Cell::Text(s) => s.clone(),
    }
}

pub fn format_float(f: f64) -> String {
    if f.is_nan() {
        "nan".to_string()
    } else if f.is_infinite() {
        if f > 0.0 { "inf" } else { "-inf" }.to_string()
    } else if f.fract() == 0.0 && f.abs() < 1e15 {
        format!("{f:.1}")
    } else {
        format!("{f}")
    }
}

/// Maps guest dtype strings (`float64`, `object`, ...) to the short labels
/// used in table headers.
pub fn dtype_label(dtype: &str) -> String {
    let d = dtype.to_ascii_lowercase();
    if d.starts_with("float") {
        "float".into()
    } else if d.starts_with("int") || d.starts_with("uint") {
        "int".into()
    } else if d == "object" || d == "str" || d.starts_with("string") {
        "string".into()
    } else if d.starts_with("bool") {
        "bool".into()
    } else if d.starts_with("datetime") {
        "datetime".into()
    } else {
        dtype.to_string()
    }
}

/// Renders a header line, a dash separator and the given rows. Headers past
/// [`MAX_COLUMNS`] are elided and every cell is truncated. Returns an empty
/// string when there are no headers.
pub fn render_pipe_table(headers: &[String], rows: &[Vec<String>]) -> String {
    if headers.is_empty() {
        return String::new();
    }
    let elide = headers.len() > MAX_COLUMNS;
    let shown = headers.len().min(MAX_COLUMNS);
    let line = |cells: &mut dyn Iterator<Item = String>| {
        let mut parts: Vec<String> = cells.collect();
        if elide {
            parts.push("...".to_string());
        }
        format!("| {} |", parts.join(" | "))
    };
    let header = line(&mut headers[..shown].iter().map(|h| truncate_cell(h)));
    let width = header.chars().count().saturating_sub(2).max(1);
    let mut out = vec![header, format!("|{}|", "-".repeat(width))];
    for row in rows {
        out.push(line(&mut (0..shown).map(|i| {
            row.get(i).map(|c| truncate_cell(c)).unwrap_or_default()
        })));
    }
    out.join("\n")
}

/// Prompt rendering of column-major cells: `name (dtype)` headers and the
/// first [`MAX_ROWS`] rows.
pub fn render_snapshot_table(columns: &[(String, String)], cells: &[Vec<Cell>]) -> String {
    let headers: Vec<String> = columns
        .iter()
        .map(|(name, dtype)| format!("{name} ({})", dtype_label(dtype)))
        .collect();
    let rows = cells.first().map_or(0, Vec::len).min(MAX_ROWS);
    let grid: Vec<Vec<String>> = (0..rows)
        .map(|r| cells.iter().map(|col| format_cell(&col[r])).collect())
        .collect();
    render_pipe_table(&headers, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_char_cell_keeps_fifty_plus_marker() {
        let cell = "x".repeat(60);
        let out = truncate_cell(&cell);
        assert_eq!(out, format!("{}…", "x".repeat(50)));
        assert_eq!(truncate_cell(&"y".repeat(50)), "y".repeat(50));
    }

    #[test]
    fn floats_render_like_pandas() {
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(8.08), "8.08");
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn wide_tables_are_capped_with_elision() {
        let headers: Vec<String> = (0..50).map(|i| format!("c{i} (int)")).collect();
        let rows = vec![(0..50).map(|i| i.to_string()).collect::<Vec<_>>()];
        let out = render_pipe_table(&headers, &rows);
        let header = out.lines().next().unwrap();
        assert_eq!(header.matches(" | ").count() + 1, MAX_COLUMNS + 1);
        assert!(header.ends_with("| ... |"));
        assert!(out.lines().nth(2).unwrap().ends_with("| 19 | ... |"));
    }

    #[test]
    fn no_headers_renders_nothing() {
        assert_eq!(render_pipe_table(&[], &[]), "");
    }

    #[test]
    fn dtype_labels() {
        assert_eq!(dtype_label("float64"), "float");
        assert_eq!(dtype_label("int32"), "int");
        assert_eq!(dtype_label("object"), "string");
        assert_eq!(dtype_label("category"), "category");
    }
}
