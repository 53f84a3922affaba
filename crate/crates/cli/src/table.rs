//! Plain fixed-width result tables.

use livefed::query::ResultSet;

/// Header row, one line per row, columns padded to their widest cell and
/// separated by two spaces. With `validators`, a right-hand `validator`
/// column carries each row's stamps and a footer lists the result ETags.
pub fn render(rs: &ResultSet, validators: bool, etag: &str) -> String {
    let mut header: Vec<String> = rs.columns.iter().map(|(n, _)| n.clone()).collect();
    let mut cells: Vec<Vec<String>> = rs.rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
    if validators {
        header.push("validator".into());
        for (i, row) in cells.iter_mut().enumerate() {
            let v = rs.per_row_validators.as_ref().and_then(|v| v.get(i)).cloned().unwrap_or_default();
            row.push(v);
        }
    }
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: &[String]| {
        let parts: Vec<String> = row.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&header));
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row));
        out.push('\n');
    }
    out.push_str(&format!("({} row{})\n", rs.rows.len(), if rs.rows.len() == 1 { "" } else { "s" }));
    if validators {
        let tags: Vec<&str> = etag.split(';').filter(|t| !t.is_empty()).collect();
        out.push_str(format!("ETag: {}", tags.join(" ")).trim_end());
        out.push('\n');
    }
    out
}
