//! Conversion of wide CSV tables into long `series,index,value` rows.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const TIDY_HEADER: &str = "series,index,value";

#[derive(Debug, Clone, PartialEq)]
pub struct TidyRow {
    pub series: String,
    pub index: u64,
    pub value: f64,
}

/// Wide table: an integer index column followed by numeric columns, empty
/// cells meaning "no observation".
#[derive(Debug, Clone, PartialEq)]
pub struct WideTable {
    pub index_name: String,
    pub columns: Vec<String>,
    pub rows: Vec<(u64, Vec<Option<f64>>)>,
}

pub fn read_wide(path: &Path) -> Result<WideTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_wide(&text, path)
}

pub fn parse_wide(text: &str, path: &Path) -> Result<WideTable> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
    let mut names = header.split(',').map(str::to_string);
    let index_name = names.next().filter(|n| !n.is_empty()).ok_or_else(|| malformed(1, "empty header".into()))?;
    let columns: Vec<String> = names.collect();
    let mut rows = Vec::new();
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() + 1 {
            return Err(malformed(no, format!("{} fields, expected {}", fields.len(), columns.len() + 1)));
        }
        let index = fields[0]
            .parse::<u64>()
            .map_err(|_| malformed(no, format!("index {:?} is not a non-negative integer", fields[0])))?;
        let values = fields[1..]
            .iter()
            .map(|f| match f.trim() {
                "" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|_| malformed(no, format!("not a number: {v:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((index, values));
    }
    Ok(WideTable {
        index_name,
        columns,
        rows,
    })
}

/// Long form, one series after the other, skipping empty cells.
pub fn to_tidy(table: &WideTable) -> Vec<TidyRow> {
    let mut out = Vec::new();
    for (c, name) in table.columns.iter().enumerate() {
        for (index, values) in &table.rows {
            if let Some(value) = values[c] {
                out.push(TidyRow {
                    series: name.clone(),
                    index: *index,
                    value,
                });
            }
        }
    }
    out
}

/// Inverse of [`to_tidy`] given the source column order.
pub fn pivot(rows: &[TidyRow], index_name: &str, columns: &[String]) -> WideTable {
    let mut indices: Vec<u64> = rows.iter().map(|r| r.index).collect();
    indices.sort_unstable();
    indices.dedup();
    let mut table: Vec<(u64, Vec<Option<f64>>)> =
        indices.iter().map(|i| (*i, vec![None; columns.len()])).collect();
    for r in rows {
        let row = indices.binary_search(&r.index).expect("index collected above");
        let col = columns.iter().position(|c| *c == r.series).expect("known series");
        table[row].1[col] = Some(r.value);
    }
    WideTable {
        index_name: index_name.to_string(),
        columns: columns.to_vec(),
        rows: table,
    }
}

/// Converts every input table and writes the concatenated long form.
pub fn export_plotdata(inputs: &[&Path], out: &Path) -> Result<usize> {
    let mut rows = Vec::new();
    for path in inputs {
        rows.extend(to_tidy(&read_wide(path)?));
    }
    let file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(out, e);
    writeln!(w, "{TIDY_HEADER}").map_err(io)?;
    for r in &rows {
        writeln!(w, "{},{},{}", r.series, r.index, r.value).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HISTORY: &str = "update,T,batch_loss,val_loss\n0,,,2.5\n1,5,1.5,\n2,5,1.25,0.5\n";

    #[test]
    fn header_only_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let (src, out) = (dir.path().join("p.csv"), dir.path().join("tidy.csv"));
        std::fs::write(&src, "k,y_1,y_hat_1\n").unwrap();
        assert_eq!(export_plotdata(&[&src], &out).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "series,index,value\n");
    }

    #[test]
    fn counts_and_pivot_roundtrip() {
        let t = parse_wide(HISTORY, Path::new("h.csv")).unwrap();
        let tidy = to_tidy(&t);
        let filled: usize = t.rows.iter().map(|(_, v)| v.iter().flatten().count()).sum();
        assert_eq!(tidy.len(), filled);
        assert_eq!(tidy.len(), 6);
        assert_eq!(pivot(&tidy, &t.index_name, &t.columns), t);
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let err = parse_wide("k,a\n0,1\n1,zz\n", Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 3, .. }), "{err}");
        let err = parse_wide("k,a\n0,1,2\n", Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
    }
}
