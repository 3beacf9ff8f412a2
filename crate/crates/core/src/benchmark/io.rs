//! CSV data files with a JSON metadata sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::dataset::{DataSet, DatasetMeta};
use crate::error::{Error, Result};

/// `est.csv` -> `est.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn csv_header(n_u: usize, n_y: usize, n_p: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=n_u).map(|i| format!("u_{i}")));
    cols.extend((1..=n_y).map(|i| format!("y_{i}")));
    cols.extend((1..=n_p).map(|i| format!("p_{i}")));
    cols.join(",")
}

pub fn write_dataset(ds: &DataSet, csv: &Path) -> Result<()> {
    let file = std::fs::File::create(csv).map_err(|e| Error::io(csv, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(csv, e);
    writeln!(w, "{}", csv_header(ds.n_u(), ds.n_y(), ds.n_p())).map_err(io)?;
    for k in 0..ds.len() {
        let mut line = k.to_string();
        let fields = ds.u_at(k).iter().chain(ds.y_at(k)).chain(ds.p_at(k).unwrap_or(&[]));
        for v in fields {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let meta = meta_path(csv);
    std::fs::write(&meta, serde_json::to_string_pretty(&ds.meta)?).map_err(|e| Error::io(&meta, e))
}

/// Reads a data file; the sidecar is optional.
pub fn read_dataset(csv: &Path) -> Result<DataSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv)
        .map_err(|e| malformed_csv(csv, e))?;
    let headers = reader.headers().map_err(|e| malformed_csv(csv, e))?.clone();
    let malformed = |line: u64, message: String| Error::Malformed {
        path: csv.to_path_buf(),
        line,
        message,
    };
    if headers.get(0) != Some("k") {
        return Err(malformed(1, "first column must be `k`".into()));
    }
    let mut kinds = Vec::new();
    for (i, name) in headers.iter().enumerate().skip(1) {
        let kind = name
            .split_once('_')
            .and_then(|(prefix, idx)| idx.parse::<usize>().ok().map(|_| prefix))
            .filter(|p| matches!(*p, "u" | "y" | "p"))
            .ok_or_else(|| malformed(1, format!("unexpected column {name:?} at position {}", i + 1)))?;
        kinds.push(kind.chars().next().expect("non-empty prefix"));
    }
    let count = |c: char| kinds.iter().filter(|k| **k == c).count();
    let (n_u, n_y, n_p) = (count('u'), count('y'), count('p'));
    let expected: Vec<char> = std::iter::repeat_n('u', n_u)
        .chain(std::iter::repeat_n('y', n_y))
        .chain(std::iter::repeat_n('p', n_p))
        .collect();
    if kinds != expected {
        return Err(malformed(1, "columns must be ordered k, u_*, y_*, p_*".into()));
    }
    let (mut u, mut y, mut p) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| malformed_csv(csv, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(malformed(line, format!("{} fields, expected {}", record.len(), headers.len())));
        }
        for (i, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("not a number: {field:?}")))?;
            match kinds[i - 1] {
                'u' => u.push(v),
                'y' => y.push(v),
                _ => p.push(v),
            }
        }
    }
    let p = (n_p > 0).then_some((n_p, p));
    let mut ds = DataSet::with_scheduling(n_u, u, n_y, y, p)?;
    let meta = meta_path(csv);
    if meta.exists() {
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        ds.meta = serde_json::from_str::<DatasetMeta>(&text)?;
    }
    Ok(ds)
}

fn malformed_csv(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(e),
        _ => Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut ds = DataSet::with_scheduling(
            1,
            vec![0.1, -1.0 / 3.0, 1e-300],
            1,
            vec![std::f64::consts::PI, 2.0, -0.0],
            Some((1, vec![1.0, 0.5, 0.25])),
        )
        .unwrap();
        ds.meta = DatasetMeta::for_role("est");
        write_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("k,u_1,y_1,p_1\n0,"));
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn malformed_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "k,u_1,y_1\n0,1,2\n1,x,3\n").unwrap();
        match read_dataset(&path) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "k,u_1,q_1\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Malformed { line: 1, .. })));
    }
}
