use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::crossval::CrossvalResult;
use crate::dqn::write_curve_csv;
use crate::error::{Error, Result};

/// Tab-separated table: one row per run, MAP and mean Return columns.
/// Runs without interaction show `-` for Return.
pub fn format_table(results: &[CrossvalResult]) -> String {
    let mut out = String::from("policy\tMAP\tReturn\n");
    for r in results {
        let ret = r.mean_return.map_or_else(|| "-".to_owned(), |v| format!("{v:.2}"));
        let _ = writeln!(out, "{}\t{:.4}\t{}", r.label, r.map, ret);
    }
    out
}

/// File-name-safe form of a run label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `table.tsv`, `results.json` and `curve_<label>.csv` for every run
/// that produced a learning curve. Returns the paths written.
pub fn report(results: &[CrossvalResult], dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::invalid("nothing to report"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let table = dir.join("table.tsv");
    std::fs::write(&table, format_table(results)).map_err(|e| Error::io(&table, e))?;
    written.push(table);
    let json = dir.join("results.json");
    let mut body = serde_json::to_string_pretty(results)?;
    body.push('\n');
    std::fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
    written.push(json);
    for r in results.iter().filter(|r| !r.curve.is_empty()) {
        let path = dir.join(format!("curve_{}.csv", slug(&r.label)));
        write_curve_csv(&path, &r.curve)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads back the `results.json` written by [`report`].
pub fn load_results(path: &Path) -> Result<Vec<CrossvalResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::CurvePoint;
    use crate::experiment::crossval::{FoldResult, QueryResult};

    fn run(label: &str, ret: Option<f64>, curve: usize) -> CrossvalResult {
        let q = QueryResult {
            qid: "q1".into(),
            ap: 0.5,
            ret,
        };
        let curve = (0..curve)
            .map(|i| CurvePoint {
                epoch: i + 1,
                mean_return: 1.0,
                mean_map: 0.5,
                epsilon: 0.1,
            })
            .collect();
        CrossvalResult::new(label.into(), vec![FoldResult::new(0, vec![q])], curve)
    }

    #[test]
    fn table_layout() {
        let t = format_table(&[run("firstpass", None, 0), run("oracle", Some(12.345), 0)]);
        assert_eq!(t, "policy\tMAP\tReturn\nfirstpass\t0.5000\t-\noracle\t0.5000\t12.35\n");
    }

    #[test]
    fn files_and_rerun_identity() {
        let dir = tempfile::tempdir().unwrap();
        let runs: Vec<_> = [1, 5, 10, 50, 100]
            .iter()
            .map(|n| run(&format!("dqn N={n}"), Some(3.0), 2))
            .collect();
        let a = report(&runs, dir.path()).unwrap();
        assert_eq!(a.iter().filter(|p| p.extension().unwrap() == "csv").count(), 5);
        let before: Vec<Vec<u8>> = a.iter().map(|p| std::fs::read(p).unwrap()).collect();
        report(&runs, dir.path()).unwrap();
        let after: Vec<Vec<u8>> = a.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(before, after);
        assert_eq!(load_results(&dir.path().join("results.json")).unwrap(), runs);
        assert!(report(&[], dir.path()).is_err());
    }
}
