//! Quality scores and labelled comparisons as CSV.
//!
//! Scores: `sample_id,quality`. Pairs: `id_a,id_b,similarity,label` with
//! label `G` (genuine) or `I` (impostor). A header row is optional in both.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{Comparison, ComparisonSet, Label};

const SCORE_HEADER: [&str; 2] = ["sample_id", "quality"];
const PAIR_HEADER: [&str; 4] = ["id_a", "id_b", "similarity", "label"];

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads every record, skipping an optional header, and returns the fields
/// with their 1-based line numbers.
fn read_records(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if i == 0
            && fields
                .iter()
                .map(|s| s.to_ascii_lowercase())
                .eq(header.iter().map(|s| s.to_string()))
        {
            continue;
        }
        if fields.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        out.push((line, fields));
    }
    Ok(out)
}

fn parse_value(path: &Path, line: u64, what: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what} `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{what} `{s}` is not finite")));
    }
    Ok(v)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let mut scores = BTreeMap::new();
    for (line, f) in read_records(path, &SCORE_HEADER)? {
        let q = parse_value(path, line, "quality", &f[1])?;
        if f[0].is_empty() {
            return Err(parse_err(path, line, "empty sample id"));
        }
        if scores.insert(f[0].clone(), q).is_some() {
            return Err(Error::DuplicateSample {
                path: path.to_path_buf(),
                line,
                id: f[0].clone(),
            });
        }
    }
    Ok(scores)
}

/// Reads scores and pairs. Every id named in a pair must have a score.
pub fn read_comparison_set(
    scores_path: impl AsRef<Path>,
    pairs_path: impl AsRef<Path>,
) -> Result<ComparisonSet> {
    let scores = read_scores(scores_path)?;
    let path = pairs_path.as_ref();
    let mut comparisons = Vec::new();
    for (line, f) in read_records(path, &PAIR_HEADER)? {
        for id in &f[..2] {
            if !scores.contains_key(id) {
                return Err(Error::UnknownSample {
                    path: path.to_path_buf(),
                    line,
                    id: id.clone(),
                });
            }
        }
        let similarity = parse_value(path, line, "similarity", &f[2])?;
        let label = match f[3].as_str() {
            "G" | "g" => Label::Genuine,
            "I" | "i" => Label::Impostor,
            other => {
                return Err(parse_err(
                    path,
                    line,
                    format!("label `{other}` is not G or I"),
                ))
            }
        };
        comparisons.push(Comparison {
            a: f[0].clone(),
            b: f[1].clone(),
            similarity,
            label,
        });
    }
    ComparisonSet::new(scores, comparisons)
}

/// Writes `sample_id,quality` rows with a header.
pub fn write_scores(path: impl AsRef<Path>, scores: &[(String, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("sample_id,quality\n");
    for (id, q) in scores {
        out.push_str(&format!("{id},{q}\n"));
    }
    File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn files(
        scores: &str,
        pairs: &str,
    ) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("scores.csv");
        let p = dir.path().join("pairs.csv");
        fs::write(&s, scores).unwrap();
        fs::write(&p, pairs).unwrap();
        (dir, s, p)
    }

    #[test]
    fn reads_with_and_without_headers() {
        let (_d, s, p) = files(
            "sample_id,quality\nA,0.1\nB,0.9\n",
            "A,B,0.7,G\nB,A,0.2,I\n",
        );
        let set = read_comparison_set(&s, &p).unwrap();
        assert_eq!(set.comparisons().len(), 2);
        assert_eq!(set.qualities()["B"], 0.9);
        assert_eq!(set.comparisons()[1].label, Label::Impostor);
    }

    #[test]
    fn unknown_id_reports_line() {
        let (_d, s, p) = files(
            "A,0.1\nB,0.2\n",
            "id_a,id_b,similarity,label\nA,B,0.5,G\nA,Z,0.1,I\n",
        );
        match read_comparison_set(&s, &p) {
            Err(Error::UnknownSample { line, id, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(id, "Z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_malformed_rows() {
        let (_d, s, p) = files("A,0.1\nA,0.2\n", "A,A,0.5,G\n");
        assert!(matches!(
            read_comparison_set(&s, &p),
            Err(Error::DuplicateSample { line: 2, .. })
        ));
        let (_d, s, p) = files("A,0.1\nB,x\n", "A,B,0.5,G\n");
        assert!(matches!(
            read_comparison_set(&s, &p),
            Err(Error::Parse { line: 2, .. })
        ));
        let (_d, s, p) = files("A,0.1\nB,0.2\n", "A,B,0.5,G,extra\n");
        assert!(matches!(
            read_comparison_set(&s, &p),
            Err(Error::Parse { line: 1, .. })
        ));
        let (_d, s, p) = files("A,0.1\nB,0.2\n", "A,B,0.5,X\n");
        assert!(matches!(
            read_comparison_set(&s, &p),
            Err(Error::Parse { .. })
        ));
        let (_d, s, p) = files("A,nan\n", "A,A,0.5,G\n");
        assert!(read_comparison_set(&s, &p).is_err());
    }

    #[test]
    fn write_then_read_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let rows = vec![("x".to_string(), 0.125), ("y".to_string(), -1.5e-7)];
        write_scores(&path, &rows).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(back["x"], 0.125);
        assert_eq!(back["y"], -1.5e-7);
    }
}
