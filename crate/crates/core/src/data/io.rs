use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetBundle, OverlapMatrix, Rating, RatingMatrix};
use crate::error::{Error, Result};

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `user_id,item_id,rating` lines. Ids are densified in order of first
/// appearance. Blank lines are skipped; with `has_header` the first
/// non-blank line is ignored.
pub fn load_ratings(path: impl AsRef<Path>, domain_id: &str, has_header: bool) -> Result<RatingMatrix> {
    let path = path.as_ref();
    let text = read_lines(path)?;
    let mut users: HashMap<String, usize> = HashMap::new();
    let mut items: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    let mut header_pending = has_header;

    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 3 fields `user_id,item_id,rating`, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_error(path, lineno, "empty user or item id"));
        }
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid rating `{}`", fields[2])))?;
        if !value.is_finite() {
            return Err(parse_error(path, lineno, "rating is not finite"));
        }
        let user = *users.entry(fields[0].to_string()).or_insert_with(|| {
            user_ids.push(fields[0].to_string());
            user_ids.len() - 1
        });
        let item = *items.entry(fields[1].to_string()).or_insert_with(|| {
            item_ids.push(fields[1].to_string());
            item_ids.len() - 1
        });
        if !seen.insert((user, item)) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate entry for user {} item {}",
                path.display(),
                fields[0],
                fields[1]
            )));
        }
        entries.push(Rating { user, item, value });
    }
    RatingMatrix::with_ids(domain_id, user_ids, item_ids, entries)
}

/// Reads `source_user_id,target_user_id` lines against already-loaded
/// rating matrices. Repeated pairs are stored once.
pub fn load_overlap(
    path: impl AsRef<Path>,
    source: &RatingMatrix,
    target: &RatingMatrix,
    has_header: bool,
) -> Result<OverlapMatrix> {
    let path = path.as_ref();
    let text = read_lines(path)?;
    let src_lookup = source.user_lookup();
    let tgt_lookup = target.user_lookup();
    let mut pairs = Vec::new();
    let mut header_pending = has_header;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_error(
                path,
                lineno,
                format!(
                    "expected 2 fields `source_user_id,target_user_id`, found {}",
                    fields.len()
                ),
            ));
        }
        let k = *src_lookup.get(fields[0]).ok_or_else(|| {
            Error::Validation(format!(
                "{}:{lineno}: unknown user `{}` in domain {}",
                path.display(),
                fields[0],
                source.domain_id()
            ))
        })?;
        let u = *tgt_lookup.get(fields[1]).ok_or_else(|| {
            Error::Validation(format!(
                "{}:{lineno}: unknown user `{}` in domain {}",
                path.display(),
                fields[1],
                target.domain_id()
            ))
        })?;
        pairs.push((k, u));
    }
    OverlapMatrix::new(source.domain_id(), pairs, source.n_users(), target.n_users())
}

/// On-disk description of a bundle: one ratings file per domain plus one
/// overlap file per source. Relative paths resolve against the directory
/// holding the descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFiles {
    pub target_domain: String,
    pub target_ratings: PathBuf,
    #[serde(default)]
    pub header: bool,
    #[serde(default)]
    pub sources: Vec<SourceFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFiles {
    pub domain: String,
    pub ratings: PathBuf,
    pub overlap: PathBuf,
}

impl BundleFiles {
    pub fn load(&self, base: &Path) -> Result<DatasetBundle> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let target = load_ratings(resolve(&self.target_ratings), &self.target_domain, self.header)?;
        let mut sources = Vec::with_capacity(self.sources.len());
        let mut overlaps = Vec::with_capacity(self.sources.len());
        for s in &self.sources {
            let src = load_ratings(resolve(&s.ratings), &s.domain, self.header)?;
            overlaps.push(load_overlap(resolve(&s.overlap), &src, &target, self.header)?);
            sources.push(src);
        }
        DatasetBundle::new(target, sources, overlaps)
    }
}

/// Loads a bundle from its TOML descriptor.
pub fn load_bundle(descriptor: impl AsRef<Path>) -> Result<DatasetBundle> {
    let descriptor = descriptor.as_ref();
    let text = read_lines(descriptor)?;
    let files: BundleFiles =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", descriptor.display())))?;
    let base = descriptor.parent().unwrap_or_else(|| Path::new("."));
    files.load(base)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ratings_csv(m: &RatingMatrix) -> String {
    let mut out = String::new();
    for r in m.entries() {
        let _ = writeln!(out, "{},{},{}", m.user_ids()[r.user], m.item_ids()[r.item], r.value);
    }
    out
}

/// Writes every domain as CSV plus a `bundle.toml` descriptor into `dir`.
/// Returns the descriptor path. Users or items with no ratings are not
/// representable in the CSV format and are dropped on reload.
pub fn write_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let target_file = PathBuf::from("target.csv");
    write_file(&dir.join(&target_file), &ratings_csv(&bundle.target))?;
    let mut sources = Vec::new();
    for (p, (src, ov)) in bundle.sources.iter().zip(&bundle.overlaps).enumerate() {
        let ratings = PathBuf::from(format!("source_{}.csv", p + 1));
        let overlap = PathBuf::from(format!("overlap_{}.csv", p + 1));
        write_file(&dir.join(&ratings), &ratings_csv(src))?;
        let mut text = String::new();
        for &(k, u) in ov.pairs() {
            let _ = writeln!(text, "{},{}", src.user_ids()[k], bundle.target.user_ids()[u]);
        }
        write_file(&dir.join(&overlap), &text)?;
        sources.push(SourceFiles {
            domain: src.domain_id().to_string(),
            ratings,
            overlap,
        });
    }
    let files = BundleFiles {
        target_domain: bundle.target.domain_id().to_string(),
        target_ratings: target_file,
        header: false,
        sources,
    };
    let descriptor = dir.join("bundle.toml");
    let text = toml::to_string(&files).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&descriptor, &text)?;
    Ok(descriptor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "a,x,5\nb,x,3\na,y,1.5\n");
        let m = load_ratings(&p, "t", false).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!((m.n_users(), m.n_items()), (2, 2));
        assert_eq!(
            m.entries()[2],
            Rating {
                user: 0,
                item: 1,
                value: 1.5
            }
        );
    }

    #[test]
    fn header_flag_skips_first_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "user_id,item_id,rating\na,x,5\n");
        assert_eq!(load_ratings(&p, "t", true).unwrap().len(), 1);
        assert!(matches!(
            load_ratings(&p, "t", false),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "a,x,5\na,x,4\n");
        assert!(matches!(load_ratings(&p, "t", false), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "a,x,5\n\nb,y\n");
        match load_ratings(&p, "t", false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "r2.csv", "a,x,five\n");
        assert!(matches!(
            load_ratings(&p, "t", false),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "");
        let m = load_ratings(&p, "t", false).unwrap();
        assert_eq!((m.len(), m.n_users(), m.n_items()), (0, 0, 0));
    }

    #[test]
    fn overlap_loading() {
        let dir = tempfile::tempdir().unwrap();
        let src = load_ratings(write(dir.path(), "s.csv", "s1,h,1\ns2,h,1\n"), "s", false).unwrap();
        let tgt = load_ratings(write(dir.path(), "t.csv", "t1,i,1\nt2,i,1\n"), "t", false).unwrap();
        let ov = load_overlap(write(dir.path(), "o.csv", "s1,t2\ns2,t1\n"), &src, &tgt, false).unwrap();
        assert_eq!(ov.len(), 2);
        let ov = load_overlap(write(dir.path(), "o2.csv", "s1,t2\ns1,t2\n"), &src, &tgt, false).unwrap();
        assert_eq!(ov.pairs(), &[(0, 1)]);
        let err = load_overlap(write(dir.path(), "o3.csv", "s9,t1\n"), &src, &tgt, false);
        assert!(matches!(err, Err(Error::Validation(_))));
    }
}
