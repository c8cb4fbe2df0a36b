//! TREC run file reading and writing.
//!
//! The writer emits the extended 7-column form
//! `qid Q0 docid rank score tag lang`, one file per query language named
//! `<tag>.<lang>.run`. The reader also accepts the classic 6-column form,
//! taking the language from the `<tag>.<lang>.run` file name.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::corpus::LanguageCode;
use crate::error::{Error, Result};
use crate::metrics::{RankedList, Run};

/// Write one run file per query language into `dir`, named
/// `<tag>.<lang>.run`. Lines are sorted by qid, then rank. Returns the
/// written paths.
pub fn write_run_files(run: &Run, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for lang in run.languages() {
        let path = dir.join(format!("{}.{}.run", run.tag(), lang));
        let mut w = BufWriter::new(File::create(&path)?);
        for list in run.iter().filter(|l| l.qlang() == &lang) {
            write_list(&mut w, list, run.tag())?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_list<W: Write>(w: &mut W, list: &RankedList, tag: &str) -> Result<()> {
    for (rank, (docid, score)) in list.entries().iter().enumerate() {
        writeln!(
            w,
            "{} Q0 {} {} {} {} {}",
            list.qid(),
            docid,
            rank + 1,
            score,
            tag,
            list.qlang()
        )?;
    }
    Ok(())
}

/// Infer the query language from a `<tag>.<lang>.run` file name.
fn lang_from_filename(path: &Path) -> Option<LanguageCode> {
    let stem = path.file_stem()?.to_str()?;
    let candidate = stem.rsplit('.').next()?;
    LanguageCode::new(candidate).ok()
}

/// Read one or more run files into a single [`Run`]. All files must carry
/// the same tag; each (qid, qlang) may appear in only one file.
pub fn read_run_files<I, P>(paths: I) -> Result<Run>
where
    I: IntoIterator<Item = P>,
    P: AsRef<Path>,
{
    struct PendingEntry {
        rank: usize,
        docid: String,
        score: f64,
    }
    let mut tag: Option<String> = None;
    let mut pending: BTreeMap<(String, LanguageCode), Vec<PendingEntry>> = BTreeMap::new();

    for path in paths {
        let path = path.as_ref();
        let path_str = path.display().to_string();
        let fallback_lang = lang_from_filename(path);
        let reader = BufReader::new(File::open(path)?);
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 && cols.len() != 7 {
                return Err(Error::parse(
                    &path_str,
                    lineno,
                    format!("expected 6 or 7 fields, got {}", cols.len()),
                ));
            }
            let rank: usize = cols[3]
                .parse()
                .map_err(|_| Error::parse(&path_str, lineno, format!("bad rank {:?}", cols[3])))?;
            let score: f64 = cols[4]
                .parse()
                .map_err(|_| Error::parse(&path_str, lineno, format!("bad score {:?}", cols[4])))?;
            let line_tag = cols[5];
            match &tag {
                None => tag = Some(line_tag.to_string()),
                Some(t) if t != line_tag => {
                    return Err(Error::parse(
                        &path_str,
                        lineno,
                        format!("inconsistent run tag {line_tag:?} (expected {t:?})"),
                    ))
                }
                _ => {}
            }
            let lang = if cols.len() == 7 {
                LanguageCode::new(cols[6]).map_err(|e| Error::parse(&path_str, lineno, e.to_string()))?
            } else {
                fallback_lang.clone().ok_or_else(|| {
                    Error::parse(
                        &path_str,
                        lineno,
                        "6-column line needs a <tag>.<lang>.run file name to infer the language",
                    )
                })?
            };
            pending
                .entry((cols[0].to_string(), lang))
                .or_default()
                .push(PendingEntry {
                    rank,
                    docid: cols[2].to_string(),
                    score,
                });
        }
    }

    let mut run = Run::new(tag.unwrap_or_default());
    for ((qid, lang), mut entries) in pending {
        entries.sort_by_key(|e| e.rank);
        for (i, e) in entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::InvalidConfig(format!(
                    "run list ({qid}, {lang}): ranks must be contiguous from 1, found {}",
                    e.rank
                )));
            }
        }
        let list = RankedList::new(
            qid,
            lang,
            entries.into_iter().map(|e| (e.docid, e.score)).collect(),
        )?;
        run.insert(list)?;
    }
    Ok(run)
}

/// Read every `*.run` file in a directory (sorted by name) into one run.
pub fn read_run_dir(dir: impl AsRef<Path>) -> Result<Run> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "run"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no .run files in {}",
            dir.as_ref().display()
        )));
    }
    read_run_files(paths)
}
