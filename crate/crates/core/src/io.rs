//! Output helpers: files are written under a temporary name next to the
//! destination and renamed into place, so readers never see partial output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::seq::RawSequence;

fn temp_name(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = temp_name(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn fasta_text(seqs: &[RawSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        let _ = writeln!(out, ">{}\n{}", s.id, s.bases);
    }
    out
}

/// `sequence<TAB>label` rows.
pub fn tsv_text(seqs: &[RawSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        let _ = writeln!(out, "{}\t{}", s.bases, s.label);
    }
    out
}

pub fn write_fasta(path: &Path, seqs: &[RawSequence]) -> Result<()> {
    write_atomic(path, fasta_text(seqs).as_bytes())
}

pub fn write_tsv(path: &Path, seqs: &[RawSequence]) -> Result<()> {
    write_atomic(path, tsv_text(seqs).as_bytes())
}
