//! On-disk formats: the binary embedding-matrix file and the line-delimited
//! JSON corpus file.
//!
//! Matrix layout (all little-endian): 8-byte magic `ESPEWEMB`, `u32` version
//! (1), `u64` rows, `u64` dim, then `rows * dim` `f64` values row-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"ESPEWEMB";
pub const MATRIX_VERSION: u32 = 1;

pub fn write_matrix<W: Write>(mut w: W, m: &EmbeddingMatrix) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_u32::<LittleEndian>(MATRIX_VERSION)?;
    w.write_u64::<LittleEndian>(m.rows() as u64)?;
    w.write_u64::<LittleEndian>(m.dim() as u64)?;
    for &v in m.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format("bad magic, not an embedding matrix file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported matrix version {version}")));
    }
    let rows = usize::try_from(r.read_u64::<LittleEndian>()?)
        .map_err(|_| Error::Format("row count overflows usize".into()))?;
    let dim = usize::try_from(r.read_u64::<LittleEndian>()?)
        .map_err(|_| Error::Format("dim overflows usize".into()))?;
    let len = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("rows * dim overflows".into()))?;
    let mut data = vec![0.0; len];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after matrix payload".into()));
    }
    EmbeddingMatrix::new(rows, dim, data)
}

pub fn save_matrix(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m)
}

pub fn load_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    read_matrix(BufReader::new(File::open(path)?))
}

#[derive(Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    text: String,
}

/// Reads one `{"id", "text"}` record per line; blank lines are skipped.
/// Records that tokenize to nothing are rejected.
pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("corpus line {}: {e}", lineno + 1)))?;
        let doc = Document::from_text(rec.id, &rec.text);
        if doc.is_empty() {
            return Err(Error::Format(format!(
                "corpus line {}: document '{}' has no tokens",
                lineno + 1,
                doc.id
            )));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus<W: Write>(mut w: W, docs: &[Document]) -> Result<()> {
    for doc in docs {
        let rec = CorpusRecord {
            id: doc.id.clone(),
            text: doc.text(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    read_corpus(BufReader::new(File::open(path)?))
}

pub fn save_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    write_corpus(BufWriter::new(File::create(path)?), docs)
}
