//! Text container for trained models and embedding tables.
//!
//! A container is a block of `key=value` header lines ending with
//! `arrays=<n>`, followed by `n` array lines of the form
//! `name shape d1,d2[,d3] values v1 v2 ...`. Values are written with 17
//! significant digits, so a saved model reloads bit for bit.

use std::path::Path;

use crate::arch::{ArchSpec, Model};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::grad::{ParamArray, ParamStore, Tensor};
use crate::hyper::HyperConfig;
use crate::io::write_atomic;
use crate::kv::{render, KvMap};

pub const FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "seqbind-model";
const EMBEDDING_FORMAT: &str = "seqbind-embedding";
/// Array holding a frozen word2vec table inside a model container.
const TABLE_ARRAY: &str = "embedding_table";

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn array_line(name: &str, t: &Tensor) -> String {
    let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    let mut line = format!("{name} shape {} values", shape.join(","));
    for &v in t.data() {
        line.push(' ');
        line.push_str(&fmt_value(v));
    }
    line.push('\n');
    line
}

fn render_container(mut header: Vec<(String, String)>, arrays: &[(&str, &Tensor)]) -> String {
    header.push(("arrays".into(), arrays.len().to_string()));
    let mut out = render(&header);
    for (name, t) in arrays {
        out.push_str(&array_line(name, t));
    }
    out
}

struct Parsed {
    header: KvMap,
    arrays: Vec<(String, Tensor)>,
}

fn parse_array(line: &str, origin: &str, n: usize) -> Result<(String, Tensor)> {
    let err = |msg: String| Error::parse(origin, n, msg);
    let mut it = line.split_ascii_whitespace();
    let name = it.next().ok_or_else(|| err("empty array line".into()))?;
    if it.next() != Some("shape") {
        return Err(err(format!("array {name}: expected \"shape\"")));
    }
    let shape: Vec<usize> = it
        .next()
        .ok_or_else(|| err(format!("array {name}: missing shape")))?
        .split(',')
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(format!("array {name}: bad shape: {e}")))?;
    if it.next() != Some("values") {
        return Err(err(format!("array {name}: expected \"values\"")));
    }
    let data: Vec<f64> = it
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(format!("array {name}: bad value: {e}")))?;
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(err(format!("array {name}: shape holds {expected} values, found {}", data.len())));
    }
    Ok((name.to_string(), Tensor::new(shape, data)))
}

fn parse_container(text: &str, origin: &str, format: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate();
    let mut header_text = String::new();
    let mut count = None;
    for (i, line) in lines.by_ref() {
        if let Some(n) = line.strip_prefix("arrays=") {
            count = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::parse(origin, i + 1, format!("bad array count: {e}")))?,
            );
            break;
        }
        if !line.trim().is_empty() && !line.contains('=') {
            return Err(Error::parse(origin, i + 1, format!("expected key=value, got {line:?}")));
        }
        header_text.push_str(line);
        header_text.push('\n');
    }
    let count = count.ok_or_else(|| Error::parse(origin, text.lines().count().max(1), "missing arrays= line"))?;
    let header = KvMap::parse(&header_text)?;
    match header.opt("format") {
        Some(f) if f == format => {}
        other => {
            return Err(Error::parse(
                origin,
                1,
                format!("expected format={format}, found {}", other.unwrap_or("nothing")),
            ))
        }
    }
    let version: u32 = header.get("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(origin, 2, format!("unsupported container version {version}")));
    }
    let mut arrays = Vec::with_capacity(count);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if arrays.len() == count {
            return Err(Error::parse(origin, i + 1, "more arrays than declared"));
        }
        arrays.push(parse_array(line, origin, i + 1)?);
    }
    if arrays.len() != count {
        return Err(Error::parse(
            origin,
            text.lines().count(),
            format!("declared {count} arrays, found {}", arrays.len()),
        ));
    }
    Ok(Parsed { header, arrays })
}

fn prefixed(pairs: Vec<(String, String)>, prefix: &str) -> Vec<(String, String)> {
    pairs.into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect()
}

pub fn model_text(model: &Model) -> String {
    let mut header = vec![
        ("format".to_string(), MODEL_FORMAT.to_string()),
        ("version".into(), FORMAT_VERSION.to_string()),
        ("seq_len".into(), model.seq_len.to_string()),
        ("trained_steps".into(), model.trained_steps.to_string()),
        (
            "embedding".into(),
            if model.embedding.is_some() { "table" } else { "none" }.to_string(),
        ),
    ];
    header.extend(prefixed(model.spec.to_kv(), "arch."));
    header.extend(prefixed(model.hyper.to_kv(), "hyper."));
    let mut arrays: Vec<(&str, &Tensor)> = model.params.iter().map(|p| (p.name(), p.value())).collect();
    if let Some(t) = &model.embedding {
        arrays.push((TABLE_ARRAY, &t.matrix));
    }
    render_container(header, &arrays)
}

pub fn parse_model(text: &str, origin: &str) -> Result<Model> {
    let Parsed { header, arrays } = parse_container(text, origin, MODEL_FORMAT)?;
    let spec = ArchSpec::from_kv(&header, "arch.")?;
    let hyper = HyperConfig::from_kv(&header, "hyper.")?;
    let mut params = ParamStore::new();
    let mut table = None;
    for (name, t) in arrays {
        if name == TABLE_ARRAY {
            table = Some(EmbeddingTable::new(t)?);
        } else {
            params.add(ParamArray::new(name, t, false))?;
        }
    }
    match (header.raw("embedding")?, &table) {
        ("table", Some(_)) | ("none", None) => {}
        (declared, _) => {
            return Err(Error::parse(
                origin,
                1,
                format!("header declares embedding={declared} but the table array is {}", if table.is_some() { "present" } else { "absent" }),
            ))
        }
    }
    Model::from_parts(spec, hyper, header.get("seq_len")?, table, params, header.get("trained_steps")?)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, model_text(model).as_bytes())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, &path.display().to_string())
}

/// Stand-alone embedding table with the tokenization it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub k: usize,
    pub stride: usize,
    pub table: EmbeddingTable,
}

pub fn embedding_text(e: &EmbeddingFile) -> String {
    let header = vec![
        ("format".to_string(), EMBEDDING_FORMAT.to_string()),
        ("version".into(), FORMAT_VERSION.to_string()),
        ("k".into(), e.k.to_string()),
        ("stride".into(), e.stride.to_string()),
        ("dim".into(), e.table.dim().to_string()),
    ];
    render_container(header, &[("table", &e.table.matrix)])
}

pub fn parse_embedding(text: &str, origin: &str) -> Result<EmbeddingFile> {
    let Parsed { header, mut arrays } = parse_container(text, origin, EMBEDDING_FORMAT)?;
    let table = match arrays.pop() {
        Some((name, t)) if name == "table" && arrays.is_empty() => EmbeddingTable::new(t)?,
        _ => return Err(Error::parse(origin, 1, "expected a single array named table")),
    };
    let file = EmbeddingFile {
        k: header.get("k")?,
        stride: header.get("stride")?,
        table,
    };
    if file.table.dim() != header.get::<usize>("dim")? || file.table.vocab_size() != crate::seq::unk_index(file.k) + 1 {
        return Err(Error::parse(origin, 1, "table shape does not match k and dim"));
    }
    Ok(file)
}

pub fn save_embedding(e: &EmbeddingFile, path: &Path) -> Result<()> {
    write_atomic(path, embedding_text(e).as_bytes())
}

pub fn load_embedding(path: &Path) -> Result<EmbeddingFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding(&text, &path.display().to_string())
}
