//! Readers and writers for every on-disk format.
//!
//! Text: embedding TSV, association tables (whitespace separated, header of
//! channel names), id mapping TSV, pair lists, training logs, transformed
//! embeddings and distance matrices. Binary: `CALEMB1` embedding sets,
//! `CALCKPT1` checkpoints and `CALDST1` distance matrices, all little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use cal_core::ingest::{channel_index, IdMapping, RawEdge, MAX_CONFIDENCE};
use cal_core::model::{Layer, N_LAYERS};
use cal_core::pca::PcaProjection;
use cal_core::trainer::TrainLog;
use cal_core::types::{EmbeddingSet, PairSet, Role};
use cal_core::{CalModel, Matrix};

use crate::error::{CliError, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"CALEMB1\n";
pub const CHECKPOINT_MAGIC: &[u8; 9] = b"CALCKPT1\n";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DISTANCE_MAGIC: &[u8; 8] = b"CALDST1\n";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>> + '_> {
    let reader = open(path)?;
    Ok(reader
        .lines()
        .enumerate()
        .map(move |(i, l)| l.map(|l| (i + 1, l)).map_err(|e| CliError::io(path, e))))
}

/// Raw rows of an embedding TSV before reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddings {
    pub ids: Vec<String>,
    pub matrix: Matrix<f32>,
}

/// Reads `id\tv1\t...\tvD` rows. Blank lines are skipped; `header` skips the
/// first line. Columns in errors count from 1 with the id in column 1.
pub fn read_embedding_tsv(path: &Path, header: bool) -> Result<RawEmbeddings> {
    let mut ids = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    let mut width: Option<usize> = None;
    for item in lines(path)?.skip(usize::from(header)) {
        let (line_no, line) = item?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_string();
        let values: Vec<&str> = fields.collect();
        let parse_err = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if id.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        if values.is_empty() {
            return Err(parse_err(format!("row {id:?} has no values")));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(format!("expected {w} values, found {}", values.len())));
            }
            _ => {}
        }
        for (c, v) in values.iter().enumerate() {
            let x: f32 = v.trim().parse().map_err(|_| CliError::Data {
                path: path.to_path_buf(),
                line: line_no,
                column: c + 2,
                message: format!("not a number: {v:?}"),
            })?;
            if !x.is_finite() {
                return Err(CliError::Data {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: c + 2,
                    message: format!("non-finite value {v:?}"),
                });
            }
            data.push(x);
        }
        ids.push(id);
    }
    let Some(width) = width else {
        return Err(cal_core::Error::EmptyData(format!("{} has no embedding rows", path.display())).into());
    };
    let matrix = Matrix::from_vec(ids.len(), width, data)?;
    Ok(RawEmbeddings { ids, matrix })
}

/// Parsed association table, keeping only records whose active channel
/// reaches `min_confidence`.
#[derive(Debug, Clone)]
pub struct AssociationTable {
    pub channels: Vec<String>,
    pub records: Vec<RawEdge>,
    pub total_records: usize,
    pub below_threshold: usize,
}

/// Reads a STRING-style table: a header of two id column names followed by
/// channel names, then one record per line. Ids are resolved with `resolve`;
/// records below threshold are counted but not kept.
pub fn read_associations(
    path: &Path,
    channel: &str,
    min_confidence: u16,
    resolve: &dyn Fn(&str) -> Option<usize>,
) -> Result<AssociationTable> {
    let mut it = lines(path)?;
    let header = loop {
        match it.next() {
            Some(item) => {
                let (_, l) = item?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
            None => return Err(cal_core::Error::EmptyData(format!("{} is empty", path.display())).into()),
        }
    };
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() < 3 {
        return Err(cal_core::Error::Schema(format!(
            "{}: header needs two id columns and at least one channel",
            path.display()
        ))
        .into());
    }
    let channels: Vec<String> = tokens[2..].iter().map(|s| s.to_string()).collect();
    let col = channel_index(&channels, channel)?;
    let mut table = AssociationTable {
        channels,
        records: Vec::new(),
        total_records: 0,
        below_threshold: 0,
    };
    for item in it {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != table.channels.len() + 2 {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {} fields, found {}", table.channels.len() + 2, fields.len()),
            });
        }
        let mut scores = Vec::with_capacity(table.channels.len());
        for (c, f) in fields[2..].iter().enumerate() {
            let s: u16 = f.parse().ok().filter(|&s| s <= MAX_CONFIDENCE).ok_or_else(|| CliError::Data {
                path: path.to_path_buf(),
                line: line_no,
                column: c + 3,
                message: format!("score {f:?} is not an integer in 0..={MAX_CONFIDENCE}"),
            })?;
            scores.push(s);
        }
        table.total_records += 1;
        if scores[col] < min_confidence {
            table.below_threshold += 1;
            continue;
        }
        table.records.push(RawEdge {
            a: resolve(fields[0]),
            b: resolve(fields[1]),
            scores,
        });
    }
    Ok(table)
}

/// Two-column TSV `source\ttarget`; blank lines are skipped.
pub fn read_mapping(path: &Path) -> Result<IdMapping> {
    let mut pairs = Vec::new();
    for item in lines(path)? {
        let (line_no, line) = item?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 2 columns, found {}", f.len()),
            });
        }
        pairs.push((f[0].to_string(), f[1].to_string()));
    }
    Ok(IdMapping::from_pairs(pairs)?)
}

pub fn write_pairs(path: &Path, pairs: &PairSet, embeddings: &EmbeddingSet) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    for (a, b) in pairs.iter() {
        writeln!(w, "{}\t{}\t{}", embeddings.id(a), embeddings.id(b), pairs.role().as_str()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a pair list back; every line must carry the same role.
pub fn read_pairs(path: &Path, embeddings: &EmbeddingSet) -> Result<PairSet> {
    let mut out = Vec::new();
    let mut role = None;
    for item in lines(path)? {
        let (line_no, line) = item?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", f.len())));
        }
        let r = Role::parse(f[2]).ok_or_else(|| bad(format!("unknown role {:?}", f[2])))?;
        if *role.get_or_insert(r) != r {
            return Err(bad("mixed roles in one pair file".into()));
        }
        let idx = |id: &str| embeddings.index_of(id).ok_or_else(|| bad(format!("unknown id {id:?}")));
        out.push((idx(f[0])?, idx(f[1])?));
    }
    Ok(PairSet::new(out, role.unwrap_or(Role::TrainPositive), embeddings.len())?)
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "epoch\tloss\taccuracy\tlr").map_err(io)?;
    for e in &log.epochs {
        writeln!(w, "{}\t{}\t{}\t{}", e.epoch, e.loss, e.accuracy, e.lr).map_err(io)?;
    }
    writeln!(
        w,
        "# summary\tinitial_loss={}\tfinal_loss={}\tfinal_alpha={}\tsteps={}\twall_time_secs={}",
        log.initial_loss,
        log.final_loss().unwrap_or(f64::NAN),
        log.final_alpha,
        log.steps,
        log.wall_time_secs.map(|t| format!("{t:.3}")).unwrap_or_else(|| "na".into()),
    )
    .map_err(io)?;
    w.flush().map_err(io)
}

/// Rows of `vectors` in the embedding TSV layout.
pub fn write_vectors_tsv(path: &Path, ids: &[String], vectors: &Matrix<f32>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    for (id, row) in ids.iter().zip(vectors.iter_rows()) {
        w.write_all(id.as_bytes()).map_err(io)?;
        for x in row {
            write!(w, "\t{x}").map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `1 - cosine` between unit rows.
pub fn distance(vectors: &Matrix<f32>, i: usize, j: usize) -> f32 {
    let d: f64 = vectors.row(i).iter().zip(vectors.row(j)).map(|(a, b)| *a as f64 * *b as f64).sum();
    (1.0 - d) as f32
}

/// Square distance matrix with a header row and column of ids.
pub fn write_distance_tsv(path: &Path, ids: &[String], vectors: &Matrix<f32>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    for id in ids {
        write!(w, "\t{id}").map_err(io)?;
    }
    w.write_all(b"\n").map_err(io)?;
    for (i, id) in ids.iter().enumerate() {
        w.write_all(id.as_bytes()).map_err(io)?;
        for j in 0..ids.len() {
            let d = if i == j { 0.0 } else { distance(vectors, i.min(j), i.max(j)) };
            write!(w, "\t{d}").map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `CALDST1\n`, u32 n, then the strict upper triangle row by row as f32.
pub fn write_distance_bin(path: &Path, vectors: &Matrix<f32>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    let n = vectors.rows();
    w.write_all(DISTANCE_MAGIC).map_err(io)?;
    w.write_all(&u32_of(n, path)?.to_le_bytes()).map_err(io)?;
    for i in 0..n {
        for j in i + 1..n {
            w.write_all(&distance(vectors, i, j).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a `CALDST1` file into a full symmetric matrix.
pub fn read_distance_bin(path: &Path) -> Result<Matrix<f32>> {
    let mut r = ByteReader::open(path)?;
    r.magic(DISTANCE_MAGIC)?;
    let n = r.u32()? as usize;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = r.f32()?;
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    r.finish()?;
    Ok(m)
}

fn u32_of(x: usize, path: &Path) -> Result<u32> {
    u32::try_from(x).map_err(|_| CliError::format(path, format!("{x} does not fit in u32")))
}

struct ByteWriter<'a> {
    w: BufWriter<File>,
    path: &'a Path,
}

impl<'a> ByteWriter<'a> {
    fn create(path: &'a Path) -> Result<Self> {
        Ok(Self { w: create(path)?, path })
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b).map_err(|e| CliError::io(self.path, e))
    }

    fn u32(&mut self, x: usize) -> Result<()> {
        let v = u32_of(x, self.path)?;
        self.bytes(&v.to_le_bytes())
    }

    fn f32s(&mut self, xs: &[f32]) -> Result<()> {
        for x in xs {
            self.bytes(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| CliError::io(self.path, e))
    }
}

struct ByteReader<'a> {
    buf: Vec<u8>,
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let mut buf = Vec::new();
        open(path)?.read_to_end(&mut buf).map_err(|e| CliError::io(path, e))?;
        Ok(Self { buf, pos: 0, path })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CliError::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8]) -> Result<()> {
        if self.take(want.len()).ok() != Some(want) {
            return Err(CliError::format(self.path, "bad magic bytes"));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| CliError::format(self.path, "length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?.to_vec();
        String::from_utf8(raw).map_err(|_| CliError::format(self.path, "id is not UTF-8"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CliError::format(
                self.path,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Whether `path` starts with the `CALEMB1` magic.
pub fn is_embedding_bin(path: &Path) -> Result<bool> {
    let mut head = [0u8; 8];
    let mut f = open(path)?;
    match f.read_exact(&mut head) {
        Ok(()) => Ok(&head == EMBEDDING_MAGIC),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(CliError::io(path, e)),
    }
}

/// `CALEMB1\n`, u32 n, u32 d, n length-prefixed UTF-8 ids, the n x d f32
/// matrix, then the projection: u32 raw_dim (0 when absent), the f32 mean,
/// u32 k, u32 raw_dim, the k x raw_dim f32 components and the f64 explained
/// variance ratio.
pub fn write_embedding_bin(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let mut w = ByteWriter::create(path)?;
    w.bytes(EMBEDDING_MAGIC)?;
    w.u32(set.len())?;
    w.u32(set.dim())?;
    for id in set.ids() {
        w.u32(id.len())?;
        w.bytes(id.as_bytes())?;
    }
    w.f32s(set.vectors().as_slice())?;
    match set.projection() {
        None => w.u32(0)?,
        Some(p) => {
            w.u32(p.raw_dim())?;
            w.f32s(p.mean())?;
            w.u32(p.n_components())?;
            w.u32(p.raw_dim())?;
            w.f32s(p.components().as_slice())?;
            w.bytes(&p.explained_variance_ratio().to_le_bytes())?;
        }
    }
    w.finish()
}

pub fn read_embedding_bin(path: &Path) -> Result<EmbeddingSet> {
    let mut r = ByteReader::open(path)?;
    r.magic(EMBEDDING_MAGIC)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let vectors = Matrix::from_vec(n, d, r.f32s(n * d)?)?;
    let mut set = EmbeddingSet::new(ids, vectors)?;
    let raw_dim = r.u32()? as usize;
    if raw_dim > 0 {
        let mean = r.f32s(raw_dim)?;
        let k = r.u32()? as usize;
        if r.u32()? as usize != raw_dim {
            return Err(CliError::format(path, "projection width does not match its mean"));
        }
        let comps = Matrix::from_vec(k, raw_dim, r.f32s(k * raw_dim)?)?;
        let ratio = r.f64()?;
        set = set.with_projection(PcaProjection::from_parts(mean, comps, ratio)?);
    }
    r.finish()?;
    Ok(set)
}

/// `CALCKPT1\n`, u32 version, u32 d, u32 hidden, f32 alpha_logit, then
/// every parameter tensor in declaration order as u32 length + f32 values.
pub fn write_checkpoint(path: &Path, model: &CalModel<f32>) -> Result<()> {
    let mut w = ByteWriter::create(path)?;
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION as usize)?;
    w.u32(model.dim())?;
    w.u32(model.hidden())?;
    w.bytes(&model.alpha_logit.to_le_bytes())?;
    for (_, t) in model.tensors() {
        w.u32(t.len())?;
        w.f32s(t)?;
    }
    w.finish()
}

pub fn read_checkpoint(path: &Path) -> Result<CalModel<f32>> {
    let mut r = ByteReader::open(path)?;
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CliError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let d = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let alpha_logit = r.f32()?;
    let dims = [(d, hidden), (hidden, hidden), (hidden, hidden), (hidden, d)];
    let mut tensor = |want: usize| -> Result<Vec<f32>> {
        let len = r.u32()? as usize;
        if len != want {
            return Err(CliError::format(path, format!("tensor length {len}, expected {want}")));
        }
        r.f32s(len)
    };
    let mut layers = Vec::with_capacity(N_LAYERS);
    for &(i, o) in &dims {
        layers.push(Layer {
            weight: Matrix::from_vec(o, i, tensor(o * i)?)?,
            bias: tensor(o)?,
            norm_scale: tensor(o)?,
            norm_shift: tensor(o)?,
        });
    }
    r.finish()?;
    Ok(CalModel::from_parts(d, hidden, layers, alpha_logit)?)
}
