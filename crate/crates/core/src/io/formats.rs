use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::costs::Embedding;
use crate::error::{Error, Result};
use crate::geom::{BoundingBox, Detection, MotionField};
use crate::tracker::FrameTracks;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"S3EM";
pub const GRID_MAGIC: &[u8; 4] = b"S3GR";
pub const FORMAT_VERSION: u16 = 1;

/// Lines that carry data, with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fields<'a>(line: usize, text: &'a str, expected: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != expected {
        return Err(Error::Parse {
            line,
            message: format!("expected {expected} fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

fn num<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {name} '{s}'"),
    })
}

fn parse_box(line: usize, f: &[&str]) -> Result<BoundingBox> {
    let x1 = num(line, "x1", f[0])?;
    let y1 = num(line, "y1", f[1])?;
    let x2 = num(line, "x2", f[2])?;
    let y2 = num(line, "y2", f[3])?;
    BoundingBox::new(x1, y1, x2, y2).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })
}

/// `frame,x1,y1,x2,y2,confidence,class_id` per line. Each detection's
/// `embedding_row` is its position among the data lines.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out: Vec<Detection> = Vec::new();
    for (line, l) in data_lines(text) {
        let f = fields(line, l, 7)?;
        let frame: i64 = num(line, "frame", f[0])?;
        if let Some(prev) = out.last() {
            if frame < prev.frame {
                return Err(Error::Parse {
                    line,
                    message: format!("frame {frame} after frame {}", prev.frame),
                });
            }
        }
        let bbox = parse_box(line, &f[1..5])?;
        let confidence: f64 = num(line, "confidence", f[5])?;
        let class_id: i64 = num(line, "class_id", f[6])?;
        let mut det = Detection::new(bbox, confidence, class_id, frame).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        det.embedding_row = Some(out.len());
        out.push(det);
    }
    Ok(out)
}

pub fn write_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let [x1, y1, x2, y2] = d.bbox.corners();
        writeln!(s, "{},{x1},{y1},{x2},{y2},{},{}", d.frame, d.confidence, d.class_id).unwrap();
    }
    s
}

/// `frame,track_id,x1,y1,x2,y2` per line, grouped by frame in ascending order.
pub fn parse_tracks(text: &str) -> Result<Vec<FrameTracks>> {
    let mut frames: BTreeMap<i64, Vec<(u64, BoundingBox)>> = BTreeMap::new();
    for (line, l) in data_lines(text) {
        let f = fields(line, l, 6)?;
        let frame: i64 = num(line, "frame", f[0])?;
        let id: u64 = num(line, "track_id", f[1])?;
        if id == 0 {
            return Err(Error::Parse {
                line,
                message: "track ids must be positive".into(),
            });
        }
        let bbox = parse_box(line, &f[2..6])?;
        let tracks = frames.entry(frame).or_default();
        if tracks.iter().any(|t| t.0 == id) {
            return Err(Error::Parse {
                line,
                message: format!("track id {id} repeated in frame {frame}"),
            });
        }
        tracks.push((id, bbox));
    }
    Ok(frames
        .into_iter()
        .map(|(frame, tracks)| FrameTracks { frame, tracks })
        .collect())
}

pub fn write_tracks(frames: &[FrameTracks]) -> String {
    let mut s = String::new();
    for f in frames {
        for (id, b) in &f.tracks {
            let [x1, y1, x2, y2] = b.corners();
            writeln!(s, "{},{id},{x1},{y1},{x2},{y2}", f.frame).unwrap();
        }
    }
    s
}

/// `ref_idx,tgt_idx` per line.
pub fn parse_labels(text: &str) -> Result<Vec<(usize, usize)>> {
    data_lines(text)
        .map(|(line, l)| {
            let f = fields(line, l, 2)?;
            Ok((num(line, "ref_idx", f[0])?, num(line, "tgt_idx", f[1])?))
        })
        .collect()
}

pub fn write_labels(pairs: &[(usize, usize)]) -> String {
    let mut s = String::new();
    for (i, j) in pairs {
        writeln!(s, "{i},{j}").unwrap();
    }
    s
}

/// Row-major `f32` embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn from_embeddings(dim: usize, rows: &[Embedding]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "embedding of dimension {} in a table of dimension {dim}",
                    r.dim()
                )));
            }
            data.extend(r.values().iter().map(|&v| v as f32));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> Embedding {
        Embedding(self.data[k * self.dim..(k + 1) * self.dim].iter().map(|&v| f64::from(v)).collect())
    }

    pub fn rows(&self) -> Vec<Embedding> {
        (0..self.len()).map(|k| self.row(k)).collect()
    }
}

fn format_err(kind: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        kind,
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(self.kind, "truncated header"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(format_err(self.kind, "bad magic"));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(format_err(self.kind, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f32>> {
        let remaining = self.bytes.len() - self.pos;
        let needed = count.checked_mul(4).ok_or_else(|| format_err(self.kind, "size overflow"))?;
        if remaining != needed {
            return Err(format_err(
                self.kind,
                format!("payload is {remaining} bytes, header implies {needed}"),
            ));
        }
        Ok(self.bytes[self.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut r = Reader { bytes, pos: 0, kind: "embedding" };
    r.header(EMBEDDING_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let data = r.floats(count.checked_mul(dim).ok_or_else(|| format_err("embedding", "size overflow"))?)?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err("embedding", "non-finite value"));
    }
    if dim == 0 && count > 0 {
        return Err(format_err("embedding", "zero dimension with nonzero count"));
    }
    Ok(EmbeddingTable { dim, data })
}

pub fn write_embeddings(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 4 * table.data.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for v in &table.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads a grid; non-finite samples are kept as invalid-pixel markers.
pub fn read_grid(bytes: &[u8]) -> Result<MotionField> {
    let mut r = Reader { bytes, pos: 0, kind: "grid" };
    r.header(GRID_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let channels = r.u32()? as usize;
    if channels != 1 && channels != 2 {
        return Err(format_err("grid", format!("channels must be 1 or 2, got {channels}")));
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err("grid", "size overflow"))?;
    let data = r.floats(count)?;
    MotionField::with_invalid(width, height, channels, data.into_iter().map(f64::from).collect())
        .map_err(|e| format_err("grid", e.to_string()))
}

/// Writes a grid; values are narrowed to `f32`.
pub fn write_grid(field: &MotionField) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 4 * field.values().len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    out.extend_from_slice(&(field.channels() as u32).to_le_bytes());
    for &v in field.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Splits detections (and their embedding rows) into consecutive frames.
pub fn group_by_frame(dets: &[Detection], embeddings: &[Embedding]) -> Vec<(i64, Vec<Detection>, Vec<Embedding>)> {
    let mut out: Vec<(i64, Vec<Detection>, Vec<Embedding>)> = Vec::new();
    for (k, d) in dets.iter().enumerate() {
        if out.last().is_none_or(|g| g.0 != d.frame) {
            out.push((d.frame, Vec::new(), Vec::new()));
        }
        let group = out.last_mut().unwrap();
        group.1.push(d.clone());
        if let Some(e) = embeddings.get(k) {
            group.2.push(e.clone());
        }
    }
    out
}
