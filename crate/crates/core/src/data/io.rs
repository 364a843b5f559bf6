use std::fs;
use std::io::Read;
use std::path::Path;

use super::{Dataset, Example};
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn parse_err(source: &str, location: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        location: location.into(),
        reason: reason.into(),
    }
}

/// Loads a numeric CSV with a header row; `label_column` holds class indices.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), label_column)
}

pub fn read_csv<R: Read>(reader: R, source_name: &str, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(source_name, "line 1", format!("no `{label_column}` column")))?;
    let width = headers.len();
    let mut examples = Vec::new();
    let mut max_label = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                source_name,
                format!("line {line}"),
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut features = Vec::with_capacity(width - 1);
        let mut label = None;
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let l: usize = cell.parse().map_err(|_| {
                    parse_err(
                        source_name,
                        format!("line {line}, column `{}`", &headers[j]),
                        format!("label `{cell}` is not a class index"),
                    )
                })?;
                max_label = max_label.max(l);
                label = Some(l);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(
                        source_name,
                        format!("line {line}, column `{}`", &headers[j]),
                        format!("`{cell}` is not numeric"),
                    )
                })?;
                features.push(v);
            }
        }
        examples.push(Example { features, label });
    }
    let classes = if examples.is_empty() { 0 } else { max_label + 1 };
    Dataset::new(examples, classes.max(2))
}

/// Writes `f0,…,f{d-1},label`; unlabeled rows leave the label empty.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dataset.feature_dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for e in dataset.examples() {
        let mut row: Vec<String> = e.features.iter().map(|v| v.to_string()).collect();
        row.push(e.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    name: &'a str,
}

impl IdxReader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.offset + 4;
        let chunk = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| parse_err(self.name, format!("offset {}", self.offset), "truncated header"))?;
        self.offset = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let at = self.offset;
        let got = self.u32()?;
        if got != magic {
            return Err(parse_err(
                self.name,
                format!("offset {at}"),
                format!("bad magic 0x{got:08x}, expected 0x{magic:08x}"),
            ));
        }
        Ok(())
    }

    fn body(&self, len: usize) -> Result<&[u8]> {
        self.bytes.get(self.offset..self.offset + len).ok_or_else(|| {
            parse_err(
                self.name,
                format!("offset {}", self.bytes.len()),
                format!("payload truncated, need {len} bytes after offset {}", self.offset),
            )
        })
    }
}

/// Loads an MNIST-style IDX image/label pair. Pixels are scaled to `[0, 1]`
/// and the dataset carries the image grid shape.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&ib, &ip.display().to_string(), &lb, &lp.display().to_string())
}

pub(crate) fn parse_idx(images: &[u8], images_name: &str, labels: &[u8], labels_name: &str) -> Result<Dataset> {
    let mut ir = IdxReader {
        bytes: images,
        offset: 0,
        name: images_name,
    };
    ir.expect_magic(IDX_IMAGES_MAGIC)?;
    let n = ir.u32()? as usize;
    let rows = ir.u32()? as usize;
    let cols = ir.u32()? as usize;
    let pixels = ir.body(n * rows * cols)?;

    let mut lr = IdxReader {
        bytes: labels,
        offset: 0,
        name: labels_name,
    };
    lr.expect_magic(IDX_LABELS_MAGIC)?;
    let nl = lr.u32()? as usize;
    if nl != n {
        return Err(parse_err(
            labels_name,
            "offset 4",
            format!("{nl} labels for {n} images"),
        ));
    }
    let label_bytes = lr.body(n)?;

    let classes = label_bytes.iter().map(|&b| b as usize + 1).max().unwrap_or(2).max(2);
    let size = rows * cols;
    let examples = (0..n)
        .map(|i| Example {
            features: pixels[i * size..(i + 1) * size]
                .iter()
                .map(|&p| f64::from(p) / 255.0)
                .collect(),
            label: Some(label_bytes[i] as usize),
        })
        .collect();
    Dataset::new(examples, classes)?.with_grid(rows, cols)
}

/// Writes an IDX image/label pair (big-endian headers, `u8` payload).
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
    labels: &[u8],
) -> Result<()> {
    if images.len() != labels.len() || images.iter().any(|im| im.len() != rows * cols) {
        return Err(Error::Contract("image/label arity mismatch".into()));
    }
    let mut ib = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    images.iter().for_each(|im| ib.extend_from_slice(im));
    let mut lb = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend_from_slice(labels);
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, ib).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lb).map_err(|e| Error::io(lp, e))?;
    Ok(())
}
