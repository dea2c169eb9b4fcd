// SPDX-License-Identifier: MIT OR Apache-2.0

//! Panel data model, CSV ingestion and the block layout used by the bootstrap.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest sample size any statistic in this crate accepts.
pub const MIN_TIME_POINTS: usize = 4;

/// An `n x d` panel of finite observations: `n` time points, `d` coordinates.
///
/// Values are stored coordinate-major so each coordinate's series is one
/// contiguous slice. Coordinates are 0-based in the API.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n: usize,
    d: usize,
    data: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl Panel {
    /// Builds a panel from one series per coordinate.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let d = columns.len();
        if d == 0 {
            return Err(Error::Dimension("panel needs at least one coordinate".into()));
        }
        let n = columns[0].len();
        let mut data = Vec::with_capacity(n * d);
        for (h, col) in columns.into_iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "coordinate {} has {} points, expected {n}",
                    h + 1,
                    col.len()
                )));
            }
            data.extend(col);
        }
        Self::from_coordinate_major(n, d, data)
    }

    /// Builds a panel from time-major rows (`rows[k][h]`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::Dimension("panel needs at least one coordinate".into()));
        }
        let mut data = vec![0.0; n * d];
        for (k, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Ragged {
                    row: k + 1,
                    expected: d,
                    found: row.len(),
                });
            }
            for (h, &v) in row.iter().enumerate() {
                data[h * n + k] = v;
            }
        }
        Self::from_coordinate_major(n, d, data)
    }

    /// Takes ownership of a coordinate-major buffer of length `n * d`.
    pub fn from_coordinate_major(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Dimension("panel needs at least one coordinate".into()));
        }
        if data.len() != n * d {
            return Err(Error::Dimension(format!(
                "buffer of length {} does not match {n} x {d}",
                data.len()
            )));
        }
        if n < MIN_TIME_POINTS {
            return Err(Error::TooShort { n });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingest {
                row: pos % n + 1,
                column: pos / n + 1,
                message: "non-finite value".into(),
            });
        }
        Ok(Self {
            n,
            d,
            data,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.d {
            return Err(Error::Dimension(format!(
                "{} labels for {} coordinates",
                labels.len(),
                self.d
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, h: usize) -> Option<&str> {
        self.labels.as_ref().map(|l| l[h].as_str())
    }

    /// The series of coordinate `h` (0-based).
    #[inline]
    pub fn series(&self, h: usize) -> &[f64] {
        &self.data[h * self.n..(h + 1) * self.n]
    }

    pub fn checked_series(&self, h: usize) -> Result<&[f64]> {
        if h >= self.d {
            return Err(Error::InvalidCoordinate {
                coordinate: h + 1,
                d: self.d,
            });
        }
        Ok(self.series(h))
    }

    #[inline]
    pub fn get(&self, k: usize, h: usize) -> f64 {
        self.data[h * self.n + k]
    }

    pub fn series_mut(&mut self, h: usize) -> &mut [f64] {
        &mut self.data[h * self.n..(h + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn as_coordinate_major(&self) -> &[f64] {
        &self.data
    }

    /// Swaps the roles of time and coordinate.
    pub fn transposed(&self) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..self.d).map(|h| self.series(h).to_vec()).collect();
        Self::from_rows(&rows)
    }
}

/// Which axis of the table runs over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeAxis {
    #[default]
    Rows,
    Columns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
    pub time_axis: TimeAxis,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            delimiter: b',',
            time_axis: TimeAxis::Rows,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    read_csv(file, options)
}

/// Parses a rectangular numeric table. Lines starting with `#` are comments.
///
/// Error positions are 1-based and count data rows, not the header.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Option<Vec<String>> = if options.has_header {
        let h = rdr.headers().map_err(csv_error)?;
        Some(h.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let row = i + 1;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                row,
                expected,
                found: record.len(),
            });
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(j, cell)| parse_cell(cell, row, j + 1))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }

    let panel = match options.time_axis {
        TimeAxis::Rows => {
            if rows.len() < MIN_TIME_POINTS {
                return Err(Error::TooShort { n: rows.len() });
            }
            Panel::from_rows(&rows)?
        }
        TimeAxis::Columns => {
            let n = width.unwrap_or(0);
            if n < MIN_TIME_POINTS {
                return Err(Error::TooShort { n });
            }
            Panel::from_columns(rows)?
        }
    };
    match (header, options.time_axis) {
        (Some(labels), TimeAxis::Rows) => panel.with_labels(labels),
        _ => Ok(panel),
    }
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Ingest {
            row,
            column,
            message: format!("non-finite value {cell:?}"),
        }),
        Err(_) => Err(Error::Ingest {
            row,
            column,
            message: format!("not a number: {cell:?}"),
        }),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.record() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Ingest {
            row,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Writes the panel time-major with a header (labels, or `x1..xd`).
///
/// Values are printed with Rust's shortest round-trip formatting, so reading
/// the file back reproduces every value exactly.
pub fn write_csv<W: Write>(panel: &Panel, writer: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    let header: Vec<String> = match panel.labels() {
        Some(l) => l.to_vec(),
        None => (1..=panel.d()).map(|h| format!("x{h}")).collect(),
    };
    w.write_record(&header).map_err(csv_error)?;
    let mut buf = Vec::with_capacity(panel.d());
    for k in 0..panel.n() {
        buf.clear();
        buf.extend((0..panel.d()).map(|h| panel.get(k, h).to_string()));
        w.write_record(&buf).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Contiguous equal-length blocks covering the first `used_n` time points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    /// Time points per block.
    pub block_len: usize,
    /// Number of blocks.
    pub blocks: usize,
    pub used_n: usize,
    pub dropped_tail: usize,
}

impl BlockLayout {
    /// Block (0-based) containing time index `j` (0-based), if covered.
    #[inline]
    pub fn block_of(&self, j: usize) -> Option<usize> {
        (j < self.used_n).then(|| j / self.block_len)
    }

    pub fn range(&self, l: usize) -> std::ops::Range<usize> {
        l * self.block_len..(l + 1) * self.block_len
    }
}

/// Splits `n` time points into `blocks` blocks of length `floor(n / blocks)`.
/// Any remainder at the end of the sample is left out of the blocks.
pub fn partition_blocks(n: usize, blocks: usize) -> Result<BlockLayout> {
    if blocks == 0 || blocks > n {
        return Err(Error::InvalidLayout(format!(
            "need 1 <= L <= n, got L = {blocks}, n = {n}"
        )));
    }
    let block_len = n / blocks;
    let used_n = block_len * blocks;
    Ok(BlockLayout {
        block_len,
        blocks,
        used_n,
        dropped_tail: n - used_n,
    })
}
