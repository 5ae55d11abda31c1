//! The `KPT 1` text format for keypoint datasets.
//!
//! ```text
//! KPT 1 N P
//! x_1 .. x_P y_1 .. y_P      (one line per frame, then)
//! m_1 .. m_P                 (mask bits, 0 or 1)
//! GT3D                       (optional section)
//! x_1 .. x_P y_1 .. y_P z_1 .. z_P   (one line per frame)
//! ```
//!
//! Reals are written with 17 significant digits, which round-trips every f64.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use paul_core::data::Dataset;
use paul_core::geometry::{ObservationFrame, Shape3D, Visibility};
use paul_core::{DataError, Matrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KptError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn parse_err(line: usize, message: impl Into<String>) -> KptError {
    KptError::Parse {
        line,
        message: message.into(),
    }
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    /// Next non-blank line with its 1-based number.
    fn next_line(&mut self) -> Result<Option<(usize, String)>, KptError> {
        for line in self.inner.by_ref() {
            self.number += 1;
            let line = line.map_err(|e| parse_err(self.number, e.to_string()))?;
            if !line.trim().is_empty() {
                return Ok(Some((self.number, line)));
            }
        }
        Ok(None)
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, String), KptError> {
        self.next_line()?
            .ok_or_else(|| parse_err(self.number + 1, format!("unexpected end of file, expected {what}")))
    }
}

fn parse_reals(line: usize, text: &str, count: usize) -> Result<Vec<f64>, KptError> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("invalid real {tok:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != count {
        return Err(parse_err(
            line,
            format!("expected {count} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn parse_mask(line: usize, text: &str, count: usize) -> Result<Visibility, KptError> {
    let bits: Vec<bool> = text
        .split_whitespace()
        .map(|tok| match tok {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(parse_err(line, format!("mask value {other:?} is not 0 or 1"))),
        })
        .collect::<Result<_, _>>()?;
    if bits.len() != count {
        return Err(parse_err(
            line,
            format!("expected {count} mask bits, found {}", bits.len()),
        ));
    }
    Ok(Visibility::new(bits))
}

fn parse_header(line: usize, text: &str) -> Result<(usize, usize), KptError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    match toks.as_slice() {
        ["KPT", "1", n, p] => {
            let n = n
                .parse()
                .map_err(|_| parse_err(line, format!("invalid frame count {n:?}")))?;
            let p = p
                .parse()
                .map_err(|_| parse_err(line, format!("invalid point count {p:?}")))?;
            Ok((n, p))
        }
        ["KPT", v, ..] => Err(parse_err(line, format!("unsupported version {v:?}"))),
        _ => Err(parse_err(line, "malformed header, expected `KPT 1 N P`")),
    }
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset, KptError> {
    let mut lines = Lines {
        inner: reader.lines(),
        number: 0,
    };
    let (hl, header) = lines.expect_line("header")?;
    let (n, p) = parse_header(hl, &header)?;
    if n == 0 {
        return Err(DataError::NoFrames.into());
    }
    let mut frames = Vec::with_capacity(n);
    for id in 0..n {
        let (l, text) = lines.expect_line("keypoint line")?;
        let xy = parse_reals(l, &text, 2 * p)?;
        let (l, text) = lines.expect_line("mask line")?;
        let vis = parse_mask(l, &text, p)?;
        let w = Matrix::from_vec(2, p, xy).expect("length checked");
        frames.push(ObservationFrame::new(w, vis, id));
    }
    let ground_truth = match lines.next_line()? {
        None => None,
        Some((_, text)) if text.trim() == "GT3D" => {
            let mut gt = Vec::with_capacity(n);
            for _ in 0..n {
                let (l, text) = lines.expect_line("GT3D line")?;
                let values = parse_reals(l, &text, 3 * p)?;
                gt.push(Shape3D::camera(Matrix::from_vec(3, p, values).expect("length checked")));
            }
            Some(gt)
        }
        Some((l, _)) => return Err(parse_err(l, "expected `GT3D` or end of file")),
    };
    if let Some((l, _)) = lines.next_line()? {
        return Err(parse_err(l, "trailing content after dataset"));
    }
    Ok(Dataset::new(frames, ground_truth)?)
}

fn write_reals<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            w.write_all(b" ")?;
        }
        write!(w, "{v:.16e}")?;
    }
    writeln!(w)
}

/// Writes frames and, when present, the `GT3D` section.
pub fn write_dataset<W: Write>(w: &mut W, dataset: &Dataset) -> io::Result<()> {
    write_frames(w, dataset.frames(), dataset.ground_truth())
}

pub fn write_frames<W: Write>(w: &mut W, frames: &[ObservationFrame], gt: Option<&[Shape3D]>) -> io::Result<()> {
    let p = frames.first().map_or(0, |f| f.points());
    writeln!(w, "KPT 1 {} {}", frames.len(), p)?;
    for f in frames {
        write_reals(w, f.keypoints.as_slice())?;
        let bits: Vec<&str> = f.visibility.bits().iter().map(|b| if *b { "1" } else { "0" }).collect();
        writeln!(w, "{}", bits.join(" "))?;
    }
    if let Some(gt) = gt {
        writeln!(w, "GT3D")?;
        for s in gt {
            write_reals(w, s.points.as_slice())?;
        }
    }
    Ok(())
}

pub fn read_path(path: &Path) -> Result<Dataset, KptError> {
    let file = fs::File::open(path).map_err(|source| KptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file))
}

pub fn write_path(path: &Path, dataset: &Dataset) -> Result<(), KptError> {
    let io_err = |source| KptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, dataset).map_err(io_err)?;
    w.flush().map_err(io_err)
}
