//! XYZ text: an atom-count line, a comment line, then one `Symbol x y z`
//! line per atom. Frames may follow each other directly.

use std::fmt::{self, Write as _};

use thiserror::Error;

use super::elements::{atomic_number, symbol};
use crate::geometry::{Conformation, GeometryError};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind}, at line {line}")]
pub struct XyzError {
    /// 1-based line number.
    pub line: usize,
    pub kind: XyzErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum XyzErrorKind {
    BadCount(String),
    CountMismatch { declared: usize, found: usize },
    UnknownSymbol(String),
    MalformedNumber(String),
    MissingField,
    EmptyFrame,
    Geometry(GeometryError),
}

impl fmt::Display for XyzErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XyzErrorKind::BadCount(s) => write!(f, "expected an atom count, found {s:?}"),
            XyzErrorKind::CountMismatch { declared, found } => write!(f, "declared {declared} atoms, found {found}"),
            XyzErrorKind::UnknownSymbol(s) => write!(f, "unknown element symbol {s:?}"),
            XyzErrorKind::MalformedNumber(s) => write!(f, "malformed coordinate {s:?}"),
            XyzErrorKind::MissingField => write!(f, "atom line needs a symbol and three coordinates"),
            XyzErrorKind::EmptyFrame => write!(f, "frame declares zero atoms"),
            XyzErrorKind::Geometry(e) => write!(f, "{e}"),
        }
    }
}

/// One frame with its comment line preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct XyzFrame {
    pub comment: String,
    pub conformation: Conformation,
}

pub fn parse_xyz(text: &str) -> Result<Vec<Conformation>, XyzError> {
    Ok(parse_xyz_frames(text)?.into_iter().map(|f| f.conformation).collect())
}

pub fn parse_xyz_frames(text: &str) -> Result<Vec<XyzFrame>, XyzError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 1;
        let declared: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| XyzError { line: count_line, kind: XyzErrorKind::BadCount(lines[i].trim().to_string()) })?;
        if declared == 0 {
            return Err(XyzError { line: count_line, kind: XyzErrorKind::EmptyFrame });
        }
        let comment = lines.get(i + 1).map_or("", |c| c.trim()).to_string();
        let first_atom = i + 2;
        let mut species = Vec::with_capacity(declared);
        let mut coords = Vec::with_capacity(declared);
        for k in 0..declared {
            let idx = first_atom + k;
            let line_no = idx + 1;
            let Some(line) = lines.get(idx).filter(|l| !l.trim().is_empty()) else {
                let last = lines.len().min(idx).max(1);
                return Err(XyzError { line: last, kind: XyzErrorKind::CountMismatch { declared, found: k } });
            };
            let mut fields = line.split_whitespace();
            let sym = fields.next().ok_or(XyzError { line: line_no, kind: XyzErrorKind::MissingField })?;
            let z = atomic_number(sym)
                .ok_or_else(|| XyzError { line: line_no, kind: XyzErrorKind::UnknownSymbol(sym.to_string()) })?;
            let mut r = [0.0; 3];
            for slot in &mut r {
                let tok = fields.next().ok_or(XyzError { line: line_no, kind: XyzErrorKind::MissingField })?;
                *slot = tok
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| XyzError { line: line_no, kind: XyzErrorKind::MalformedNumber(tok.to_string()) })?;
            }
            species.push(z);
            coords.push(r);
        }
        let conformation = Conformation::new(species, coords)
            .map_err(|e| XyzError { line: count_line, kind: XyzErrorKind::Geometry(e) })?;
        frames.push(XyzFrame { comment, conformation });
        i = first_atom + declared;
    }
    Ok(frames)
}

/// Fixed 9-decimal formatting; comments are left empty.
pub fn write_xyz(conformations: &[Conformation]) -> String {
    let frames: Vec<XyzFrame> =
        conformations.iter().map(|c| XyzFrame { comment: String::new(), conformation: c.clone() }).collect();
    write_xyz_frames(&frames)
}

pub fn write_xyz_frames(frames: &[XyzFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        let c = &f.conformation;
        let _ = writeln!(out, "{}", c.len());
        let _ = writeln!(out, "{}", f.comment.replace('\n', " "));
        for (z, r) in c.atomic_numbers().iter().zip(c.coords()) {
            let sym = symbol(*z).map_or_else(|| z.to_string(), str::to_string);
            let _ = writeln!(out, "{sym} {:.9} {:.9} {:.9}", r[0], r[1], r[2]);
        }
    }
    out
}
