//! Dense row-major matrices and the `ITNS` binary tensor file format.
//!
//! File layout (all integers little-endian):
//!
//! | bytes  | content                                         |
//! |--------|-------------------------------------------------|
//! | 0..4   | magic `ITNS`                                    |
//! | 4      | element kind (0 = f32, 1 = i8, 2 = u8, 3 = i32) |
//! | 5..8   | reserved, zero                                  |
//! | 8..16  | rows (u64)                                      |
//! | 16..24 | cols (u64)                                      |
//! | 24..   | `rows * cols` elements, row-major               |

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"ITNS";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Real32,
    Int8,
    Uint8,
    Int32,
}

impl ElementKind {
    pub fn code(self) -> u8 {
        match self {
            ElementKind::Real32 => 0,
            ElementKind::Int8 => 1,
            ElementKind::Uint8 => 2,
            ElementKind::Int32 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ElementKind::Real32),
            1 => Some(ElementKind::Int8),
            2 => Some(ElementKind::Uint8),
            3 => Some(ElementKind::Int32),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            ElementKind::Real32 | ElementKind::Int32 => 4,
            ElementKind::Int8 | ElementKind::Uint8 => 1,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, ElementKind::Real32)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ElementKind::Real32 => "real32",
            ElementKind::Int8 => "int8",
            ElementKind::Uint8 => "uint8",
            ElementKind::Int32 => "int32",
        };
        f.write_str(name)
    }
}

mod sealed {
    pub trait Sealed {}
    impl Sealed for f32 {}
    impl Sealed for i8 {}
    impl Sealed for u8 {}
    impl Sealed for i32 {}
}

/// Element types a [`Matrix`] can hold.
pub trait Element:
    sealed::Sealed + Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static
{
    const KIND: ElementKind;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const KIND: ElementKind = ElementKind::Real32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Element for i8 {
    const KIND: ElementKind = ElementKind::Int8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self as u8);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0] as i8
    }
}

impl Element for u8 {
    const KIND: ElementKind = ElementKind::Uint8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Element for i32 {
    const KIND: ElementKind = ElementKind::Int32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid shape {rows}x{cols}: both dimensions must be at least 1")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    LengthMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),
    #[error("element kind mismatch: file holds {found}, expected {expected}")]
    KindMismatch {
        expected: ElementKind,
        found: ElementKind,
    },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("tensor i/o failed: {0}")]
    Io(#[from] io::Error),
}

/// Row-major matrix; element `(i, j)` lives at `i * cols + j`.
#[derive(Clone, PartialEq)]
pub struct Matrix<E> {
    rows: usize,
    cols: usize,
    data: Vec<E>,
}

impl<E: Element> Matrix<E> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<E>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(TensorError::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows, mostly for tests and small literals.
    pub fn from_rows<R: AsRef<[E]>>(rows: &[R]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TensorError::LengthMismatch {
                    rows: rows.len(),
                    cols,
                    len: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> E,
    ) -> Result<Self, TensorError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, TensorError> {
        Self::from_vec(rows, cols, vec![E::default(); rows * cols])
    }

    /// Construction path for kernels that already guarantee the invariants.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<E>) -> Self {
        debug_assert!(rows >= 1 && cols >= 1 && data.len() == rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn kind(&self) -> ElementKind {
        E::KIND
    }

    pub fn get(&self, i: usize, j: usize) -> E {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i}, {j}) out of bounds"
        );
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[E] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, E> {
        self.data.chunks_exact(self.cols)
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn map<F: Element>(&self, f: impl FnMut(E) -> F) -> Matrix<F> {
        Matrix::from_parts(
            self.rows,
            self.cols,
            self.data.iter().copied().map(f).collect(),
        )
    }

    pub fn transpose(&self) -> Matrix<E> {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            data.extend(self.iter_rows().map(|r| r[j]));
        }
        Matrix::from_parts(self.cols, self.rows, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * E::KIND.width());
        out.extend_from_slice(&MAGIC);
        out.push(E::KIND.code());
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let header = Header::parse(bytes)?;
        if header.kind != E::KIND {
            return Err(TensorError::KindMismatch {
                expected: E::KIND,
                found: header.kind,
            });
        }
        let payload = header.payload(bytes)?;
        let data = payload
            .chunks_exact(E::KIND.width())
            .map(E::read_le)
            .collect();
        Self::from_vec(header.rows, header.cols, data)
    }
}

impl<E: fmt::Debug> fmt::Debug for Matrix<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for r in self.data.chunks_exact(self.cols.max(1)) {
            list.entry(&r);
        }
        list.finish()
    }
}

struct Header {
    kind: ElementKind,
    rows: usize,
    cols: usize,
}

impl Header {
    fn parse(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < HEADER_LEN {
            return Err(TensorError::MalformedHeader(format!(
                "need {HEADER_LEN} header bytes, found {}",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(TensorError::MalformedHeader(format!(
                "bad magic {:?}",
                &bytes[0..4]
            )));
        }
        let kind = ElementKind::from_code(bytes[4]).ok_or_else(|| {
            TensorError::MalformedHeader(format!("unknown element kind {}", bytes[4]))
        })?;
        if bytes[5..8] != [0, 0, 0] {
            return Err(TensorError::MalformedHeader(
                "reserved bytes must be zero".into(),
            ));
        }
        let rows = read_dim(&bytes[8..16])?;
        let cols = read_dim(&bytes[16..24])?;
        if rows == 0 || cols == 0 {
            return Err(TensorError::EmptyShape { rows, cols });
        }
        Ok(Self { kind, rows, cols })
    }

    fn payload<'a>(&self, bytes: &'a [u8]) -> Result<&'a [u8], TensorError> {
        let expected = self
            .rows
            .checked_mul(self.cols)
            .and_then(|n| n.checked_mul(self.kind.width()))
            .ok_or_else(|| TensorError::MalformedHeader("shape overflows usize".into()))?;
        let found = bytes.len() - HEADER_LEN;
        if found < expected {
            return Err(TensorError::Truncated { expected, found });
        }
        if found > expected {
            return Err(TensorError::MalformedHeader(format!(
                "{} trailing bytes after payload",
                found - expected
            )));
        }
        Ok(&bytes[HEADER_LEN..])
    }
}

fn read_dim(bytes: &[u8]) -> Result<usize, TensorError> {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(bytes);
    usize::try_from(u64::from_le_bytes(buf))
        .map_err(|_| TensorError::MalformedHeader("dimension exceeds usize".into()))
}

/// A matrix loaded without knowing its element kind up front.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyMatrix {
    Real32(Matrix<f32>),
    Int8(Matrix<i8>),
    Uint8(Matrix<u8>),
    Int32(Matrix<i32>),
}

impl AnyMatrix {
    pub fn kind(&self) -> ElementKind {
        match self {
            AnyMatrix::Real32(_) => ElementKind::Real32,
            AnyMatrix::Int8(_) => ElementKind::Int8,
            AnyMatrix::Uint8(_) => ElementKind::Uint8,
            AnyMatrix::Int32(_) => ElementKind::Int32,
        }
    }

    /// Widens any element kind to f32 (exact for the 8-bit kinds).
    pub fn to_real(&self) -> Matrix<f32> {
        match self {
            AnyMatrix::Real32(m) => m.clone(),
            AnyMatrix::Int8(m) => m.map(f32::from),
            AnyMatrix::Uint8(m) => m.map(f32::from),
            AnyMatrix::Int32(m) => m.map(|v| v as f32),
        }
    }
}

pub fn load_tensor<E: Element>(path: impl AsRef<Path>) -> Result<Matrix<E>, TensorError> {
    Matrix::from_bytes(&fs::read(path)?)
}

pub fn load_any_tensor(path: impl AsRef<Path>) -> Result<AnyMatrix, TensorError> {
    let bytes = fs::read(path)?;
    let header = Header::parse(&bytes)?;
    Ok(match header.kind {
        ElementKind::Real32 => AnyMatrix::Real32(Matrix::from_bytes(&bytes)?),
        ElementKind::Int8 => AnyMatrix::Int8(Matrix::from_bytes(&bytes)?),
        ElementKind::Uint8 => AnyMatrix::Uint8(Matrix::from_bytes(&bytes)?),
        ElementKind::Int32 => AnyMatrix::Int32(Matrix::from_bytes(&bytes)?),
    })
}

pub fn save_tensor<E: Element>(m: &Matrix<E>, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&m.to_bytes())?;
    file.flush()?;
    Ok(())
}
