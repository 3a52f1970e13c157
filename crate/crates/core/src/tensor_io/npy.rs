//! Minimal NPY v1.0 reader/writer.
//!
//! Only C-order, little-endian (or byte-order-free) numeric arrays are
//! supported. The writer emits the same header layout as `numpy.save`, so a
//! file written by numpy survives `decode` + `encode` byte for byte.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    Uint8,
    Uint16,
    Uint32,
    Int8,
    Int16,
    Int32,
    Int64,
    Float32,
    Float64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::Uint8 => "|u1",
            Dtype::Uint16 => "<u2",
            Dtype::Uint32 => "<u4",
            Dtype::Int8 => "|i1",
            Dtype::Int16 => "<i2",
            Dtype::Int32 => "<i4",
            Dtype::Int64 => "<i8",
            Dtype::Float32 => "<f4",
            Dtype::Float64 => "<f8",
        }
    }

    fn from_descr(descr: &str) -> Option<Self> {
        Some(match descr {
            "|u1" | "<u1" => Dtype::Uint8,
            "<u2" => Dtype::Uint16,
            "<u4" => Dtype::Uint32,
            "|i1" | "<i1" => Dtype::Int8,
            "<i2" => Dtype::Int16,
            "<i4" => Dtype::Int32,
            "<i8" => Dtype::Int64,
            "<f4" => Dtype::Float32,
            "<f8" => Dtype::Float64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::Uint8 | Dtype::Int8 => 1,
            Dtype::Uint16 | Dtype::Int16 => 2,
            Dtype::Uint32 | Dtype::Int32 | Dtype::Float32 => 4,
            Dtype::Int64 | Dtype::Float64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::Float32 | Dtype::Float64)
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.descr())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::Int(v) => v.len(),
            NpyData::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parse an in-memory NPY v1.0 file. Errors are plain strings; callers attach
/// the file path.
pub fn decode(bytes: &[u8]) -> std::result::Result<NpyArray, String> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err("missing \\x93NUMPY magic".into());
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(format!(
            "unsupported format version {}.{} (expected 1.0)",
            bytes[6], bytes[7]
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err("truncated header".into());
    }
    let header = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| "header is not ASCII".to_string())?;
    if !header.ends_with('\n') {
        return Err("header does not end with a newline".into());
    }
    let header = parse_header(header)?;
    if header.fortran_order {
        return Err("fortran_order arrays are not supported".into());
    }
    let dtype = Dtype::from_descr(&header.descr)
        .ok_or_else(|| format!("unsupported dtype '{}'", header.descr))?;

    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    let payload = &bytes[data_start..];
    let expected = count.checked_mul(dtype.size()).ok_or("shape overflows")?;
    if payload.len() != expected {
        return Err(format!(
            "data length {} does not match shape {:?} of {} (expected {} bytes)",
            payload.len(),
            header.shape,
            dtype,
            expected
        ));
    }

    let data = match dtype {
        Dtype::Float32 => NpyData::Float(
            payload
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        ),
        Dtype::Float64 => NpyData::Float(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::Uint8 => NpyData::Int(payload.iter().map(|&b| i64::from(b)).collect()),
        Dtype::Int8 => NpyData::Int(payload.iter().map(|&b| i64::from(b as i8)).collect()),
        Dtype::Uint16 => NpyData::Int(
            payload
                .chunks_exact(2)
                .map(|c| i64::from(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
        ),
        Dtype::Int16 => NpyData::Int(
            payload
                .chunks_exact(2)
                .map(|c| i64::from(i16::from_le_bytes([c[0], c[1]])))
                .collect(),
        ),
        Dtype::Uint32 => NpyData::Int(
            payload
                .chunks_exact(4)
                .map(|c| i64::from(u32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        ),
        Dtype::Int32 => NpyData::Int(
            payload
                .chunks_exact(4)
                .map(|c| i64::from(i32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        ),
        Dtype::Int64 => NpyData::Int(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };

    Ok(NpyArray {
        dtype,
        shape: header.shape,
        data,
    })
}

/// Serialize with a numpy-identical header.
pub fn encode(array: &NpyArray) -> std::result::Result<Vec<u8>, String> {
    if array.element_count() != array.data.len() {
        return Err(format!(
            "shape {:?} does not match {} elements",
            array.shape,
            array.data.len()
        ));
    }
    let shape = match array.shape.len() {
        1 => format!("({},)", array.shape[0]),
        _ => format!(
            "({})",
            array
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.dtype.descr(),
        shape
    );
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');
    let header_len = u16::try_from(header.len()).map_err(|_| "header too long for v1.0")?;

    let mut out = Vec::with_capacity(10 + header.len() + array.data.len() * array.dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());

    match (&array.data, array.dtype) {
        (NpyData::Float(v), Dtype::Float32) => {
            for x in v {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        (NpyData::Float(v), Dtype::Float64) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        (NpyData::Int(v), dtype) if !dtype.is_float() => {
            for &x in v {
                let fits = match dtype {
                    Dtype::Uint8 => u8::try_from(x).is_ok(),
                    Dtype::Uint16 => u16::try_from(x).is_ok(),
                    Dtype::Uint32 => u32::try_from(x).is_ok(),
                    Dtype::Int8 => i8::try_from(x).is_ok(),
                    Dtype::Int16 => i16::try_from(x).is_ok(),
                    Dtype::Int32 => i32::try_from(x).is_ok(),
                    _ => true,
                };
                if !fits {
                    return Err(format!("value {x} does not fit {dtype}"));
                }
                let bytes = x.to_le_bytes();
                out.extend_from_slice(&bytes[..dtype.size()]);
            }
        }
        _ => return Err(format!("data kind does not match dtype {}", array.dtype)),
    }
    Ok(out)
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::MalformedNpy {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_npy(path: impl AsRef<Path>, array: &NpyArray) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(array).map_err(|reason| Error::InvalidArray {
        path: path.to_path_buf(),
        reason,
    })?;
    crate::fsutil::write_atomic(path, &bytes)
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Strict parser for the Python dict literal in the header.
fn parse_header(text: &str) -> std::result::Result<Header, String> {
    let mut p = Lexer {
        s: text.trim_end().as_bytes(),
        i: 0,
    };
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;

    p.expect(b'{')?;
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.expect(b':')?;
        match key.as_str() {
            "descr" if descr.is_none() => descr = Some(p.string()?),
            "fortran_order" if fortran.is_none() => fortran = Some(p.boolean()?),
            "shape" if shape.is_none() => shape = Some(p.tuple()?),
            "descr" | "fortran_order" | "shape" => return Err(format!("duplicate key '{key}'")),
            other => return Err(format!("unexpected header key '{other}'")),
        }
        p.skip_ws();
        if p.eat(b',') {
            continue;
        }
        p.expect(b'}')?;
        break;
    }
    p.skip_ws();
    if p.i != p.s.len() {
        return Err("trailing characters after header dict".into());
    }

    Ok(Header {
        descr: descr.ok_or("header missing 'descr'")?,
        fortran_order: fortran.ok_or("header missing 'fortran_order'")?,
        shape: shape.ok_or("header missing 'shape'")?,
    })
}

struct Lexer<'a> {
    s: &'a [u8],
    i: usize,
}

impl Lexer<'_> {
    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected '{}' at byte {}", c as char, self.i))
        }
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        self.skip_ws();
        let quote = match self.s.get(self.i) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(format!("expected string at byte {}", self.i)),
        };
        let start = self.i + 1;
        let end = self.s[start..]
            .iter()
            .position(|&c| c == quote)
            .ok_or("unterminated string")?
            + start;
        self.i = end + 1;
        Ok(String::from_utf8_lossy(&self.s[start..end]).into_owned())
    }

    fn boolean(&mut self) -> std::result::Result<bool, String> {
        self.skip_ws();
        let rest = &self.s[self.i..];
        if rest.starts_with(b"True") {
            self.i += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.i += 5;
            Ok(false)
        } else {
            Err(format!("expected True or False at byte {}", self.i))
        }
    }

    fn tuple(&mut self) -> std::result::Result<Vec<usize>, String> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.eat(b')') {
                break;
            }
            self.skip_ws();
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                self.i += 1;
            }
            if start == self.i {
                return Err(format!("expected dimension at byte {}", self.i));
            }
            let d = std::str::from_utf8(&self.s[start..self.i])
                .unwrap()
                .parse::<usize>()
                .map_err(|e| e.to_string())?;
            dims.push(d);
            if self.eat(b',') {
                continue;
            }
            self.expect(b')')?;
            break;
        }
        Ok(dims)
    }
}
