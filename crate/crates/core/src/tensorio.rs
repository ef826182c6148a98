//! Binary tensor container.
//!
//! Layout:
//!
//! ```text
//! offset 0   8 bytes  magic "NFTENSR\0"
//! offset 8   u32 LE   header length H
//! offset 12  H bytes  UTF-8 JSON {"dtype", "shape", "order": "C", "byte_order": "LE", "meta"}
//! offset 12+H         payload, little-endian, C order, complex as (re, im) pairs
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::volume::{MagnitudeVolume, MeasurementVector, ReflectivityVolume};

pub const MAGIC: &[u8; 8] = b"NFTENSR\0";
const PREAMBLE: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    C64,
    C128,
}

impl Dtype {
    pub const ALL: [Dtype; 4] = [Dtype::F32, Dtype::F64, Dtype::C64, Dtype::C128];

    pub fn element_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::C64 => "c64",
            Dtype::C128 => "c128",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Dtype::ALL.into_iter().find(|d| d.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex32>),
    C128(Vec<Complex64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::C64(_) => Dtype::C64,
            TensorData::C128(_) => Dtype::C128,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::C64(v) => v.len(),
            TensorData::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to complex double precision.
    pub fn to_c128(&self) -> Vec<Complex64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            TensorData::C64(v) => v
                .iter()
                .map(|z| Complex64::new(z.re as f64, z.im as f64))
                .collect(),
            TensorData::C128(v) => v.clone(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::C64(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
            TensorData::C128(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> Self {
        let f32s = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
        let f64s = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        match dtype {
            Dtype::F32 => TensorData::F32(bytes.chunks_exact(4).map(f32s).collect()),
            Dtype::F64 => TensorData::F64(bytes.chunks_exact(8).map(f64s).collect()),
            Dtype::C64 => TensorData::C64(
                bytes
                    .chunks_exact(8)
                    .map(|b| Complex32::new(f32s(&b[..4]), f32s(&b[4..])))
                    .collect(),
            ),
            Dtype::C128 => TensorData::C128(
                bytes
                    .chunks_exact(16)
                    .map(|b| Complex64::new(f64s(&b[..8]), f64s(&b[8..])))
                    .collect(),
            ),
        }
    }
}

/// An n-dimensional array with a free-form JSON `meta` object.
///
/// Equality is value equality, so tensors holding NaN never compare equal;
/// use [`Tensor::to_bytes`] for bit-level comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
    pub meta: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<u64>,
    order: String,
    byte_order: String,
    meta: Map<String, Value>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected = element_count(&shape)
            .ok_or_else(|| Error::invalid(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::shape(
                format!("{expected} elements for {shape:?}"),
                data.len(),
            ));
        }
        Ok(Self {
            shape,
            data,
            meta: Map::new(),
        })
    }

    pub fn with_meta(mut self, meta: Map<String, Value>) -> Self {
        self.meta = meta;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: self.dtype().name().to_string(),
            shape: self.shape.iter().map(|&d| d as u64).collect(),
            order: "C".into(),
            byte_order: "LE".into(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header is always serializable");
        let mut out =
            Vec::with_capacity(PREAMBLE + header.len() + self.len() * self.dtype().element_size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        self.data.write_le(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::format(0, "bad magic (expected \"NFTENSR\\0\")"));
        }
        if bytes.len() < PREAMBLE {
            return Err(Error::format(8, "truncated header length"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload_start = PREAMBLE + header_len;
        if bytes.len() < payload_start {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated header: declared {header_len} bytes"),
            ));
        }
        let header: Header =
            serde_json::from_slice(&bytes[PREAMBLE..payload_start]).map_err(|e| {
                Error::format(
                    PREAMBLE as u64 + json_offset(&bytes[PREAMBLE..payload_start], &e),
                    e.to_string(),
                )
            })?;
        let dtype = Dtype::parse(&header.dtype).ok_or_else(|| {
            Error::format(PREAMBLE as u64, format!("unknown dtype {:?}", header.dtype))
        })?;
        if header.order != "C" {
            return Err(Error::format(
                PREAMBLE as u64,
                format!("unsupported order {:?}", header.order),
            ));
        }
        if header.byte_order != "LE" {
            return Err(Error::format(
                PREAMBLE as u64,
                format!("unsupported byte_order {:?}", header.byte_order),
            ));
        }
        let shape: Vec<usize> = header
            .shape
            .iter()
            .map(|&d| usize::try_from(d))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(PREAMBLE as u64, "shape does not fit in memory"))?;
        let payload_len = element_count(&shape)
            .and_then(|n| n.checked_mul(dtype.element_size()))
            .ok_or_else(|| Error::format(PREAMBLE as u64, format!("shape {shape:?} overflows")))?;
        let available = bytes.len() - payload_start;
        if available < payload_len {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated payload: expected {payload_len} bytes, found {available}"),
            ));
        }
        if available > payload_len {
            return Err(Error::format(
                (payload_start + payload_len) as u64,
                format!("{} trailing bytes after payload", available - payload_len),
            ));
        }
        let data = TensorData::read_le(dtype, &bytes[payload_start..]);
        Ok(Self {
            shape,
            data,
            meta: header.meta,
        })
    }

    pub fn from_volume(s: &ReflectivityVolume) -> Self {
        Self {
            shape: s.dims().to_vec(),
            data: TensorData::C128(s.values().to_vec()),
            meta: Map::new(),
        }
    }

    /// Complex volume stored in single precision.
    pub fn from_volume_c64(s: &ReflectivityVolume) -> Self {
        Self {
            shape: s.dims().to_vec(),
            data: TensorData::C64(
                s.values()
                    .iter()
                    .map(|z| Complex32::new(z.re as f32, z.im as f32))
                    .collect(),
            ),
            meta: Map::new(),
        }
    }

    pub fn from_magnitude(v: &MagnitudeVolume) -> Self {
        Self {
            shape: v.dims().to_vec(),
            data: TensorData::F64(v.values().to_vec()),
            meta: Map::new(),
        }
    }

    pub fn from_magnitude_f32(v: &MagnitudeVolume) -> Self {
        Self {
            shape: v.dims().to_vec(),
            data: TensorData::F32(v.values().iter().map(|&x| x as f32).collect()),
            meta: Map::new(),
        }
    }

    pub fn from_measurements(y: &MeasurementVector) -> Self {
        Self {
            shape: vec![y.len()],
            data: TensorData::C128(y.values().to_vec()),
            meta: Map::new(),
        }
    }

    pub fn from_measurements_c64(y: &MeasurementVector) -> Self {
        Self {
            shape: vec![y.len()],
            data: TensorData::C64(
                y.values()
                    .iter()
                    .map(|z| Complex32::new(z.re as f32, z.im as f32))
                    .collect(),
            ),
            meta: Map::new(),
        }
    }

    fn dims3(&self) -> Result<[usize; 3]> {
        <[usize; 3]>::try_from(self.shape.as_slice())
            .map_err(|_| Error::shape("rank-3 volume", format!("shape {:?}", self.shape)))
    }

    /// Any dtype, rank 3.
    pub fn to_volume(&self) -> Result<ReflectivityVolume> {
        ReflectivityVolume::new(self.dims3()?, self.data.to_c128())
    }

    /// Real tensors are taken as is; complex tensors by modulus.
    pub fn to_magnitude(&self) -> Result<MagnitudeVolume> {
        let dims = self.dims3()?;
        let values = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            other => other.to_c128().iter().map(|z| z.norm()).collect(),
        };
        MagnitudeVolume::new(dims, values)
    }

    /// Any dtype, rank 1.
    pub fn to_measurements(&self) -> Result<MeasurementVector> {
        if self.shape.len() != 1 {
            return Err(Error::shape(
                "rank-1 measurement vector",
                format!("shape {:?}", self.shape),
            ));
        }
        Ok(MeasurementVector::new(self.data.to_c128()))
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Byte offset of a JSON error within `src`, from its line/column.
fn json_offset(src: &[u8], e: &serde_json::Error) -> u64 {
    let (line, col) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in src.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + col.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len() + 1;
    }
    src.len() as u64
}

/// Write via a temporary file in the target directory, then rename.
pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &tensor.to_bytes())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
