//! `.ptns` tensor container.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "PTNS"
//! 4       4         version, u32 LE, = 1
//! 8       1         dtype: 0 = f32, 1 = u32, 2 = bool (one byte, 0 or 1)
//! 9       1         rank, 1..=3
//! 10      4 * rank  dims, u32 LE each, all non-zero
//! ...               payload, row-major, little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result, TensorError};
use crate::raster::{Raster2D, Raster3D};

pub const MAGIC: [u8; 4] = *b"PTNS";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "ptns";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U32 = 1,
    Bool = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(Self::F32),
            1 => Ok(Self::U32),
            2 => Ok(Self::Bool),
            other => Err(TensorError::BadDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 | Self::U32 => 4,
            Self::Bool => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            Self::F32(_) => DType::F32,
            Self::U32(_) => DType::U32,
            Self::Bool(_) => DType::Bool,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::U32(v) => v.len(),
            Self::Bool(v) => v.len(),
        }
    }
}

/// Element types that can live in a container.
pub trait TensorElement: Copy + Sized {
    const DTYPE: DType;
    fn wrap(data: Vec<Self>) -> TensorData;
    fn unwrap(data: TensorData) -> Option<Vec<Self>>;
}

macro_rules! tensor_element {
    ($ty:ty, $variant:ident) => {
        impl TensorElement for $ty {
            const DTYPE: DType = DType::$variant;
            fn wrap(data: Vec<Self>) -> TensorData {
                TensorData::$variant(data)
            }
            fn unwrap(data: TensorData) -> Option<Vec<Self>> {
                match data {
                    TensorData::$variant(v) => Some(v),
                    _ => None,
                }
            }
        }
    };
}

tensor_element!(f32, F32);
tensor_element!(u32, U32);
tensor_element!(bool, Bool);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

fn check_dims(dims: &[usize]) -> Result<(), TensorError> {
    if dims.is_empty() || dims.len() > 3 {
        return Err(TensorError::BadRank(dims.len().min(255) as u8));
    }
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(TensorError::EmptyDimension { axis });
    }
    Ok(())
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        check_dims(&dims)?;
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(TensorError::PayloadLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn from_raster2d<T: TensorElement>(raster: &Raster2D<T>) -> Self {
        Self {
            dims: vec![raster.height(), raster.width()],
            data: T::wrap(raster.data().to_vec()),
        }
    }

    pub fn from_raster3d<T: TensorElement>(raster: &Raster3D<T>) -> Self {
        Self {
            dims: vec![raster.height(), raster.width(), raster.channels()],
            data: T::wrap(raster.data().to_vec()),
        }
    }

    fn describe(&self) -> String {
        format!("{:?} rank {}", self.dtype(), self.dims.len())
    }

    pub fn into_raster2d<T: TensorElement>(self) -> Result<Raster2D<T>> {
        let found = self.describe();
        let wrong = || TensorError::WrongKind {
            expected: "rank-2 tensor of the requested dtype",
            found: found.clone(),
        };
        if self.dims.len() != 2 {
            return Err(wrong().into());
        }
        let data = T::unwrap(self.data).ok_or_else(wrong)?;
        Raster2D::from_vec(self.dims[0], self.dims[1], data)
    }

    pub fn into_raster3d<T: TensorElement>(self) -> Result<Raster3D<T>> {
        let found = self.describe();
        let wrong = || TensorError::WrongKind {
            expected: "rank-3 tensor of the requested dtype",
            found: found.clone(),
        };
        if self.dims.len() != 3 {
            return Err(wrong().into());
        }
        let data = T::unwrap(self.data).ok_or_else(wrong)?;
        Raster3D::from_vec(self.dims[0], self.dims[1], self.dims[2], data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.data.len();
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + n * self.dtype().size());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype() as u8);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Bool(v) => out.extend(v.iter().map(|&b| u8::from(b))),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take("magic", 4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(TensorError::BadVersion(version));
        }
        let dtype = DType::from_code(cur.take("dtype", 1)?[0])?;
        let rank = cur.take("rank", 1)?[0];
        if !(1..=3).contains(&rank) {
            return Err(TensorError::BadRank(rank));
        }
        let dims = (0..rank)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        check_dims(&dims)?;
        let len = dims
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d));
        let payload = match len {
            Some(len) => cur.take("payload", len)?,
            None => {
                return Err(TensorError::Truncated {
                    field: "payload",
                    needed: usize::MAX,
                    available: bytes.len() - cur.pos,
                })
            }
        };
        if cur.pos != bytes.len() {
            return Err(TensorError::TrailingBytes(bytes.len() - cur.pos));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::U32 => TensorData::U32(
                payload
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::Bool => TensorData::Bool(
                payload
                    .iter()
                    .enumerate()
                    .map(|(index, &value)| match value {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(TensorError::BadBool { index, value }),
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(Self { dims, data })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, field: &'static str, len: usize) -> Result<&'a [u8], TensorError> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(TensorError::Truncated {
                field,
                needed: len,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(
            self.take(field, 4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Tensor::from_bytes(&bytes)?)
}
