//! `AOST` tensor files.
//!
//! Layout: magic `AOST` | version u8 = 1 | rank u8 | 2 reserved bytes |
//! dims as u64 LE × rank | zero padding up to 32 bytes | f32 LE payload in
//! row-major order. Rank 4 needs 40 header bytes and is written unpadded.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::video::{VideoDims, VideoTensor};

pub const MAGIC: &[u8; 4] = b"AOST";
pub const VERSION: u8 = 1;
pub const MAX_RANK: usize = 4;
const MIN_HEADER: usize = 32;
/// Upper bound on element count accepted when reading (16 GiB of f32).
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn header_len(rank: usize) -> usize {
    (8 + 8 * rank).max(MIN_HEADER)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Format(format!("unsupported rank {}", dims.len())));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "dims {dims:?} hold {n} elements, payload has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&x| x as f32).collect())
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }

    pub fn encoded_len(&self) -> usize {
        header_len(self.rank()) + 4 * self.data.len()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let rank = self.rank();
        let mut header = vec![0u8; header_len(rank)];
        header[..4].copy_from_slice(MAGIC);
        header[4] = VERSION;
        header[5] = rank as u8;
        for (i, &d) in self.dims.iter().enumerate() {
            header[8 + 8 * i..16 + 8 * i].copy_from_slice(&(d as u64).to_le_bytes());
        }
        w.write_all(&header)?;
        let mut payload = Vec::with_capacity(4 * self.data.len());
        for x in &self.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut fixed = [0u8; 8];
        read_exact_or_format(&mut r, &mut fixed, "header")?;
        if &fixed[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &fixed[..4])));
        }
        if fixed[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", fixed[4])));
        }
        let rank = fixed[5] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("unsupported rank {rank}")));
        }
        let mut rest = vec![0u8; header_len(rank) - 8];
        read_exact_or_format(&mut r, &mut rest, "header")?;
        let mut dims = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        for i in 0..rank {
            let d = u64::from_le_bytes(rest[8 * i..8 * i + 8].try_into().unwrap());
            count = count
                .checked_mul(d)
                .filter(|&c| c <= MAX_ELEMENTS)
                .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
            dims.push(d as usize);
        }
        let mut payload = vec![0u8; 4 * count as usize];
        read_exact_or_format(&mut r, &mut payload, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let t = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

impl From<&VideoTensor> for RawTensor {
    fn from(v: &VideoTensor) -> Self {
        let d = v.dims();
        RawTensor::from_f64(vec![d.frames, d.height, d.width, d.channels], v.data())
            .expect("video dims are consistent")
    }
}

impl TryFrom<RawTensor> for VideoTensor {
    type Error = Error;

    fn try_from(t: RawTensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::Format(format!(
                "video tensor must be rank 4, got rank {}",
                t.rank()
            )));
        }
        let dims = VideoDims::new(t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
        VideoTensor::new(dims, t.to_f64())
    }
}

pub fn save_video(v: &VideoTensor, path: impl AsRef<Path>) -> Result<()> {
    RawTensor::from(v).save(path)
}

pub fn load_video(path: impl AsRef<Path>) -> Result<VideoTensor> {
    RawTensor::load(path)?.try_into()
}
