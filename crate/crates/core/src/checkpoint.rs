//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NTMD"  u32 version
//! u64 header length, JSON header
//! u32 record count, then per record:
//!     u32 name length, name bytes, u8 scalar width tag, u32 rank, u64 dims…,
//!     raw scalars
//! ```
//!
//! Records are the parameters (`param/NAME`) followed by the Adam moments
//! (`adam.m/NAME`, `adam.v/NAME`), all in parameter order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Architecture, Network};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::tensor::{DType, Real, Tensor};
use crate::train::{Progress, RngState, TrainConfig, Trainer};

pub const MAGIC: &[u8; 4] = b"NTMD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub train: TrainConfig,
    pub vocab: Vec<String>,
    /// Scalar width in bits (32 or 64).
    pub precision: u8,
    pub progress: Progress,
    pub rng: RngState,
    pub adam: AdamConfig,
    pub adam_t: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub header: Header,
    pub params: ParamStore<T>,
    pub adam_m: Vec<Vec<T>>,
    pub adam_v: Vec<Vec<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_trainer(t: &Trainer<T>) -> Self {
        Checkpoint {
            header: Header {
                train: t.cfg.clone(),
                vocab: t.vocab.tokens().to_vec(),
                precision: T::DTYPE.tag(),
                progress: t.progress,
                rng: t.epoch_rng.clone(),
                adam: t.adam.cfg,
                adam_t: t.adam.t,
            },
            params: t.net.params.clone(),
            adam_m: t.adam.m.clone(),
            adam_v: t.adam.v.clone(),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer<T>> {
        let vocab = Vocabulary::from_list(self.header.vocab)?;
        let net = Network::with_params(self.header.train.model.clone(), self.params)?;
        Ok(Trainer {
            cfg: self.header.train,
            net,
            adam: Adam {
                cfg: self.header.adam,
                t: self.header.adam_t,
                m: self.adam_m,
                v: self.adam_v,
            },
            vocab,
            progress: self.header.progress,
            epoch_rng: self.header.rng,
        })
    }

    pub fn network(&self) -> Result<Network<T>> {
        Network::with_params(self.header.train.model.clone(), self.params.clone())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_list(self.header.vocab.clone())
    }

    pub fn arch(&self) -> Architecture {
        self.header.train.model.arch
    }

    /// Configuration error unless the checkpoint holds `arch`.
    pub fn expect_arch(&self, arch: Architecture) -> Result<()> {
        if self.arch() != arch {
            return Err(Error::config(format!(
                "checkpoint holds a {} model, not {arch}",
                self.arch()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let n = self.params.len();
        w.write_all(&((3 * n) as u32).to_le_bytes())?;
        for (_, name, t) in self.params.iter() {
            write_record(&mut w, &format!("param/{name}"), t.shape(), t.data())?;
        }
        for (prefix, bufs) in [("adam.m", &self.adam_m), ("adam.v", &self.adam_v)] {
            for ((_, name, t), buf) in self.params.iter().zip(bufs) {
                write_record(&mut w, &format!("{prefix}/{name}"), t.shape(), buf)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let header = read_header(&mut r)?;
        if header.precision != T::DTYPE.tag() {
            return Err(Error::config(format!(
                "checkpoint stores {}-bit scalars, expected {}-bit",
                header.precision,
                T::DTYPE.tag()
            )));
        }
        let count = read_u32(&mut r)? as usize;
        if !count.is_multiple_of(3) {
            return Err(Error::Corrupt(format!("record count {count} is not a multiple of 3")));
        }
        let n = count / 3;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let (name, shape, data) = read_record::<T, _>(&mut r)?;
            let name = name
                .strip_prefix("param/")
                .ok_or_else(|| Error::Corrupt(format!("unexpected record {name:?}")))?;
            params.add(name, Tensor::new(&shape, data).map_err(|e| Error::Corrupt(e.to_string()))?);
        }
        let mut moments = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for (k, prefix) in ["adam.m/", "adam.v/"].iter().enumerate() {
            for id in params.ids() {
                let (name, shape, data) = read_record::<T, _>(&mut r)?;
                if name.strip_prefix(prefix) != Some(params.name(id)) || shape != params.get(id).shape() {
                    return Err(Error::Corrupt(format!("unexpected record {name:?}")));
                }
                moments[k].push(data);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after the last record".into()));
        }
        let [adam_m, adam_v] = moments;
        Ok(Checkpoint {
            header,
            params,
            adam_m,
            adam_v,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reads only the header, e.g. to find the stored precision.
pub fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Corrupt("not a checkpoint file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let len = read_u64(r)?;
    if len > 1 << 32 {
        return Err(Error::Corrupt(format!("header length {len} is implausible")));
    }
    let mut buf = vec![0u8; len as usize];
    read_exact(r, &mut buf)?;
    serde_json::from_slice(&buf).map_err(|e| Error::Corrupt(format!("header: {e}")))
}

pub fn peek_header(path: &Path) -> Result<Header> {
    read_header(&mut fs::File::open(path)?)
}

fn write_record<T: Real, W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[T]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[T::DTYPE.tag()])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * T::DTYPE.width());
    for &x in data {
        x.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_record<T: Real, R: Read>(r: &mut R) -> Result<(String, Vec<usize>, Vec<T>)> {
    let len = read_u32(r)? as usize;
    if len > 4096 {
        return Err(Error::Corrupt(format!("record name length {len} is implausible")));
    }
    let mut name = vec![0u8; len];
    read_exact(r, &mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::Corrupt("record name is not UTF-8".into()))?;
    let mut tag = [0u8; 1];
    read_exact(r, &mut tag)?;
    if DType::from_tag(tag[0]) != Some(T::DTYPE) {
        return Err(Error::Corrupt(format!("record {name:?} has scalar tag {}", tag[0])));
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Corrupt(format!("record {name:?} has rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let bytes = count
        .and_then(|c| c.checked_mul(T::DTYPE.width()))
        .filter(|&b| b <= 1 << 34)
        .ok_or_else(|| Error::Corrupt(format!("record {name:?} has an implausible shape")))?;
    let mut raw = vec![0u8; bytes];
    read_exact(r, &mut raw)?;
    let data = raw.chunks_exact(T::DTYPE.width()).map(T::read_le).collect();
    Ok((name, shape, data))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Corrupt("file is truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
