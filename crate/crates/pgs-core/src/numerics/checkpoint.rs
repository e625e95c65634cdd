//! Bit-exact binary container for trained parameters and metadata.
//!
//! Layout (all little-endian): magic `PGSC`, format version `u32`, section
//! count `u32`, then each section as name length `u32` + UTF-8 name + kind
//! byte + payload. Networks serialize as layer dims (`u64` count + values)
//! followed by each layer's weight matrix row-major then its bias vector,
//! every `f64` via `to_le_bytes`, so a round trip reproduces parameters bit
//! for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mlp::Mlp;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PGSC";
const VERSION: u32 = 1;

const KIND_NET: u8 = 0;
const KIND_F64S: u8 = 1;
const KIND_U64S: u8 = 2;
const KIND_TEXT: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Net(Mlp),
    F64s(Vec<f64>),
    U64s(Vec<u64>),
    Text(String),
}

/// Ordered collection of named sections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Section)>,
}

impl Checkpoint {
    pub fn new() -> Checkpoint {
        Checkpoint::default()
    }

    pub fn push_net(&mut self, name: &str, net: &Mlp) {
        self.sections.push((name.to_string(), Section::Net(net.clone())));
    }

    pub fn push_f64s(&mut self, name: &str, values: &[f64]) {
        self.sections.push((name.to_string(), Section::F64s(values.to_vec())));
    }

    pub fn push_u64s(&mut self, name: &str, values: &[u64]) {
        self.sections.push((name.to_string(), Section::U64s(values.to_vec())));
    }

    pub fn push_text(&mut self, name: &str, text: &str) {
        self.sections.push((name.to_string(), Section::Text(text.to_string())));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    fn find(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("checkpoint has no section named {name:?}")))
    }

    pub fn net(&self, name: &str) -> Result<&Mlp> {
        match self.find(name)? {
            Section::Net(net) => Ok(net),
            _ => Err(Error::Format(format!("section {name:?} is not a network"))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.find(name)? {
            Section::F64s(v) => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not an f64 vector"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.find(name)? {
            Section::U64s(v) => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not a u64 vector"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.find(name)? {
            Section::Text(s) => Ok(s),
            _ => Err(Error::Format(format!("section {name:?} is not text"))),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, section) in &self.sections {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            match section {
                Section::Net(net) => {
                    w.write_all(&[KIND_NET])?;
                    write_net(w, net)?;
                }
                Section::F64s(v) => {
                    w.write_all(&[KIND_F64S])?;
                    w.write_all(&(v.len() as u64).to_le_bytes())?;
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Section::U64s(v) => {
                    w.write_all(&[KIND_U64S])?;
                    w.write_all(&(v.len() as u64).to_le_bytes())?;
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Section::Text(s) => {
                    w.write_all(&[KIND_TEXT])?;
                    w.write_all(&(s.len() as u64).to_le_bytes())?;
                    w.write_all(s.as_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let section = match kind[0] {
                KIND_NET => Section::Net(read_net(r)?),
                KIND_F64S => {
                    let len = read_u64(r)? as usize;
                    let mut v = Vec::with_capacity(len);
                    for _ in 0..len {
                        v.push(read_f64(r)?);
                    }
                    Section::F64s(v)
                }
                KIND_U64S => {
                    let len = read_u64(r)? as usize;
                    let mut v = Vec::with_capacity(len);
                    for _ in 0..len {
                        v.push(read_u64(r)?);
                    }
                    Section::U64s(v)
                }
                KIND_TEXT => {
                    let len = read_u64(r)? as usize;
                    let mut bytes = vec![0u8; len];
                    r.read_exact(&mut bytes)?;
                    Section::Text(
                        String::from_utf8(bytes)
                            .map_err(|_| Error::Format("text section is not UTF-8".into()))?,
                    )
                }
                k => return Err(Error::Format(format!("unknown section kind {k}"))),
            };
            sections.push((name, section));
        }
        Ok(Checkpoint { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn write_net(w: &mut impl Write, net: &Mlp) -> Result<()> {
    w.write_all(&(net.dims().len() as u64).to_le_bytes())?;
    for &d in net.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for k in 0..net.n_layers() {
        for x in net.weights(k) {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in net.biases(k) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_net(r: &mut impl Read) -> Result<Mlp> {
    let n_dims = read_u64(r)? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::Format(format!("implausible layer-dim count {n_dims}")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(read_u64(r)? as usize);
    }
    let mut weights = Vec::with_capacity(n_dims - 1);
    let mut biases = Vec::with_capacity(n_dims - 1);
    for k in 0..n_dims - 1 {
        let mut w = Vec::with_capacity(dims[k] * dims[k + 1]);
        for _ in 0..dims[k] * dims[k + 1] {
            w.push(read_f64(r)?);
        }
        let mut b = Vec::with_capacity(dims[k + 1]);
        for _ in 0..dims[k + 1] {
            b.push(read_f64(r)?);
        }
        weights.push(w);
        biases.push(b);
    }
    Mlp::from_parts(dims, weights, biases)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
