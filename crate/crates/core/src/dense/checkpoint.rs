//! Binary checkpoint: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header (vocabulary, shape, versions, optimizer hyper-parameters),
//! then row-major little-endian `f64` payloads in the order: embedding
//! tables, Adam first moments, Adam second moments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::optim::{AdamConfig, OptimizerState};
use super::params::EncoderParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LXMCKPT\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dim: usize,
    shared: bool,
    params_version: u64,
    terms: Vec<String>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

fn write_matrix(w: &mut impl Write, m: &Matrix) -> std::io::Result<()> {
    for x in m.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<Matrix> {
    let mut bytes = vec![0u8; rows * cols * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn save_checkpoint(path: &Path, params: &EncoderParams, opt: Option<&OptimizerState>) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        dim: params.dim(),
        shared: params.is_shared(),
        params_version: params.version(),
        terms: params.terms().to_vec(),
        optimizer: opt.map(|o| OptimizerHeader {
            config: o.config,
            step: o.step,
        }),
    };
    let header = serde_json::to_vec(&header)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for t in params.tables() {
        write_matrix(&mut w, t).map_err(io)?;
    }
    if let Some(o) = opt {
        for m in o.m.iter().chain(&o.v) {
            write_matrix(&mut w, m).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let rows = header.terms.len();
    let n_tables = if header.shared { 1 } else { 2 };
    let mut tables = Vec::new();
    for _ in 0..n_tables {
        tables.push(read_matrix(&mut r, rows, header.dim).map_err(io)?);
    }
    let passage_table = if header.shared { None } else { tables.pop() };
    let query_table = tables.pop().unwrap();
    let params = EncoderParams::from_parts(header.terms, query_table, passage_table, header.params_version);
    let optimizer = match header.optimizer {
        None => None,
        Some(oh) => {
            let mut mats = Vec::new();
            for _ in 0..2 * n_tables {
                mats.push(read_matrix(&mut r, rows, header.dim).map_err(io)?);
            }
            let v = mats.split_off(n_tables);
            Some(OptimizerState {
                config: oh.config,
                step: oh.step,
                m: mats,
                v,
            })
        }
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { params, optimizer })
}
