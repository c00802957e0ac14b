//! Binary dataset container.
//!
//! ```text
//! "ECGL"  version:u16  count:u32
//! per record:
//!   id_len:u32 id:utf8  sample_rate:f64  lead_count:u16
//!   lead_count × (name_len:u32 name:utf8)
//!   sample_count:u32  lead_count·sample_count × f32   (row-major, µV)
//!   fiducial_count:u32  fiducial_count × u32          (u32::MAX = absent)
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{EcgRecord, SignalError};

pub const MAGIC: &[u8; 4] = b"ECGL";
pub const VERSION: u16 = 1;
const NO_FIDUCIALS: u32 = u32::MAX;

pub fn encode_dataset(records: &[EcgRecord]) -> Result<Vec<u8>, SignalError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(records.len()).map_err(|_| SignalError::too_large("record count"))?.to_le_bytes());
    for rec in records {
        put_str(&mut out, rec.id())?;
        out.extend_from_slice(&rec.sample_rate_hz().to_le_bytes());
        out.extend_from_slice(&u16::try_from(rec.num_leads()).map_err(|_| SignalError::too_large("lead count"))?.to_le_bytes());
        for name in rec.leads() {
            put_str(&mut out, name)?;
        }
        out.extend_from_slice(&u32::try_from(rec.num_samples()).map_err(|_| SignalError::too_large("sample count"))?.to_le_bytes());
        for v in rec.signal() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match rec.fiducials() {
            None => out.extend_from_slice(&NO_FIDUCIALS.to_le_bytes()),
            Some(f) => {
                out.extend_from_slice(&(f.len() as u32).to_le_bytes());
                for &i in f {
                    out.extend_from_slice(&(i as u32).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), SignalError> {
    out.extend_from_slice(&u32::try_from(s.len()).map_err(|_| SignalError::too_large("string"))?.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    record: Option<String>,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> SignalError {
        SignalError::Format { record: self.record.clone(), offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SignalError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("unexpected end of file (needed {n} bytes)")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, SignalError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, SignalError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, SignalError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, SignalError> {
        let n = self.u32()? as usize;
        let start = self.pos;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| {
            let mut e = self.err("invalid UTF-8 string");
            if let SignalError::Format { offset, .. } = &mut e {
                *offset = start as u64;
            }
            e
        })
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Vec<EcgRecord>, SignalError> {
    if buf.is_empty() {
        return Ok(Vec::new());
    }
    let mut r = Reader { buf, pos: 0, record: None };
    if r.take(4)? != MAGIC {
        return Err(SignalError::Format { record: None, offset: 0, message: "bad magic, expected \"ECGL\"".into() });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported container version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        r.record = None;
        let id = r.string()?;
        r.record = Some(id.clone());
        let fs = r.f64()?;
        let leads = (0..r.u16()?).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let n = r.u32()? as usize;
        let data_start = r.pos;
        let raw = r.take(leads.len() * n * 4)?;
        let signal: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if let Some(pos) = signal.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::Format {
                record: Some(id),
                offset: (data_start + pos * 4) as u64,
                message: "non-finite sample".into(),
            });
        }
        let fcount = r.u32()?;
        let fiducials = if fcount == NO_FIDUCIALS {
            None
        } else {
            Some((0..fcount).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?)
        };
        let at = r.pos as u64;
        let rec = EcgRecord::from_flat(id.clone(), fs, leads, n, signal, fiducials).map_err(|e| SignalError::Format {
            record: Some(id),
            offset: at,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes after last record"));
    }
    Ok(records)
}

pub fn write_dataset(records: &[EcgRecord], path: impl AsRef<Path>) -> Result<(), SignalError> {
    let bytes = encode_dataset(records)?;
    fs::write(path.as_ref(), bytes).map_err(|e| SignalError::io(path.as_ref(), e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<EcgRecord>, SignalError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| SignalError::io(path.as_ref(), e))?;
    decode_dataset(&bytes)
}
