//! Little-endian binary helpers for model files.

use std::io::{Read, Write};

use crate::error::{Error, Result};

fn io(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4], version: u32) -> Result<()> {
    w.write_all(magic).map_err(io)?;
    write_u32(w, version)
}

pub fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], version: u32) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(io)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(Error::Format(format!("unsupported version {v}, expected {version}")));
    }
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io)
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io)
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    write_u64(w, values.len() as u64)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(io)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn write_u32s<W: Write>(w: &mut W, values: &[u32]) -> Result<()> {
    write_u64(w, values.len() as u64)?;
    for v in values {
        write_u32(w, *v)?;
    }
    Ok(())
}

pub fn read_u32s<R: Read>(r: &mut R) -> Result<Vec<u32>> {
    let n = read_u64(r)? as usize;
    (0..n).map(|_| read_u32(r)).collect()
}

pub fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes()).map_err(io)
}

pub fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u64(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(io)?;
    String::from_utf8(b).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_strings<W: Write>(w: &mut W, values: &[String]) -> Result<()> {
    write_u64(w, values.len() as u64)?;
    values.iter().try_for_each(|s| write_string(w, s))
}

pub fn read_strings<R: Read>(r: &mut R) -> Result<Vec<String>> {
    let n = read_u64(r)? as usize;
    (0..n).map(|_| read_string(r)).collect()
}
