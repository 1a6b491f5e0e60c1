//! Parameter checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic   8 bytes  "ADVCKPT1"
//! count   u32      number of records
//! record  repeated `count` times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (ndim × u64)
//!   data     prod(dims) × f64
//! ```

use std::io::{Read, Write};

use crate::error::TensorError;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ADVCKPT1";

pub fn write_checkpoint<W: Write>(mut out: W, records: &[(String, Tensor)]) -> Result<(), TensorError> {
    out.write_all(MAGIC)?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<Rd: Read>(r: &mut Rd) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<Rd: Read>(r: &mut Rd) -> Result<u64, TensorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<Rd: Read>(mut input: Rd) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let count = read_u32(&mut input)?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let ndim = read_u32(&mut input)? as usize;
        let shape = (0..ndim).map(|_| read_u64(&mut input).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            input.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        records.push((name, Tensor::new(&shape, data)?));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let recs = vec![
            ("conv1/w".to_string(), Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 7.0]).unwrap()),
            ("b".to_string(), Tensor::new(&[1], vec![0.1]).unwrap()),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &recs).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn truncated_and_foreign_inputs_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("w".into(), Tensor::ones(&[4]))]).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        assert!(matches!(read_checkpoint(&b"NOTACKPT\0\0\0\0"[..]), Err(TensorError::Checkpoint(_))));
    }
}
