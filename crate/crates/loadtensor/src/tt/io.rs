//! Binary dump format for TT vectors and operators.
//!
//! Layout (all integers `u32` little-endian, all floats `f64` little-endian):
//!
//! ```text
//! vector:   "TTV1" | K | mode sizes (K) | ranks (K+1) | core data
//! operator: "TTM1" | K | row modes (K) | col modes (K) | ranks (K+1) | core data
//! ```
//!
//! Core data is concatenated in natural order, each core row-major. Readers
//! validate the magic tag, every declared size, and the rank chain before
//! returning.

use super::{Core3, Core4, TtError, TtMatrix, TtVector};
use std::io::{Read, Write};

const VECTOR_MAGIC: &[u8; 4] = b"TTV1";
const MATRIX_MAGIC: &[u8; 4] = b"TTM1";

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<(), TtError> {
    let v = u32::try_from(v).map_err(|_| TtError::Dump(format!("size {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize, TtError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> Result<(), TtError> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>, TtError> {
    let mut out = vec![0.0; len];
    let mut buf = [0u8; 8];
    for slot in out.iter_mut() {
        r.read_exact(&mut buf)?;
        *slot = f64::from_le_bytes(buf);
    }
    Ok(out)
}

/// Writes a TT vector dump to `w`.
pub fn write_tt_vector<W: Write>(mut w: W, v: &TtVector) -> Result<(), TtError> {
    w.write_all(VECTOR_MAGIC)?;
    let k = v.ndims();
    write_u32(&mut w, k)?;
    for n in v.modes() {
        write_u32(&mut w, n)?;
    }
    for r in v.ranks() {
        write_u32(&mut w, r)?;
    }
    for core in v.cores() {
        write_f64s(&mut w, &core.data)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a TT vector dump from `r`, validating the header and rank chain.
pub fn read_tt_vector<R: Read>(mut r: R) -> Result<TtVector, TtError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != VECTOR_MAGIC {
        return Err(TtError::Dump(format!(
            "bad magic {:?}, expected {:?}",
            magic, VECTOR_MAGIC
        )));
    }
    let k = read_u32(&mut r)?;
    if k == 0 || k > 64 {
        return Err(TtError::Dump(format!("implausible dimension count {k}")));
    }
    let modes: Vec<usize> = (0..k).map(|_| read_u32(&mut r)).collect::<Result<_, _>>()?;
    let ranks: Vec<usize> = (0..=k).map(|_| read_u32(&mut r)).collect::<Result<_, _>>()?;
    if modes.iter().any(|&n| n == 0) || ranks.iter().any(|&x| x == 0) {
        return Err(TtError::Dump("zero mode size or rank".into()));
    }
    let mut cores = Vec::with_capacity(k);
    for i in 0..k {
        let len = ranks[i]
            .checked_mul(modes[i])
            .and_then(|x| x.checked_mul(ranks[i + 1]))
            .ok_or_else(|| TtError::Dump("core size overflow".into()))?;
        let data = read_f64s(&mut r, len)?;
        cores.push(Core3 { r_left: ranks[i], n: modes[i], r_right: ranks[i + 1], data });
    }
    TtVector::from_cores(cores)
}

/// Writes a TT operator dump to `w`.
pub fn write_tt_matrix<W: Write>(mut w: W, m: &TtMatrix) -> Result<(), TtError> {
    w.write_all(MATRIX_MAGIC)?;
    let k = m.ndims();
    write_u32(&mut w, k)?;
    for n in m.row_modes() {
        write_u32(&mut w, n)?;
    }
    for n in m.col_modes() {
        write_u32(&mut w, n)?;
    }
    for r in m.ranks() {
        write_u32(&mut w, r)?;
    }
    for core in 0..k {
        write_f64s(&mut w, &m.core(core).data)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a TT operator dump from `r`, validating the header and rank chain.
pub fn read_tt_matrix<R: Read>(mut r: R) -> Result<TtMatrix, TtError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(TtError::Dump(format!(
            "bad magic {:?}, expected {:?}",
            magic, MATRIX_MAGIC
        )));
    }
    let k = read_u32(&mut r)?;
    if k == 0 || k > 64 {
        return Err(TtError::Dump(format!("implausible dimension count {k}")));
    }
    let rows: Vec<usize> = (0..k).map(|_| read_u32(&mut r)).collect::<Result<_, _>>()?;
    let cols: Vec<usize> = (0..k).map(|_| read_u32(&mut r)).collect::<Result<_, _>>()?;
    let ranks: Vec<usize> = (0..=k).map(|_| read_u32(&mut r)).collect::<Result<_, _>>()?;
    if rows.iter().chain(&cols).any(|&n| n == 0) || ranks.iter().any(|&x| x == 0) {
        return Err(TtError::Dump("zero mode size or rank".into()));
    }
    let mut cores = Vec::with_capacity(k);
    for i in 0..k {
        let len = ranks[i]
            .checked_mul(rows[i])
            .and_then(|x| x.checked_mul(cols[i]))
            .and_then(|x| x.checked_mul(ranks[i + 1]))
            .ok_or_else(|| TtError::Dump("core size overflow".into()))?;
        let data = read_f64s(&mut r, len)?;
        cores.push(Core4 {
            r_left: ranks[i],
            n_out: rows[i],
            n_in: cols[i],
            r_right: ranks[i + 1],
            data,
        });
    }
    TtMatrix::from_cores(cores)
}

#[cfg(test)]
mod tests {
    use super::super::dense::{tt_from_dense, DenseTensor};
    use super::*;

    fn sample_vector() -> TtVector {
        let t = DenseTensor::from_fn(&[4, 6, 5], |idx| {
            (idx[0] as f64 + 0.5) * (0.3 * idx[1] as f64).sin() + idx[2] as f64
        })
        .unwrap();
        tt_from_dense(&t, 1e-12, 20).unwrap()
    }

    #[test]
    fn vector_round_trip_is_exact() {
        let v = sample_vector();
        let mut buf: Vec<u8> = Vec::new();
        write_tt_vector(&mut buf, &v).unwrap();
        let back = read_tt_vector(buf.as_slice()).unwrap();
        assert_eq!(v.cores(), back.cores());
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = TtMatrix::diagonal(&sample_vector());
        let mut buf: Vec<u8> = Vec::new();
        write_tt_matrix(&mut buf, &m).unwrap();
        let back = read_tt_matrix(buf.as_slice()).unwrap();
        for k in 0..m.ndims() {
            assert_eq!(m.core(k).data, back.core(k).data);
            assert_eq!(m.core(k).r_left, back.core(k).r_left);
            assert_eq!(m.core(k).r_right, back.core(k).r_right);
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let v = sample_vector();
        let mut buf: Vec<u8> = Vec::new();
        write_tt_vector(&mut buf, &v).unwrap();
        buf[0] = b'X';
        match read_tt_vector(buf.as_slice()) {
            Err(TtError::Dump(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected dump error, got {:?}", other.map(|v| v.ranks())),
        }
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let v = sample_vector();
        let mut buf: Vec<u8> = Vec::new();
        write_tt_vector(&mut buf, &v).unwrap();
        buf.truncate(buf.len() - 9);
        assert!(read_tt_vector(buf.as_slice()).is_err());
    }

    #[test]
    fn vector_magic_does_not_open_as_matrix() {
        let v = sample_vector();
        let mut buf: Vec<u8> = Vec::new();
        write_tt_vector(&mut buf, &v).unwrap();
        assert!(read_tt_matrix(buf.as_slice()).is_err());
    }
}
