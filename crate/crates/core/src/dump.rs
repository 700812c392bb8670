//! Binary field dumps.
//!
//! Layout, all little-endian: the magic bytes `CHQF`, `u32` version, `u32`
//! dim, `u32` n, `f64` box length, then `n^dim` `f64` values in
//! lexicographic order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const MAGIC: &[u8; 4] = b"CHQF";
pub const VERSION: u32 = 1;

pub fn write_field<W: Write>(mut w: W, field: &Field) -> Result<()> {
    let grid = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.n() as u32).to_le_bytes())?;
    w.write_all(&grid.length().to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * grid.len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<Field> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|e| Error::BadDump(format!("short header: {e}")))?;
    if &head[0..4] != MAGIC {
        return Err(Error::BadDump("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::BadDump(format!("unsupported version {version}")));
    }
    let dim = word(8) as usize;
    let n = word(12) as usize;
    let length = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let grid = Grid::new(dim, n, length)?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != 8 * grid.len() {
        return Err(Error::BadDump(format!("expected {} value bytes, found {}", 8 * grid.len(), raw.len())));
    }
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Field::from_values(&grid, values)
}

pub fn save(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let mut buf = Vec::new();
    write_field(&mut buf, field)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Field> {
    read_field(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(-1e300f64..1e300, 64), l in 0.1f64..100.0) {
            let grid = Grid::new(2, 8, l).unwrap();
            let f = Field::from_values(&grid, vals).unwrap();
            let mut buf = Vec::new();
            write_field(&mut buf, &f).unwrap();
            prop_assert_eq!(buf.len(), 24 + 8 * 64);
            let back = read_field(&buf[..]).unwrap();
            prop_assert_eq!(back.grid().length().to_bits(), l.to_bits());
            for (a, b) in back.values().iter().zip(f.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let grid = Grid::new(1, 8, 1.0).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &Field::constant(&grid, 1.0)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(&bad[..]), Err(Error::BadDump(_))));
        assert!(matches!(read_field(&buf[..buf.len() - 1]), Err(Error::BadDump(_))));
    }
}
