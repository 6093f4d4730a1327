//! NMSP container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "NMSP"
//!      4     1  version (1)
//!      5     1  q
//!      6     1  n
//!      7     1  m
//!      8     4  rows (u32 LE)
//!     12     4  cols (u32 LE)
//!     16     1  group axis (0 = groups along rows, 1 = along cols)
//!     17     3  reserved, zero
//!     20     -  masks: m bits per group, LSB-first, byte-padded
//!      -     -  values: n slots of q bits per group, LSB-first, byte-padded
//! ```

use std::io::{Read, Write};

use super::{CompressedMatrix, GroupAxis, GroupMask, NmConfig, NmError};

pub const NMSP_MAGIC: [u8; 4] = *b"NMSP";
pub const NMSP_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            bytes: Vec::new(),
            acc: 0,
            filled: 0,
        }
    }

    /// Appends the low `width` bits of `v` (width <= 64).
    fn push(&mut self, v: u64, width: u32) {
        let mut v = if width == 64 { v } else { v & ((1u64 << width) - 1) };
        let mut width = width;
        while width > 0 {
            let take = width.min(8 - self.filled);
            self.acc |= (v & ((1u64 << take) - 1)) << self.filled;
            self.filled += take;
            v = if take == 64 { 0 } else { v >> take };
            width -= take;
            if self.filled == 8 {
                self.bytes.push(self.acc as u8);
                self.acc = 0;
                self.filled = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push(self.acc as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn pull(&mut self, width: u32) -> Result<u64, NmError> {
        let end = self.pos + width as usize;
        if end > self.bytes.len() * 8 {
            return Err(NmError::CorruptStream("truncated bit section".into()));
        }
        let mut out = 0u64;
        let mut got = 0u32;
        while got < width {
            let byte = self.bytes[self.pos / 8] as u64;
            let off = (self.pos % 8) as u32;
            let take = (8 - off).min(width - got);
            let chunk = (byte >> off) & ((1u64 << take) - 1);
            out |= chunk << got;
            got += take;
            self.pos += take as usize;
        }
        Ok(out)
    }
}

fn section_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

pub fn write_nmsp<W: Write>(c: &CompressedMatrix, mut sink: W) -> Result<(), NmError> {
    let cfg = c.config();
    let rows = u32::try_from(c.rows())
        .map_err(|_| NmError::CorruptStream("row count exceeds u32".into()))?;
    let cols = u32::try_from(c.cols())
        .map_err(|_| NmError::CorruptStream("column count exceeds u32".into()))?;
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&NMSP_MAGIC);
    header[4] = NMSP_VERSION;
    header[5] = cfg.q();
    header[6] = cfg.n() as u8;
    header[7] = cfg.m() as u8;
    header[8..12].copy_from_slice(&rows.to_le_bytes());
    header[12..16].copy_from_slice(&cols.to_le_bytes());
    header[16] = c.group_axis().code();
    sink.write_all(&header)?;

    let mut masks = BitWriter::new();
    for mask in c.masks() {
        masks.push(mask.bits(), cfg.m());
    }
    sink.write_all(&masks.finish())?;

    let mut values = BitWriter::new();
    for &v in c.values() {
        values.push(v as i64 as u64, cfg.q() as u32);
    }
    sink.write_all(&values.finish())?;
    Ok(())
}

pub fn read_nmsp<R: Read>(mut source: R) -> Result<CompressedMatrix, NmError> {
    let mut header = [0u8; HEADER_LEN];
    read_exact(&mut source, &mut header, "header")?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != NMSP_MAGIC {
        return Err(NmError::BadMagic(magic));
    }
    if header[4] != NMSP_VERSION {
        return Err(NmError::UnsupportedVersion(header[4]));
    }
    let config = NmConfig::new(header[6] as u32, header[7] as u32, header[5])
        .map_err(|e| NmError::CorruptStream(e.to_string()))?;
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let axis = GroupAxis::from_code(header[16])
        .ok_or_else(|| NmError::CorruptStream(format!("group axis code {}", header[16])))?;
    if header[17..20] != [0, 0, 0] {
        return Err(NmError::CorruptStream("reserved header bytes set".into()));
    }

    let (k, j) = axis.extents(rows, cols);
    let groups = k.div_ceil(config.m() as usize) * j;
    let mut mask_bytes = vec![0u8; section_len(groups * config.m() as usize)];
    read_exact(&mut source, &mut mask_bytes, "mask section")?;
    let mut value_bytes =
        vec![0u8; section_len(groups * config.n() as usize * config.q() as usize)];
    read_exact(&mut source, &mut value_bytes, "value section")?;
    let mut trailing = [0u8; 1];
    if source.read(&mut trailing)? != 0 {
        return Err(NmError::CorruptStream("trailing bytes after value section".into()));
    }

    let mut br = BitReader::new(&mask_bytes);
    let masks = (0..groups)
        .map(|_| br.pull(config.m()).map(GroupMask))
        .collect::<Result<Vec<_>, _>>()?;
    let q = config.q() as u32;
    let mut br = BitReader::new(&value_bytes);
    let values = (0..groups * config.n() as usize)
        .map(|_| {
            br.pull(q).map(|raw| {
                // sign-extend from q bits
                let shift = 64 - q;
                (((raw << shift) as i64) >> shift) as i32
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    CompressedMatrix::from_parts(config, rows, cols, axis, masks, values)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), NmError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NmError::CorruptStream(format!("truncated {what}")),
        _ => NmError::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nm::compress;
    use crate::rng;

    fn sample(seed: u64, rows: usize, cols: usize, n: u32, m: u32, q: u8) -> CompressedMatrix {
        let cfg = NmConfig::new(n, m, q).unwrap();
        let bound = (1i32 << (q.min(31) - 1)) - 1;
        let d = rng::random_nm_sparse(&mut rng::seeded(seed), rows, cols, cfg, bound);
        compress(&d, cfg).unwrap()
    }

    #[test]
    fn golden_header() {
        let c = sample(1, 8, 8, 2, 8, 16);
        let mut buf = Vec::new();
        write_nmsp(&c, &mut buf).unwrap();
        let expected: [u8; 20] = [
            b'N', b'M', b'S', b'P', 1, 16, 2, 8, 8, 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0,
        ];
        assert_eq!(&buf[..20], &expected);
        // 8 groups * 8 mask bits, then 8 groups * 2 slots * 16 bits
        assert_eq!(buf.len(), 20 + 8 + 32);
    }

    #[test]
    fn hand_assembled_stream() {
        // 4x1 column [5, 0, 0, -3] at 2:4/q=8
        let cfg = NmConfig::new(2, 4, 8).unwrap();
        let d = crate::matrix::DenseMatrix::from_vec(4, 1, vec![5, 0, 0, -3]).unwrap();
        let mut buf = Vec::new();
        write_nmsp(&compress(&d, cfg).unwrap(), &mut buf).unwrap();
        assert_eq!(&buf[20..], &[0b1001, 5, 0xFD]);
    }

    #[test]
    fn round_trip_odd_widths() {
        for (seed, (n, m, q)) in [(2, 3, 4), (1, 5, 8), (3, 7, 32), (2, 4, 16)].into_iter().enumerate() {
            let c = sample(seed as u64, 13, 9, n, m, q);
            let mut buf = Vec::new();
            write_nmsp(&c, &mut buf).unwrap();
            assert_eq!(read_nmsp(&buf[..]).unwrap(), c);
        }
    }

    #[test]
    fn truncated_stream() {
        let c = sample(5, 16, 4, 2, 8, 16);
        let mut buf = Vec::new();
        write_nmsp(&c, &mut buf).unwrap();
        for cut in [3, 19, 21, buf.len() - 1] {
            assert!(matches!(read_nmsp(&buf[..cut]), Err(NmError::CorruptStream(_))), "cut {cut}");
        }
    }

    #[test]
    fn header_errors() {
        let c = sample(6, 8, 2, 1, 4, 8);
        let mut buf = Vec::new();
        write_nmsp(&c, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_nmsp(&bad[..]), Err(NmError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_nmsp(&bad[..]), Err(NmError::UnsupportedVersion(2))));
        let mut bad = buf.clone();
        bad.push(0);
        assert!(matches!(read_nmsp(&bad[..]), Err(NmError::CorruptStream(_))));
    }
}
