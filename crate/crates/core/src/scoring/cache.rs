//! `FHSC` score cache.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "FHSC" | u32 version | u32 cell count
//! per cell:
//!   u8 kind (0 genuine, 1 impostor) | str category ("" = all pairs) | str scope
//!   u32 bins | u64 tail_capacity | u8 side (0 high, 1 low)
//!   u64 count | f64 min | f64 max
//!   u64 tail length | f64 x tail length
//!   u32 non-zero bins | (u32 bin, u64 count) x non-zero bins
//! str = u32 byte length + UTF-8 bytes
//! ```

use std::io::{self, Read, Write};

use super::{ScoreCell, ScoreSet, SetConfig, TailSide};
use crate::error::{Error, Result};
use crate::pairs::PairKind;

pub const CACHE_MAGIC: &[u8; 4] = b"FHSC";
pub const CACHE_VERSION: u32 = 1;

pub fn write_cells<W: Write>(w: &mut W, cells: &[ScoreCell]) -> io::Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(cells.len() as u32).to_le_bytes())?;
    for cell in cells {
        let set = &cell.set;
        let cfg = set.config();
        w.write_all(&[match cell.kind {
            PairKind::Genuine => 0,
            PairKind::Impostor => 1,
        }])?;
        let cat = cell.category.map(|c| c.to_string()).unwrap_or_default();
        write_str(w, &cat)?;
        write_str(w, &cell.scope)?;
        w.write_all(&(cfg.bins as u32).to_le_bytes())?;
        w.write_all(&(cfg.tail_capacity as u64).to_le_bytes())?;
        w.write_all(&[match cfg.side {
            TailSide::High => 0,
            TailSide::Low => 1,
        }])?;
        w.write_all(&set.count().to_le_bytes())?;
        w.write_all(&set.raw_min().to_le_bytes())?;
        w.write_all(&set.raw_max().to_le_bytes())?;
        w.write_all(&(set.tail().len() as u64).to_le_bytes())?;
        for s in set.tail() {
            w.write_all(&s.to_le_bytes())?;
        }
        let nonzero: Vec<(usize, u64)> = set
            .histogram()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .collect();
        w.write_all(&(nonzero.len() as u32).to_le_bytes())?;
        for (b, c) in nonzero {
            w.write_all(&(b as u32).to_le_bytes())?;
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

struct Input<R> {
    inner: R,
}

impl<R: Read> Input<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Cache("truncated file".into()))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 16 {
            return Err(Error::Cache(format!("string length {len} too large")));
        }
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Cache("truncated file".into()))?;
        String::from_utf8(buf).map_err(|_| Error::Cache("invalid UTF-8".into()))
    }
}

pub fn read_cells<R: Read>(r: R) -> Result<Vec<ScoreCell>> {
    let mut input = Input { inner: r };
    if &input.bytes::<4>()? != CACHE_MAGIC {
        return Err(Error::Cache("bad magic (expected FHSC)".into()));
    }
    let version = input.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let n = input.u32()?;
    let mut cells = Vec::with_capacity(n.min(1024) as usize);
    for _ in 0..n {
        let kind = match input.u8()? {
            0 => PairKind::Genuine,
            1 => PairKind::Impostor,
            k => return Err(Error::Cache(format!("bad pair kind {k}"))),
        };
        let cat = input.string()?;
        let category = if cat.is_empty() {
            None
        } else {
            Some(cat.parse()?)
        };
        let scope = input.string()?;
        let bins = input.u32()? as usize;
        if bins == 0 || bins > 1 << 26 {
            return Err(Error::Cache(format!("bad bin count {bins}")));
        }
        let tail_capacity = input.u64()? as usize;
        let side = match input.u8()? {
            0 => TailSide::High,
            1 => TailSide::Low,
            s => return Err(Error::Cache(format!("bad tail side {s}"))),
        };
        let count = input.u64()?;
        let min = input.f64()?;
        let max = input.f64()?;
        let tail_len = input.u64()?;
        if tail_len > count {
            return Err(Error::Cache("tail longer than count".into()));
        }
        let tail = (0..tail_len)
            .map(|_| input.f64())
            .collect::<Result<Vec<_>>>()?;
        let mut histogram = vec![0u64; bins];
        for _ in 0..input.u32()? {
            let b = input.u32()? as usize;
            let c = input.u64()?;
            *histogram
                .get_mut(b)
                .ok_or_else(|| Error::Cache(format!("bin {b} out of range")))? = c;
        }
        let config = SetConfig {
            bins,
            tail_capacity,
            side,
        };
        cells.push(ScoreCell {
            kind,
            category,
            scope,
            set: ScoreSet::from_parts(config, count, tail, histogram, min, max)?,
        });
    }
    Ok(cells)
}

/// Writes `bin_lower,count` rows, summing every `coarsen` adjacent bins.
pub fn write_histogram_csv<W: Write>(w: &mut W, set: &ScoreSet, coarsen: usize) -> Result<()> {
    let cfg = set.config();
    if coarsen == 0 || cfg.bins % coarsen != 0 {
        return Err(Error::InvalidConfig(format!(
            "coarsening factor {coarsen} must divide {} bins",
            cfg.bins
        )));
    }
    let io = |e| Error::Io {
        path: "<histogram>".into(),
        source: e,
    };
    writeln!(w, "bin_lower,count").map_err(io)?;
    for (i, chunk) in set.histogram().chunks(coarsen).enumerate() {
        let lower = cfg.bin_lower(i * coarsen);
        writeln!(w, "{lower:.6},{}", chunk.iter().sum::<u64>()).map_err(io)?;
    }
    Ok(())
}
