//! Binary dataset of angle-delay sequences.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "ADTD"
//! version      u16      1
//! T, N, M, H, W  u32 each
//! fc           f64      Hz
//! dt           f64      s
//! n_sequences  u64
//! then per sequence:
//!   velocity   2 × f64  m/s
//!   frames     T·H·W × (re f32, im f32), row-major (t, h, w)
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::adt::{AdSequence, SequenceMeta};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::C64;

pub const MAGIC: [u8; 4] = *b"ADTD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 4 + 2 + 5 * 4 + 8 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetHeader {
    pub t: u32,
    pub n: u32,
    pub m: u32,
    pub h: u32,
    pub w: u32,
    pub fc: f64,
    pub dt: f64,
    pub n_sequences: u64,
}

impl DatasetHeader {
    pub fn record_len(&self) -> u64 {
        16 + self.t as u64 * self.h as u64 * self.w as u64 * 8
    }

    pub fn payload_len(&self) -> u64 {
        self.n_sequences * self.record_len()
    }

    fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(&MAGIC)?;
        out.write_u16::<LittleEndian>(VERSION)?;
        for d in [self.t, self.n, self.m, self.h, self.w] {
            out.write_u32::<LittleEndian>(d)?;
        }
        out.write_f64::<LittleEndian>(self.fc)?;
        out.write_f64::<LittleEndian>(self.dt)?;
        out.write_u64::<LittleEndian>(self.n_sequences)
    }

    fn read_from(inp: &mut impl Read) -> Result<Self> {
        let short = |_| Error::PayloadLengthMismatch {
            expected: HEADER_LEN,
            actual: 0,
        };
        let mut magic = [0u8; 4];
        inp.read_exact(&mut magic).map_err(short)?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = inp.read_u16::<LittleEndian>().map_err(short)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut d = [0u32; 5];
        for x in &mut d {
            *x = inp.read_u32::<LittleEndian>().map_err(short)?;
        }
        Ok(DatasetHeader {
            t: d[0],
            n: d[1],
            m: d[2],
            h: d[3],
            w: d[4],
            fc: inp.read_f64::<LittleEndian>().map_err(short)?,
            dt: inp.read_f64::<LittleEndian>().map_err(short)?,
            n_sequences: inp.read_u64::<LittleEndian>().map_err(short)?,
        })
    }
}

/// Streaming writer; the sequence count is fixed up front.
pub struct DatasetWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: DatasetHeader,
    written: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<Self> {
        super::ensure_parent(path)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        header.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(DatasetWriter {
            path: path.to_path_buf(),
            out,
            header,
            written: 0,
        })
    }

    pub fn push(&mut self, velocity: [f64; 2], frames: &[Frame]) -> Result<()> {
        let h = &self.header;
        if frames.len() != h.t as usize
            || frames
                .iter()
                .any(|f| f.rows != h.h as usize || f.cols != h.w as usize)
        {
            return Err(Error::shape(format!(
                "sequence does not match header T={} H={} W={}",
                h.t, h.h, h.w
            )));
        }
        if self.written == h.n_sequences {
            return Err(Error::invalid("more sequences than declared in header"));
        }
        let path = &self.path;
        let io = |e| Error::io(path, e);
        self.out.write_f64::<LittleEndian>(velocity[0]).map_err(io)?;
        self.out.write_f64::<LittleEndian>(velocity[1]).map_err(io)?;
        for f in frames {
            for z in &f.data {
                self.out.write_f32::<LittleEndian>(z.re as f32).map_err(io)?;
                self.out.write_f32::<LittleEndian>(z.im as f32).map_err(io)?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n_sequences {
            return Err(Error::invalid(format!(
                "wrote {} of {} declared sequences",
                self.written, self.header.n_sequences
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub sequences: Vec<AdSequence>,
}

pub fn write_dataset(path: &Path, header: DatasetHeader, sequences: &[AdSequence]) -> Result<()> {
    let header = DatasetHeader {
        n_sequences: sequences.len() as u64,
        ..header
    };
    let mut w = DatasetWriter::create(path, header)?;
    for s in sequences {
        w.push(s.meta.velocity, &s.frames)?;
    }
    w.finish()
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes)
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(Error::PayloadLengthMismatch {
            expected: HEADER_LEN,
            actual: bytes.len() as u64,
        });
    }
    let mut cur = bytes;
    let header = DatasetHeader::read_from(&mut cur)?;
    let actual = bytes.len() as u64 - HEADER_LEN;
    let expected = header.payload_len();
    if actual != expected {
        return Err(Error::PayloadLengthMismatch { expected, actual });
    }
    let (t, h, w) = (header.t as usize, header.h as usize, header.w as usize);
    let mut sequences = Vec::with_capacity(header.n_sequences as usize);
    // lengths were validated above, reads cannot fail
    for _ in 0..header.n_sequences {
        let vx = cur.read_f64::<LittleEndian>().unwrap();
        let vy = cur.read_f64::<LittleEndian>().unwrap();
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let mut data = Vec::with_capacity(h * w);
            for _ in 0..h * w {
                let re = cur.read_f32::<LittleEndian>().unwrap();
                let im = cur.read_f32::<LittleEndian>().unwrap();
                data.push(C64::new(re as f64, im as f64));
            }
            frames.push(Frame { rows: h, cols: w, data });
        }
        sequences.push(AdSequence::new(
            frames,
            SequenceMeta {
                dt: header.dt,
                fc: header.fc,
                velocity: [vx, vy],
                city_tag: String::new(),
            },
        ));
    }
    Ok(Dataset { header, sequences })
}
