//! Binary file formats. All integers and floats are little-endian.
//!
//! `.fmap` (feature map):
//!
//! ```text
//! "PCAF" | u16 version = 1 | u32 height | u32 width | u32 channels
//! | height·width·channels × f32, row-major (y, x, channel)
//! ```
//!
//! `.pcap` (prototype set):
//!
//! ```text
//! "PCAP" | u16 version = 1 | u32 N | u32 D | u32 C_v | f64 sigma2
//! | N·D × f32 key means | N·C_v × f32 value prototypes
//! ```
//!
//! `.pcab` (memory bank snapshot): `"PCAB" | u16 version | u32 capacity |
//! u32 count | count × u64 frame index | count × PCAP block`.
//!
//! `.pcat` (instance track): `"PCAT" | u16 version | u64 track_id | f64
//! momentum | u64 last_seen | PCAP block (foreground) | PCAP block
//! (background)`.
//!
//! Masks are binary PGM (`P5`, maxval 255); a pixel is foreground when its
//! value is at least half of maxval, rounded up (128 for maxval 255).
//!
//! Feature values are stored as `f32`; maps whose entries are already
//! `f32`-representable round-trip bit-exactly.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, Matrix};
use crate::gmm::PrototypeSet;
use crate::instance::{InstanceTrack, MaskMap};
use crate::pcam::MemoryBank;

pub const FMAP_MAGIC: [u8; 4] = *b"PCAF";
pub const PCAP_MAGIC: [u8; 4] = *b"PCAP";
pub const BANK_MAGIC: [u8; 4] = *b"PCAB";
pub const TRACK_MAGIC: [u8; 4] = *b"PCAT";
pub const FORMAT_VERSION: u16 = 1;

/// Upper bound on a single payload, in elements.
const MAX_ELEMENTS: u64 = 1 << 32;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated(what),
        _ => Error::Io(e),
    })
}

fn read_u16<R: Read>(r: &mut R, what: &'static str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, what: &'static str) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, what)?))
}

fn read_header<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    read_exact(r, &mut found, "magic")?;
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let version = read_u16(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, magic: [u8; 4]) -> Result<()> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    Ok(())
}

fn element_count(dims: &[u32], what: &'static str) -> Result<usize> {
    let n = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or(Error::DimensionOverflow(what))?;
    if n > MAX_ELEMENTS {
        return Err(Error::DimensionOverflow(what));
    }
    usize::try_from(n).map_err(|_| Error::DimensionOverflow(what))
}

fn read_f32s<R: Read>(r: &mut R, count: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    read_exact(r, &mut buf, what)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for &x in xs {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn dim_u32(v: usize, what: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimensionOverflow(what))
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Malformed("trailing bytes after payload".into())),
    }
}

pub fn encode_fmap<W: Write>(w: &mut W, map: &FeatureMap) -> Result<()> {
    write_header(w, FMAP_MAGIC)?;
    for v in [map.height(), map.width(), map.channels()] {
        w.write_all(&dim_u32(v, "fmap header")?.to_le_bytes())?;
    }
    write_f32s(w, map.data())
}

pub fn decode_fmap<R: Read>(r: &mut R) -> Result<FeatureMap> {
    read_header(r, FMAP_MAGIC)?;
    let h = read_u32(r, "fmap header")?;
    let w = read_u32(r, "fmap header")?;
    let c = read_u32(r, "fmap header")?;
    let count = element_count(&[h, w, c], "fmap header")?;
    let data = read_f32s(r, count, "fmap payload")?;
    expect_eof(r)?;
    FeatureMap::new(h as usize, w as usize, c as usize, data)
}

pub fn write_fmap(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_fmap(&mut w, map)?;
    w.flush()?;
    Ok(())
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_fmap(&mut BufReader::new(File::open(path)?))
}

pub fn encode_protos<W: Write>(w: &mut W, protos: &PrototypeSet) -> Result<()> {
    write_header(w, PCAP_MAGIC)?;
    for v in [protos.n_protos(), protos.key_dim(), protos.value_dim()] {
        w.write_all(&dim_u32(v, "pcap header")?.to_le_bytes())?;
    }
    w.write_all(&protos.sigma2().to_bits().to_le_bytes())?;
    write_f32s(w, protos.key_means().as_slice())?;
    write_f32s(w, protos.value_protos().as_slice())
}

/// Reads one PCAP block without checking for end of input.
pub fn decode_protos_block<R: Read>(r: &mut R) -> Result<PrototypeSet> {
    read_header(r, PCAP_MAGIC)?;
    let n = read_u32(r, "pcap header")?;
    let d = read_u32(r, "pcap header")?;
    let cv = read_u32(r, "pcap header")?;
    let sigma2 = read_f64(r, "pcap header")?;
    let keys = read_f32s(r, element_count(&[n, d], "pcap header")?, "pcap key means")?;
    let vals = read_f32s(r, element_count(&[n, cv], "pcap header")?, "pcap value prototypes")?;
    PrototypeSet::new(
        Matrix::new(n as usize, d as usize, keys)?,
        Matrix::new(n as usize, cv as usize, vals)?,
        sigma2,
    )
}

pub fn write_protos(path: impl AsRef<Path>, protos: &PrototypeSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_protos(&mut w, protos)?;
    w.flush()?;
    Ok(())
}

pub fn read_protos(path: impl AsRef<Path>) -> Result<PrototypeSet> {
    let mut r = BufReader::new(File::open(path)?);
    let p = decode_protos_block(&mut r)?;
    expect_eof(&mut r)?;
    Ok(p)
}

pub fn encode_bank<W: Write>(w: &mut W, bank: &MemoryBank) -> Result<()> {
    write_header(w, BANK_MAGIC)?;
    w.write_all(&dim_u32(bank.capacity(), "bank header")?.to_le_bytes())?;
    w.write_all(&dim_u32(bank.len(), "bank header")?.to_le_bytes())?;
    for f in bank.frames() {
        w.write_all(&f.index.to_le_bytes())?;
    }
    for f in bank.frames() {
        encode_protos(w, &f.protos)?;
    }
    Ok(())
}

pub fn decode_bank<R: Read>(r: &mut R) -> Result<MemoryBank> {
    read_header(r, BANK_MAGIC)?;
    let capacity = read_u32(r, "bank header")? as usize;
    let count = read_u32(r, "bank header")? as usize;
    if count > capacity {
        return Err(Error::Malformed(format!("bank holds {count} frames but capacity is {capacity}")));
    }
    let indices = (0..count)
        .map(|_| read_u64(r, "bank frame table"))
        .collect::<Result<Vec<_>>>()?;
    let mut bank = MemoryBank::new(capacity)?;
    for idx in indices {
        bank.push_frame(decode_protos_block(r)?, idx)?;
    }
    expect_eof(r)?;
    Ok(bank)
}

pub fn write_bank(path: impl AsRef<Path>, bank: &MemoryBank) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_bank(&mut w, bank)?;
    w.flush()?;
    Ok(())
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<MemoryBank> {
    decode_bank(&mut BufReader::new(File::open(path)?))
}

pub fn encode_track<W: Write>(w: &mut W, track: &InstanceTrack) -> Result<()> {
    write_header(w, TRACK_MAGIC)?;
    w.write_all(&track.track_id.to_le_bytes())?;
    w.write_all(&track.momentum().to_bits().to_le_bytes())?;
    w.write_all(&track.last_seen.to_le_bytes())?;
    encode_protos(w, &track.fg_protos)?;
    encode_protos(w, &track.bg_protos)
}

pub fn decode_track<R: Read>(r: &mut R) -> Result<InstanceTrack> {
    read_header(r, TRACK_MAGIC)?;
    let track_id = read_u64(r, "track header")?;
    let momentum = read_f64(r, "track header")?;
    let last_seen = read_u64(r, "track header")?;
    let fg = decode_protos_block(r)?;
    let bg = decode_protos_block(r)?;
    expect_eof(r)?;
    InstanceTrack::new(track_id, fg, bg, momentum, last_seen)
}

pub fn write_track(path: impl AsRef<Path>, track: &InstanceTrack) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_track(&mut w, track)?;
    w.flush()?;
    Ok(())
}

pub fn read_track(path: impl AsRef<Path>) -> Result<InstanceTrack> {
    decode_track(&mut BufReader::new(File::open(path)?))
}

pub fn encode_pgm<W: Write>(w: &mut W, mask: &MaskMap) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let bytes: Vec<u8> = mask.values().iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Parses a binary PGM into a mask.
pub fn decode_pgm<R: Read>(r: &mut R) -> Result<MaskMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("pgm header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        let mut found = [0u8; 4];
        for (d, s) in found.iter_mut().zip(fields[0].bytes()) {
            *d = s;
        }
        return Err(Error::BadMagic { expected: *b"P5\0\0", found });
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Malformed(format!("bad pgm header field '{s}'")));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Malformed(format!("unsupported pgm maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let count = width.checked_mul(height).ok_or(Error::DimensionOverflow("pgm header"))?;
    if bytes.len() < pos + count {
        return Err(Error::Truncated("pgm raster"));
    }
    let threshold = maxval.div_ceil(2);
    let values = bytes[pos..pos + count].iter().map(|&b| b as usize >= threshold).collect();
    MaskMap::new(height, width, values)
}

pub fn write_pgm(path: impl AsRef<Path>, mask: &MaskMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_pgm(&mut w, mask)?;
    w.flush()?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<MaskMap> {
    decode_pgm(&mut BufReader::new(File::open(path)?))
}
