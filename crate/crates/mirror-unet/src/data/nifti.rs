//! Minimal NIfTI-1 reader/writer (gzip-compressed or raw).
//!
//! Covers the subset the pipeline needs: 3D volumes, little- or big-endian
//! input, the common scalar datatypes, spacing from `pixdim`, and origin
//! from the qform offsets. Files written here are always little-endian
//! float32 (images) or uint8 (masks) with an identity rotation, so a
//! save/load round trip reproduces values and spacing bit-exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Volume;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

fn read_file_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct FieldReader<'a> {
    bytes: &'a [u8],
    swap: bool,
}

impl<'a> FieldReader<'a> {
    fn i16_at(&self, off: usize) -> i16 {
        let mut b = [self.bytes[off], self.bytes[off + 1]];
        if self.swap {
            b.reverse();
        }
        i16::from_le_bytes(b)
    }

    fn f32_at(&self, off: usize) -> f32 {
        let mut b = [
            self.bytes[off],
            self.bytes[off + 1],
            self.bytes[off + 2],
            self.bytes[off + 3],
        ];
        if self.swap {
            b.reverse();
        }
        f32::from_le_bytes(b)
    }
}

/// Loads a 3D volume from a NIfTI-1 file (`.nii` or `.nii.gz`).
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_file_maybe_gz(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file has only {} bytes, need at least {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let sizeof_hdr = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let swap = match sizeof_hdr {
        348 => false,
        _ if sizeof_hdr.swap_bytes() == 348 => true,
        _ => {
            return Err(Error::MalformedHeader(format!(
                "sizeof_hdr is {sizeof_hdr}, expected 348"
            )))
        }
    };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let r = FieldReader {
        bytes: &bytes,
        swap,
    };

    let ndim = r.i16_at(40) as usize;
    // Trailing singleton dimensions are common in practice; accept them.
    let mut effective = ndim;
    while effective > 3 && r.i16_at(40 + 2 * effective).max(1) == 1 {
        effective -= 1;
    }
    if effective != 3 {
        return Err(Error::Non3dPayload(ndim));
    }
    let nx = r.i16_at(42) as usize;
    let ny = r.i16_at(44) as usize;
    let nz = r.i16_at(46) as usize;
    let datatype = r.i16_at(70);
    let spacing = (r.f32_at(80), r.f32_at(84), r.f32_at(88));
    let scl_slope = r.f32_at(112);
    let scl_inter = r.f32_at(116);
    let vox_offset = r.f32_at(108) as usize;
    let origin = (r.f32_at(268), r.f32_at(272), r.f32_at(276));

    let n = nx * ny * nz;
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::MalformedHeader(format!(
                "unsupported datatype code {other}"
            )))
        }
    };
    let start = vox_offset.max(HEADER_SIZE);
    if bytes.len() < start + n * elem {
        return Err(Error::MalformedHeader(format!(
            "payload truncated: need {} bytes at offset {start}, file has {}",
            n * elem,
            bytes.len()
        )));
    }
    let payload = &bytes[start..start + n * elem];

    let mut data = Vec::with_capacity(n);
    let take = |chunk: &[u8]| -> Vec<u8> {
        let mut v = chunk.to_vec();
        if swap {
            v.reverse();
        }
        v
    };
    match datatype {
        DT_UINT8 => data.extend(payload.iter().map(|&b| b as f32)),
        DT_INT16 => {
            for c in payload.chunks_exact(2) {
                let b = take(c);
                data.push(i16::from_le_bytes([b[0], b[1]]) as f32);
            }
        }
        DT_UINT16 => {
            for c in payload.chunks_exact(2) {
                let b = take(c);
                data.push(u16::from_le_bytes([b[0], b[1]]) as f32);
            }
        }
        DT_INT32 => {
            for c in payload.chunks_exact(4) {
                let b = take(c);
                data.push(i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f32);
            }
        }
        DT_FLOAT32 => {
            for c in payload.chunks_exact(4) {
                let b = take(c);
                data.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            }
        }
        DT_FLOAT64 => {
            for c in payload.chunks_exact(8) {
                let b = take(c);
                data.push(f64::from_le_bytes([
                    b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
                ]) as f32);
            }
        }
        _ => unreachable!(),
    }

    // Apply the intensity scaling only when it is a real rescale.
    if scl_slope != 0.0 && (scl_slope != 1.0 || scl_inter != 0.0) {
        for v in &mut data {
            *v = *v * scl_slope + scl_inter;
        }
    }

    Volume::from_data((nx, ny, nz), spacing, origin, data)
}

fn write_header(
    buf: &mut Vec<u8>,
    shape: (usize, usize, usize),
    spacing: (f32, f32, f32),
    origin: (f32, f32, f32),
    datatype: i16,
    bitpix: i16,
) {
    buf.resize(VOX_OFFSET, 0u8);
    let put_i32 = |b: &mut [u8], off: usize, v: i32| b[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let put_i16 = |b: &mut [u8], off: usize, v: i16| b[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |b: &mut [u8], off: usize, v: f32| b[off..off + 4].copy_from_slice(&v.to_le_bytes());

    put_i32(buf, 0, 348);
    // dim
    put_i16(buf, 40, 3);
    put_i16(buf, 42, shape.0 as i16);
    put_i16(buf, 44, shape.1 as i16);
    put_i16(buf, 46, shape.2 as i16);
    for i in 4..8 {
        put_i16(buf, 40 + 2 * i, 1);
    }
    put_i16(buf, 70, datatype);
    put_i16(buf, 72, bitpix);
    // pixdim: qfac then spacing
    put_f32(buf, 76, 1.0);
    put_f32(buf, 80, spacing.0);
    put_f32(buf, 84, spacing.1);
    put_f32(buf, 88, spacing.2);
    put_f32(buf, 108, VOX_OFFSET as f32);
    put_f32(buf, 112, 1.0); // scl_slope
    put_f32(buf, 116, 0.0); // scl_inter
    buf[123] = 2; // xyzt_units: millimeters
    put_i16(buf, 252, 1); // qform_code: scanner
    put_i16(buf, 254, 0); // sform_code: none
    // quatern b/c/d zero = identity rotation
    put_f32(buf, 268, origin.0);
    put_f32(buf, 272, origin.1);
    put_f32(buf, 276, origin.2);
    buf[344..348].copy_from_slice(b"n+1\0");
    // bytes 348..352 stay zero: no header extensions
}

fn write_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path)?;
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        let mut f = file;
        f.write_all(bytes)?;
    }
    Ok(())
}

/// Writes a float32 NIfTI-1 volume (gzip when the path ends in `.gz`).
pub fn save_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(VOX_OFFSET + vol.numel() * 4);
    write_header(
        &mut buf,
        vol.shape(),
        vol.spacing(),
        vol.origin(),
        DT_FLOAT32,
        32,
    );
    for &v in vol.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_gz(path.as_ref(), &buf)
}

/// Writes an integer label volume as uint8. Errors if any value is not an
/// integer in `0..=255`.
pub fn save_mask(mask: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(VOX_OFFSET + mask.numel());
    write_header(
        &mut buf,
        mask.shape(),
        mask.spacing(),
        mask.origin(),
        DT_UINT8,
        8,
    );
    for &v in mask.data() {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::NonIntegerMask);
        }
        buf.push(v as u8);
    }
    write_gz(path.as_ref(), &buf)
}
