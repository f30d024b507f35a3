//! Raw tensor container and PPM/PGM conversion.
//!
//! Raw layout, little-endian: u32 height, u32 width, u32 channels,
//! i32 scale exponent, then the int8 payload in (row, column, channel)
//! order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::qtensor::{QTensor, Shape3};

pub const RAW_HEADER_BYTES: usize = 16;

pub fn encode_raw(t: &QTensor) -> Vec<u8> {
    let mut b = Vec::with_capacity(RAW_HEADER_BYTES + t.data().len());
    for v in [t.height(), t.width(), t.channels()] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.extend_from_slice(&t.scale_exp().to_le_bytes());
    b.extend(t.data().iter().map(|&v| v as u8));
    b
}

pub fn decode_raw(bytes: &[u8]) -> Result<QTensor> {
    if bytes.len() < RAW_HEADER_BYTES {
        return Err(Error::Parse(format!("raw tensor of {} bytes has no header", bytes.len())));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[4 * i..4 * i + 4]).expect("4 bytes");
    let (h, w, c) = (
        u32::from_le_bytes(word(0)) as usize,
        u32::from_le_bytes(word(1)) as usize,
        u32::from_le_bytes(word(2)) as usize,
    );
    let scale = i32::from_le_bytes(word(3));
    let payload = &bytes[RAW_HEADER_BYTES..];
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(c));
    if n != Some(payload.len()) {
        return Err(Error::Parse(format!(
            "raw tensor {h}x{w}x{c} with {} payload bytes",
            payload.len()
        )));
    }
    QTensor::new(Shape3::new(h, w, c), scale, payload.iter().map(|&b| b as i8).collect())
}

pub fn read_raw(path: &Path) -> Result<QTensor> {
    decode_raw(&std::fs::read(path)?)
}

pub fn write_raw(path: &Path, t: &QTensor) -> Result<()> {
    std::fs::write(path, encode_raw(t))?;
    Ok(())
}

/// Scale exponent given to images: bytes 0..=255 map to [-1, 1).
pub const IMAGE_SCALE_EXP: i32 = -7;

fn header_fields(bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Parse("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((fields, i + 1))
}

/// Reads binary PPM (P6) or PGM (P5) with maxval 255; each byte `p`
/// becomes `p - 128`.
pub fn decode_pnm(bytes: &[u8]) -> Result<QTensor> {
    let (f, body) = header_fields(bytes)?;
    let c = match f[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(Error::Parse(format!("unsupported image magic {m:?}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PNM field {s:?}")));
    let (w, h, max) = (num(&f[1])?, num(&f[2])?, num(&f[3])?);
    if max != 255 {
        return Err(Error::Parse(format!("maxval {max} (only 255 supported)")));
    }
    let n = w * h * c;
    let data = bytes
        .get(body..body + n)
        .ok_or_else(|| Error::Parse(format!("image payload shorter than {n} bytes")))?;
    QTensor::new(
        Shape3::new(h, w, c),
        IMAGE_SCALE_EXP,
        data.iter().map(|&p| (p as i16 - 128) as i8).collect(),
    )
}

/// Writes 3-channel tensors as P6 and 1-channel tensors as P5.
pub fn encode_pnm(t: &QTensor) -> Result<Vec<u8>> {
    let magic = match t.channels() {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::InvalidArgument(format!("cannot write a {c}-channel image"))),
    };
    let mut b = format!("{magic}\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    b.extend(t.data().iter().map(|&v| (v as i16 + 128) as u8));
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip_and_header() {
        let t = QTensor::new(Shape3::new(1, 2, 3), -7, vec![-128, -1, 0, 1, 2, 127]).unwrap();
        let b = encode_raw(&t);
        assert_eq!(&b[..16], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 0xf9, 0xff, 0xff, 0xff]);
        assert_eq!(&b[16..], &[0x80, 0xff, 0, 1, 2, 0x7f]);
        assert_eq!(decode_raw(&b).unwrap(), t);
        assert!(decode_raw(&b[..20]).is_err());
        assert!(decode_raw(&b[..3]).is_err());
    }

    #[test]
    fn pnm_round_trip() {
        let t = QTensor::new(Shape3::new(2, 1, 3), -7, vec![-128, 0, 127, 5, 6, 7]).unwrap();
        let img = encode_pnm(&t).unwrap();
        assert!(img.starts_with(b"P6\n1 2\n255\n"));
        assert_eq!(decode_pnm(&img).unwrap(), t);
        let commented = b"P5\n# note\n2 1\n255\n\x00\xff";
        assert_eq!(decode_pnm(commented).unwrap().data(), &[-128, 127]);
        assert!(encode_pnm(&QTensor::zeros(Shape3::new(1, 1, 2), 0)).is_err());
    }
}
