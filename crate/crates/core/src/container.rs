//! Shared binary framing for every file the toolkit writes.
//!
//! ```text
//! offset  size  field
//! 0       4     magic (ASCII)
//! 4       1     format version
//! 5       3     reserved, zero
//! 8       8     header length H (u64 LE)
//! 16      H     header, UTF-8 JSON
//! ...           zero padding up to a 64-byte boundary (data start)
//! ...           blobs, each starting 64-byte aligned relative to the file
//! ```
//!
//! Blob offsets in headers are relative to the data start. No padding follows
//! the last blob.

use crate::error::{Error, Result};

pub const ALIGN: usize = 64;
const PREAMBLE: usize = 16;

pub(crate) fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Offsets (relative to data start) for blobs of the given byte lengths.
pub(crate) fn blob_offsets(lengths: impl IntoIterator<Item = usize>) -> Vec<u64> {
    let mut off = 0usize;
    lengths
        .into_iter()
        .map(|len| {
            let at = off;
            off = align_up(off + len);
            at as u64
        })
        .collect()
}

pub(crate) fn data_start(header_len: usize) -> usize {
    align_up(PREAMBLE + header_len)
}

pub(crate) fn encode(magic: &[u8; 4], version: u8, header: &[u8], blobs: &[&[u8]]) -> Vec<u8> {
    let start = data_start(header.len());
    let offsets = blob_offsets(blobs.iter().map(|b| b.len()));
    let total = match (offsets.last(), blobs.last()) {
        (Some(&o), Some(b)) => start + o as usize + b.len(),
        _ => start,
    };
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(magic);
    out.push(version);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.resize(start, 0);
    for (b, &o) in blobs.iter().zip(&offsets) {
        out.resize(start + o as usize, 0);
        out.extend_from_slice(b);
    }
    out
}

/// Parsed view of a container: header bytes and the data section.
pub(crate) struct Framed<'a> {
    pub header: &'a [u8],
    pub data: &'a [u8],
}

impl<'a> Framed<'a> {
    /// Slices a blob out of the data section with bounds checking.
    pub fn blob(&self, what: &str, offset: u64, len: u64) -> Result<&'a [u8]> {
        let end = offset
            .checked_add(len)
            .ok_or_else(|| Error::Truncated(format!("{what}: offset overflow")))?;
        if end > self.data.len() as u64 {
            return Err(Error::Truncated(format!(
                "{what}: blob ends at {end}, data section has {} bytes",
                self.data.len()
            )));
        }
        Ok(&self.data[offset as usize..end as usize])
    }
}

pub(crate) fn decode<'a>(bytes: &'a [u8], magic: &[u8; 4], versions: &[u8]) -> Result<Framed<'a>> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found,
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated("preamble".into()));
    }
    let version = bytes[4];
    if !versions.contains(&version) {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::Truncated(format!(
                "header of {header_len} bytes exceeds file of {} bytes",
                bytes.len()
            ))
        })? as usize;
    let start = data_start(header_len as usize);
    let data = if start <= bytes.len() { &bytes[start..] } else { &[][..] };
    Ok(Framed {
        header: &bytes[PREAMBLE..header_end],
        data,
    })
}

pub(crate) fn f32s_to_le(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn le_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_roundtrip() {
        let blobs: [&[u8]; 3] = [&[1; 10], &[2; 64], &[3; 3]];
        let bytes = encode(b"TEST", 1, b"{}", &blobs);
        // 16 + 2 header -> data at 64; blobs at 0, 64, 128.
        assert_eq!(bytes.len(), 64 + 128 + 3);
        let f = decode(&bytes, b"TEST", &[1]).unwrap();
        assert_eq!(f.header, b"{}");
        assert_eq!(f.blob("a", 0, 10).unwrap(), &[1; 10]);
        assert_eq!(f.blob("b", 64, 64).unwrap(), &[2; 64]);
        assert_eq!(f.blob("c", 128, 3).unwrap(), &[3; 3]);
        assert!(matches!(f.blob("d", 128, 4), Err(Error::Truncated(_))));
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let mut bytes = encode(b"TEST", 1, b"{\"a\":1}", &[]);
        assert!(matches!(decode(&bytes, b"NOPE", &[1]), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode(&bytes, b"TEST", &[2]),
            Err(Error::UnsupportedVersion(1))
        ));
        bytes[8..16].copy_from_slice(&10_000u64.to_le_bytes());
        assert!(matches!(decode(&bytes, b"TEST", &[1]), Err(Error::Truncated(_))));
        assert!(matches!(decode(b"TES", b"TEST", &[1]), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn offsets_are_aligned() {
        assert_eq!(blob_offsets([1, 64, 65, 0, 7]), vec![0, 64, 128, 256, 256]);
    }
}
