use std::io::{Read, Write};
use std::path::Path;

use super::{file_err, DataError, Result};
use crate::label::{ConfidenceMap, CHANNELS};

pub const CMAP_MAGIC: &[u8; 4] = b"CMAP";
pub const CMAP_VERSION: u8 = 1;
/// magic (4) + version (1) + width, height, channels (3 x u32).
pub const CMAP_HEADER_LEN: usize = 17;

pub fn encode_cmap(cmap: &ConfidenceMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(CMAP_HEADER_LEN + cmap.values().len());
    out.extend_from_slice(CMAP_MAGIC);
    out.push(CMAP_VERSION);
    out.extend_from_slice(&(cmap.width() as u32).to_le_bytes());
    out.extend_from_slice(&(cmap.height() as u32).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    out.extend_from_slice(cmap.values());
    out
}

pub fn write_cmap<W: Write>(cmap: &ConfidenceMap, mut sink: W) -> Result<()> {
    sink.write_all(&encode_cmap(cmap))?;
    Ok(())
}

fn read_exact_or<R: Read>(src: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DataError::Truncated(what),
        _ => DataError::Io(e),
    })
}

/// Reads exactly one map from the stream; bytes after the payload are left unread.
pub fn read_cmap<R: Read>(mut source: R) -> Result<ConfidenceMap> {
    let mut header = [0u8; CMAP_HEADER_LEN];
    read_exact_or(&mut source, &mut header[..4], "header")?;
    if &header[..4] != CMAP_MAGIC {
        return Err(DataError::BadMagic { expected: "CMAP", found: header[..4].to_vec() });
    }
    read_exact_or(&mut source, &mut header[4..], "header")?;
    if header[4] != CMAP_VERSION {
        return Err(DataError::VersionMismatch(header[4]));
    }
    let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let (width, height, channels) = (field(5) as usize, field(9) as usize, field(13));
    if channels as usize != CHANNELS {
        return Err(DataError::ChannelCount(channels));
    }
    if width == 0 || height == 0 {
        return Err(DataError::BadDimensions(width, height));
    }
    let len = CHANNELS
        .checked_mul(width)
        .and_then(|n| n.checked_mul(height))
        .ok_or(DataError::BadDimensions(width, height))?;
    let mut payload = Vec::new();
    source.by_ref().take(len as u64).read_to_end(&mut payload)?;
    if payload.len() < len {
        return Err(DataError::Truncated("payload"));
    }
    if let Some(&bad) = payload.iter().find(|&&v| v > 100) {
        return Err(DataError::ValueOutOfRange(bad));
    }
    Ok(ConfidenceMap::from_values(width, height, payload)?)
}

/// Decodes a complete buffer, rejecting trailing bytes.
pub fn decode_cmap(bytes: &[u8]) -> Result<ConfidenceMap> {
    let mut cursor = bytes;
    let map = read_cmap(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(DataError::TrailingBytes(cursor.len()));
    }
    Ok(map)
}

pub fn save_cmap(cmap: &ConfidenceMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_cmap(cmap)).map_err(file_err(path))
}

pub fn load_cmap(path: &Path) -> Result<ConfidenceMap> {
    let bytes = std::fs::read(path).map_err(file_err(path))?;
    decode_cmap(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let map = ConfidenceMap::zeros(1, 1).unwrap();
        let bytes = encode_cmap(&map);
        assert_eq!(bytes.len(), 17 + 6);
        assert_eq!(&bytes[..5], b"CMAP\x01");
        assert_eq!(&bytes[5..17], &[1, 0, 0, 0, 1, 0, 0, 0, 6, 0, 0, 0]);
        assert_eq!(decode_cmap(&bytes).unwrap(), map);
    }

    #[test]
    fn distinct_errors() {
        let map = ConfidenceMap::zeros(2, 1).unwrap();
        let good = encode_cmap(&map);

        let mut bad = good.clone();
        bad[17] = 101;
        assert!(matches!(decode_cmap(&bad), Err(DataError::ValueOutOfRange(101))));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_cmap(&bad), Err(DataError::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_cmap(&bad), Err(DataError::VersionMismatch(2))));

        assert!(matches!(decode_cmap(&good[..good.len() - 1]), Err(DataError::Truncated("payload"))));
        assert!(matches!(decode_cmap(&good[..10]), Err(DataError::Truncated("header"))));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode_cmap(&bad), Err(DataError::TrailingBytes(1))));

        let mut bad = good;
        bad[13] = 3;
        assert!(matches!(decode_cmap(&bad), Err(DataError::ChannelCount(3))));
    }
}
