//! Bit-exact serialization of the two message kinds agents exchange:
//! 4-bit-quantized sparse utility maps (control channel) and FP8 sparse
//! feature payloads (data channel).
//!
//! All multi-byte fields are little-endian. The byte layouts are normative
//! and documented in `WIRE.md` at the repository root. Byte costs reported
//! by [`payload_cost`] and [`utility_overhead`] always equal the encoded
//! lengths.

use thiserror::Error;

use crate::error::{Error, Result};
use crate::fp8::{fp8_decode, fp8_encode};
use crate::grid::{GridSpec, MetaUtilityMap, SparseFeatureMap};

pub const MAGIC: [u8; 4] = *b"JGSW";
pub const VERSION: u8 = 1;
/// Fixed header length in bytes.
pub const HEADER_LEN: usize = 22;
/// Extra fixed bytes in a utility body (scale + offset floats).
pub const UTILITY_FIXED_LEN: usize = 8;

/// Message kind discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgType {
    UtilityMap = 0,
    FeaturePayload = 1,
}

/// Wire-format decoding failure. Every variant carries enough context to
/// name the offending field or byte position.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated message: missing {field} at byte {offset}")]
    Truncated { field: &'static str, offset: usize },
    #[error("bad magic {found:02x?} at byte 0 (expected {MAGIC:02x?})")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} at byte 4 (expected {VERSION})")]
    BadVersion { found: u8 },
    #[error("unknown message type {found} at byte 5")]
    BadMsgType { found: u8 },
    #[error("header declares empty grid dimensions h={h}, w={w}, c={c}")]
    BadDims { h: u16, w: u16, c: u16 },
    #[error("entry count {count} exceeds grid cell count {cells}")]
    EntryCountTooLarge { count: u32, cells: u32 },
    #[error("cell indices not strictly increasing at entry {entry} (byte {offset})")]
    IndexOrder { entry: usize, offset: usize },
    #[error("cell index {index} outside grid of {cells} cells at entry {entry}")]
    IndexRange { index: u32, cells: u32, entry: usize },
    #[error("utility code 0 is reserved for absent cells at entry {entry}")]
    ReservedCode { entry: usize },
    #[error("non-finite {field} field")]
    NonFinite { field: &'static str },
    #[error("{extra} trailing bytes after message body")]
    TrailingBytes { extra: usize },
    #[error("message grid {got} does not match expected {expected}")]
    GridMismatch { expected: String, got: String },
}

/// Fixed 22-byte message header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageHeader {
    pub msg_type: MsgType,
    pub agent_id: u16,
    pub frame_id: u32,
    pub h: u16,
    pub w: u16,
    pub c: u16,
    pub entry_count: u32,
}

impl MessageHeader {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.agent_id.to_le_bytes());
        out.extend_from_slice(&self.frame_id.to_le_bytes());
        out.extend_from_slice(&self.h.to_le_bytes());
        out.extend_from_slice(&self.w.to_le_bytes());
        out.extend_from_slice(&self.c.to_le_bytes());
        out.extend_from_slice(&self.entry_count.to_le_bytes());
    }

    pub fn num_cells(&self) -> u32 {
        self.h as u32 * self.w as u32
    }
}

/// 4-bit-quantized utility map body: per-map affine quantizer with the
/// scale and offset transmitted, codes 1..=15 (0 reserved for absent).
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityPayload {
    pub scale: f32,
    pub offset: f32,
    /// `(cell index, code)` with strictly increasing indices.
    pub entries: Vec<(u32, u8)>,
}

impl UtilityPayload {
    /// Reconstruct the utility map this payload describes.
    pub fn dequantize(&self, grid: GridSpec, agent_id: u16) -> Result<MetaUtilityMap> {
        let mut map = MetaUtilityMap::new(grid, agent_id);
        for &(l, code) in &self.entries {
            let value = self.offset as f64 + code as f64 * self.scale as f64;
            map.insert(l, value)?;
        }
        Ok(map)
    }
}

/// A decoded message of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Utility {
        header: MessageHeader,
        payload: UtilityPayload,
    },
    Features {
        header: MessageHeader,
        /// `(cell index, decoded feature vector)` with strictly increasing
        /// indices; values are exact FP8 decodes.
        entries: Vec<(u32, Vec<f64>)>,
    },
}

impl Message {
    pub fn header(&self) -> &MessageHeader {
        match self {
            Message::Utility { header, .. } => header,
            Message::Features { header, .. } => header,
        }
    }
}

/// Quantize a utility map for the control channel: cells below `tau` are
/// dropped, survivors map to codes 1..=15 under a per-map affine quantizer
/// with offset `tau`.
pub fn quantize_utility(map: &MetaUtilityMap, tau: f64) -> Result<UtilityPayload> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::invalid(format!(
            "utility threshold must be non-negative (got {tau})"
        )));
    }
    let survivors: Vec<(u32, f64)> = map.iter().filter(|&(_, u)| u >= tau).collect();
    let offset = tau as f32;
    let u_max = survivors.iter().fold(f64::NEG_INFINITY, |m, &(_, u)| m.max(u));
    let raw_scale = ((u_max - tau) / 15.0) as f32;
    // All survivors equal to tau (or none): fall back to unit scale.
    let scale = if survivors.is_empty() || raw_scale.is_nan() || raw_scale <= 0.0 {
        1.0f32
    } else {
        raw_scale
    };
    let entries = survivors
        .into_iter()
        .map(|(l, u)| {
            let code = ((u - offset as f64) / scale as f64).round().clamp(1.0, 15.0) as u8;
            (l, code)
        })
        .collect();
    Ok(UtilityPayload {
        scale,
        offset,
        entries,
    })
}

/// Encode a utility map into a complete control-channel message.
pub fn encode_utility(map: &MetaUtilityMap, tau: f64, frame_id: u32) -> Result<Vec<u8>> {
    let payload = quantize_utility(map, tau)?;
    let header = MessageHeader {
        msg_type: MsgType::UtilityMap,
        agent_id: map.agent_id,
        frame_id,
        h: map.grid.h,
        w: map.grid.w,
        c: map.grid.c,
        entry_count: payload.entries.len() as u32,
    };
    let mut out = Vec::with_capacity(utility_overhead(payload.entries.len()) as usize);
    header.write(&mut out);
    out.extend_from_slice(&payload.scale.to_le_bytes());
    out.extend_from_slice(&payload.offset.to_le_bytes());
    for &(l, _) in &payload.entries {
        out.extend_from_slice(&l.to_le_bytes());
    }
    // Codes packed two per byte, low nibble first, zero padded.
    let mut pending: Option<u8> = None;
    for &(_, code) in &payload.entries {
        match pending.take() {
            None => pending = Some(code),
            Some(low) => out.push(low | (code << 4)),
        }
    }
    if let Some(low) = pending {
        out.push(low);
    }
    Ok(out)
}

/// Encode the masked cells of a feature map into a data-channel message.
///
/// `cells` must be a subset of the map's stored cells.
pub fn encode_features<I>(map: &SparseFeatureMap, cells: I, frame_id: u32) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = u32>,
{
    let selected: Vec<u32> = cells.into_iter().collect();
    for window in selected.windows(2) {
        if window[1] <= window[0] {
            return Err(Error::invalid(format!(
                "mask cells must be strictly increasing (saw {} after {})",
                window[1], window[0]
            )));
        }
    }
    for &l in &selected {
        if !map.contains(l) {
            return Err(Error::invalid(format!(
                "mask cell {l} is not stored in agent {}'s feature map",
                map.agent_id
            )));
        }
    }
    let header = MessageHeader {
        msg_type: MsgType::FeaturePayload,
        agent_id: map.agent_id,
        frame_id,
        h: map.grid.h,
        w: map.grid.w,
        c: map.grid.c,
        entry_count: selected.len() as u32,
    };
    let mut out = Vec::with_capacity(payload_cost(selected.len(), map.grid.channels()) as usize);
    header.write(&mut out);
    for &l in &selected {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &l in &selected {
        for &v in map.get(l).expect("checked above") {
            out.push(fp8_encode(v));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> std::result::Result<&'a [u8], DecodeError> {
        if self.pos + n > self.bytes.len() {
            return Err(DecodeError::Truncated {
                field,
                offset: self.pos,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> std::result::Result<u8, DecodeError> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> std::result::Result<u16, DecodeError> {
        let s = self.take(2, field)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self, field: &'static str) -> std::result::Result<u32, DecodeError> {
        let s = self.take(4, field)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn f32(&mut self, field: &'static str) -> std::result::Result<f32, DecodeError> {
        let s = self.take(4, field)?;
        Ok(f32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

fn parse_header(r: &mut Reader) -> std::result::Result<MessageHeader, DecodeError> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(DecodeError::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(DecodeError::BadVersion { found: version });
    }
    let msg_type = match r.u8("msg_type")? {
        0 => MsgType::UtilityMap,
        1 => MsgType::FeaturePayload,
        other => return Err(DecodeError::BadMsgType { found: other }),
    };
    let agent_id = r.u16("agent_id")?;
    let frame_id = r.u32("frame_id")?;
    let h = r.u16("h")?;
    let w = r.u16("w")?;
    let c = r.u16("c")?;
    let entry_count = r.u32("entry_count")?;
    let header = MessageHeader {
        msg_type,
        agent_id,
        frame_id,
        h,
        w,
        c,
        entry_count,
    };
    if h == 0 || w == 0 || c == 0 {
        return Err(DecodeError::BadDims { h, w, c });
    }
    if entry_count > header.num_cells() {
        return Err(DecodeError::EntryCountTooLarge {
            count: entry_count,
            cells: header.num_cells(),
        });
    }
    Ok(header)
}

fn parse_indices(
    r: &mut Reader,
    header: &MessageHeader,
) -> std::result::Result<Vec<u32>, DecodeError> {
    let n = header.entry_count as usize;
    let mut indices = Vec::with_capacity(n);
    let mut prev: Option<u32> = None;
    for entry in 0..n {
        let offset = r.pos;
        let l = r.u32("cell index")?;
        if l >= header.num_cells() {
            return Err(DecodeError::IndexRange {
                index: l,
                cells: header.num_cells(),
                entry,
            });
        }
        if let Some(p) = prev {
            if l <= p {
                return Err(DecodeError::IndexOrder { entry, offset });
            }
        }
        prev = Some(l);
        indices.push(l);
    }
    Ok(indices)
}

/// Decode any message. Total on arbitrary input: never panics, returns a
/// structured error instead.
pub fn decode_message(bytes: &[u8]) -> std::result::Result<Message, DecodeError> {
    let mut r = Reader { bytes, pos: 0 };
    let header = parse_header(&mut r)?;
    let n = header.entry_count as usize;
    // Check the exact body length up front so a hostile header cannot
    // drive a huge allocation before the reads fail.
    let body = (bytes.len() - HEADER_LEN) as u64;
    let required = match header.msg_type {
        MsgType::UtilityMap => utility_overhead(n) - HEADER_LEN as u64,
        MsgType::FeaturePayload => payload_cost(n, header.c as usize) - HEADER_LEN as u64,
    };
    if body < required {
        return Err(DecodeError::Truncated {
            field: "message body",
            offset: bytes.len(),
        });
    }
    if body > required {
        return Err(DecodeError::TrailingBytes {
            extra: (body - required) as usize,
        });
    }
    let message = match header.msg_type {
        MsgType::UtilityMap => {
            let scale = r.f32("scale")?;
            let offset = r.f32("offset")?;
            if !scale.is_finite() {
                return Err(DecodeError::NonFinite { field: "scale" });
            }
            if !offset.is_finite() {
                return Err(DecodeError::NonFinite { field: "offset" });
            }
            let indices = parse_indices(&mut r, &header)?;
            let packed = r.take(n.div_ceil(2), "utility codes")?;
            let mut entries = Vec::with_capacity(n);
            for (entry, &l) in indices.iter().enumerate() {
                let byte = packed[entry / 2];
                let code = if entry % 2 == 0 { byte & 0x0F } else { byte >> 4 };
                if code == 0 {
                    return Err(DecodeError::ReservedCode { entry });
                }
                entries.push((l, code));
            }
            // Padding nibble of an odd-count message must be zero so that
            // re-encoding is byte-identical.
            if n % 2 == 1 && packed[n / 2] >> 4 != 0 {
                return Err(DecodeError::ReservedCode { entry: n });
            }
            Message::Utility {
                header,
                payload: UtilityPayload {
                    scale,
                    offset,
                    entries,
                },
            }
        }
        MsgType::FeaturePayload => {
            let indices = parse_indices(&mut r, &header)?;
            let c = header.c as usize;
            let mut entries = Vec::with_capacity(n);
            for &l in &indices {
                let raw = r.take(c, "feature scalars")?;
                let mut v = Vec::with_capacity(c);
                for &b in raw {
                    let value = fp8_decode(b);
                    if value.is_nan() {
                        return Err(DecodeError::NonFinite { field: "feature scalar" });
                    }
                    v.push(value);
                }
                entries.push((l, v));
            }
            Message::Features { header, entries }
        }
    };
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes {
            extra: bytes.len() - r.pos,
        });
    }
    Ok(message)
}

fn check_grid(header: &MessageHeader, grid: &GridSpec) -> std::result::Result<(), DecodeError> {
    if header.h != grid.h || header.w != grid.w || header.c != grid.c {
        return Err(DecodeError::GridMismatch {
            expected: format!("{}x{}x{}", grid.h, grid.w, grid.c),
            got: format!("{}x{}x{}", header.h, header.w, header.c),
        });
    }
    Ok(())
}

/// Decode a feature message against a known grid.
pub fn decode_features(bytes: &[u8], grid: &GridSpec) -> Result<(MessageHeader, SparseFeatureMap)> {
    match decode_message(bytes)? {
        Message::Features { header, entries } => {
            check_grid(&header, grid)?;
            let mut map = SparseFeatureMap::new(*grid, header.agent_id);
            for (l, v) in entries {
                map.insert(l, v)?;
            }
            Ok((header, map))
        }
        Message::Utility { .. } => Err(Error::invalid(
            "expected a feature payload, found a utility map message",
        )),
    }
}

/// Decode and dequantize a utility message against a known grid.
pub fn decode_utility(bytes: &[u8], grid: &GridSpec) -> Result<(MessageHeader, MetaUtilityMap)> {
    match decode_message(bytes)? {
        Message::Utility { header, payload } => {
            check_grid(&header, grid)?;
            let map = payload.dequantize(*grid, header.agent_id)?;
            Ok((header, map))
        }
        Message::Features { .. } => Err(Error::invalid(
            "expected a utility map message, found a feature payload",
        )),
    }
}

/// Exact byte length of a feature message with `entry_count` cells of `c`
/// channels: 22-byte header plus `entry_count * (4 + c)`.
pub fn payload_cost(entry_count: usize, c: usize) -> u64 {
    HEADER_LEN as u64 + entry_count as u64 * (4 + c as u64)
}

/// Exact byte length of a utility message with `entry_count` cells:
/// 22-byte header, 8 bytes of scale/offset, 4 bytes per index, and two
/// 4-bit codes per byte (rounded up).
pub fn utility_overhead(entry_count: usize) -> u64 {
    HEADER_LEN as u64 + UTILITY_FIXED_LEN as u64 + entry_count as u64 * 4 + entry_count.div_ceil(2) as u64
}

/// Per-cell data-channel cost used by the scheduler: a 4-byte index plus
/// one FP8 byte per channel.
pub fn entry_cost(c: usize) -> u64 {
    4 + c as u64
}
