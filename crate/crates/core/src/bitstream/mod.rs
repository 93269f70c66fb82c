//! The `.gtc` container: fixed little-endian header plus an MSB-first
//! payload of per-channel codeword runs, each closed by a terminator.
//!
//! Every channel is scanned from the bottom row upwards, each row left to
//! right. Symbols are emitted up to and including the last nonzero one, then
//! the terminator; positions after it decode as zero.

pub mod bits;
pub mod huffman;

use thiserror::Error;

use crate::pipeline::symbols::{check_depth, MaskedCodeTensor, SymbolGrid};

pub use bits::{BitReader, BitWriter};
pub use huffman::{build_table, huffman_lengths, CodeTable, Codeword, TableMode};

pub const MAGIC: &[u8; 4] = b"GTIC";
pub const VERSION: u8 = 1;
/// Size of the fixed header part in bytes.
pub const HEADER_LEN: usize = 29;
/// Upper bound on decoded symbols, guarding allocations on hostile headers.
pub const MAX_SYMBOLS: usize = 1 << 28;

const FLAG_ADAPTIVE: u8 = 1;
const FLAG_RAW: u8 = 1 << 1;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("bad magic: expected \"GTIC\", found {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported stream version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u8, expected: u8 },
    #[error("header truncated: need {needed} bytes, have {have}")]
    HeaderTruncated { needed: usize, have: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid code table: {0}")]
    InvalidTable(String),
    #[error("cannot build a code table from an empty histogram")]
    EmptyHistogram,
    #[error("symbol {symbol} at channel {channel} is outside the table alphabet of {alphabet}")]
    SymbolOutOfAlphabet {
        symbol: usize,
        channel: usize,
        alphabet: usize,
    },
    #[error("payload truncated in channel {channel} after {bits} bits")]
    Truncated { channel: usize, bits: u64 },
    #[error("no codeword matches the bits at offset {bit_offset} (channel {channel})")]
    InvalidCodeword { channel: usize, bit_offset: u64 },
    #[error("channel {channel} carries more than its {capacity} symbols")]
    ChannelOverflow { channel: usize, capacity: usize },
    #[error("channel {channel} has a zero symbol directly before its terminator")]
    NonCanonical { channel: usize },
    #[error("{bits} unexpected bits after the last channel")]
    TrailingData { bits: u64 },
}

/// How the payload symbols are written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coding {
    Huffman(CodeTable),
    /// Every symbol at a fixed `L` bits, no terminators.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u8,
    pub original_height: u32,
    pub original_width: u32,
    pub padded_height: u32,
    pub padded_width: u32,
    pub channels: u16,
    pub depth: u8,
    pub shift: f32,
    pub coding: Coding,
}

impl Header {
    pub fn code_dims(&self) -> (usize, usize, usize) {
        (
            self.padded_height as usize / 8,
            self.padded_width as usize / 8,
            self.channels as usize,
        )
    }

    fn flags(&self) -> u8 {
        match &self.coding {
            Coding::Raw => FLAG_RAW,
            Coding::Huffman(t) if t.mode == TableMode::Adaptive => FLAG_ADAPTIVE,
            Coding::Huffman(_) => 0,
        }
    }

    pub fn byte_len(&self) -> usize {
        match &self.coding {
            Coding::Huffman(t) if t.mode == TableMode::Adaptive => HEADER_LEN + 1 + t.alphabet_size(),
            _ => HEADER_LEN,
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        for v in [
            self.original_height,
            self.original_width,
            self.padded_height,
            self.padded_width,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.push(self.depth);
        out.push(self.flags());
        out.extend_from_slice(&self.shift.to_le_bytes());
        if let Coding::Huffman(t) = &self.coding {
            if t.mode == TableMode::Adaptive {
                out.push(t.alphabet_size() as u8);
                out.extend(t.lengths());
            }
        }
    }

    /// Parses and validates a header; returns it with its byte length.
    pub fn read(bytes: &[u8]) -> Result<(Self, usize), StreamError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(StreamError::HeaderTruncated {
                    needed: n,
                    have: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(MAGIC.len())?;
        if &bytes[..4] != MAGIC {
            return Err(StreamError::BadMagic(bytes[..4].to_vec()));
        }
        need(HEADER_LEN)?;
        let version = bytes[4];
        if version != VERSION {
            return Err(StreamError::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let (oh, ow, ph, pw) = (u32_at(5), u32_at(9), u32_at(13), u32_at(17));
        let channels = u16::from_le_bytes([bytes[21], bytes[22]]);
        let depth = bytes[23];
        let flags = bytes[24];
        let shift = f32::from_le_bytes(bytes[25..29].try_into().expect("4 bytes"));
        let mut len = HEADER_LEN;
        let coding = match flags {
            0 => Coding::Huffman(CodeTable::unary(depth.min(crate::pipeline::symbols::MAX_DEPTH))),
            FLAG_RAW => Coding::Raw,
            FLAG_ADAPTIVE => {
                need(HEADER_LEN + 1)?;
                let n = bytes[HEADER_LEN] as usize;
                need(HEADER_LEN + 1 + n)?;
                len = HEADER_LEN + 1 + n;
                Coding::Huffman(CodeTable::canonical(&bytes[HEADER_LEN + 1..len])?)
            }
            f => return Err(StreamError::InvalidHeader(format!("unknown flags {f:#04x}"))),
        };
        let header = Header {
            version,
            original_height: oh,
            original_width: ow,
            padded_height: ph,
            padded_width: pw,
            channels,
            depth,
            shift,
            coding,
        };
        header.validate()?;
        Ok((header, len))
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidHeader(m));
        if check_depth(self.depth).is_err() {
            return bad(format!("quantization depth {} outside 1..=7", self.depth));
        }
        if self.channels == 0 {
            return bad("zero channels".into());
        }
        let (oh, ow, ph, pw) = (
            self.original_height,
            self.original_width,
            self.padded_height,
            self.padded_width,
        );
        if oh == 0 || ow == 0 || ph % 8 != 0 || pw % 8 != 0 || ph < oh || pw < ow || ph - oh >= 8 || pw - ow >= 8 {
            return bad(format!("inconsistent dims: original {oh}x{ow}, padded {ph}x{pw}"));
        }
        let (h, w, k) = self.code_dims();
        if h.saturating_mul(w).saturating_mul(k) > MAX_SYMBOLS {
            return bad(format!("code tensor {h}x{w}x{k} exceeds the symbol limit"));
        }
        if !self.shift.is_finite() {
            return bad("non-finite shift".into());
        }
        if let Coding::Huffman(t) = &self.coding {
            if t.alphabet_size() != (1usize << self.depth) + 1 {
                return bad(format!(
                    "table alphabet {} does not match depth {}",
                    t.alphabet_size(),
                    self.depth
                ));
            }
        }
        Ok(())
    }
}

/// Header fields not implied by the code tensor itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamInfo {
    pub original_height: u32,
    pub original_width: u32,
    pub shift: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub header: Header,
    pub payload: Vec<u8>,
    /// Meaningful payload bits before byte padding.
    pub payload_bits: u64,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header.byte_len() + self.payload.len());
        self.header.write(&mut out);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StreamError> {
        let (header, len) = Header::read(bytes)?;
        let payload = bytes[len..].to_vec();
        let payload_bits = payload.len() as u64 * 8;
        Ok(Self {
            header,
            payload,
            payload_bits,
        })
    }

    pub fn byte_len(&self) -> usize {
        self.header.byte_len() + self.payload.len()
    }
}

/// Scan position `pos` of a channel -> `(row, col)`: bottom row first.
fn scan_coords(pos: usize, height: usize, width: usize) -> (usize, usize) {
    (height - 1 - pos / width, pos % width)
}

/// Symbols of one channel in scan order.
fn channel_scan(grid: &SymbolGrid, ch: usize) -> impl Iterator<Item = u8> + '_ {
    let (h, w) = (grid.height, grid.width);
    (0..h * w).map(move |pos| {
        let (r, c) = scan_coords(pos, h, w);
        grid.get(r, c, ch)
    })
}

/// Emitted run length of a channel: up to and including the last nonzero symbol.
fn run_length(grid: &SymbolGrid, ch: usize) -> usize {
    channel_scan(grid, ch)
        .enumerate()
        .filter(|(_, s)| *s != 0)
        .last()
        .map_or(0, |(i, _)| i + 1)
}

/// Counts of emitted symbols, terminators included (index `2^L`).
pub fn histogram(z: &MaskedCodeTensor) -> Vec<u64> {
    let mut counts = vec![0u64; z.alphabet_size() + 1];
    for ch in 0..z.grid.channels {
        let run = run_length(&z.grid, ch);
        for s in channel_scan(&z.grid, ch).take(run) {
            if let Some(c) = counts.get_mut(s as usize) {
                *c += 1;
            }
        }
        counts[z.alphabet_size()] += 1;
    }
    counts
}

pub fn encode_stream(z: &MaskedCodeTensor, coding: &Coding, info: &StreamInfo) -> Result<Bitstream, StreamError> {
    let grid = &z.grid;
    let header = Header {
        version: VERSION,
        original_height: info.original_height,
        original_width: info.original_width,
        padded_height: (grid.height * 8) as u32,
        padded_width: (grid.width * 8) as u32,
        channels: u16::try_from(grid.channels)
            .map_err(|_| StreamError::InvalidHeader(format!("{} channels do not fit u16", grid.channels)))?,
        depth: z.depth,
        shift: info.shift,
        coding: coding.clone(),
    };
    header.validate()?;
    let mut w = BitWriter::new();
    match coding {
        Coding::Raw => {
            let top = (1usize << z.depth) - 1;
            for ch in 0..grid.channels {
                for s in channel_scan(grid, ch) {
                    if s as usize > top {
                        return Err(StreamError::SymbolOutOfAlphabet {
                            symbol: s as usize,
                            channel: ch,
                            alphabet: top + 1,
                        });
                    }
                    w.write(s as u64, z.depth as u32);
                }
            }
        }
        Coding::Huffman(table) => {
            let eoc = table.terminator();
            for ch in 0..grid.channels {
                let run = run_length(grid, ch);
                for s in channel_scan(grid, ch).take(run) {
                    let code = (s as usize != eoc).then(|| table.code(s as usize)).flatten().ok_or(
                        StreamError::SymbolOutOfAlphabet {
                            symbol: s as usize,
                            channel: ch,
                            alphabet: eoc,
                        },
                    )?;
                    w.write(code.bits, code.len as u32);
                }
                let t = table
                    .code(eoc)
                    .ok_or_else(|| StreamError::InvalidTable("terminator has no codeword".into()))?;
                w.write(t.bits, t.len as u32);
            }
        }
    }
    let payload_bits = w.bit_len();
    Ok(Bitstream {
        header,
        payload: w.finish(),
        payload_bits,
    })
}

/// Encodes with the given table mode; adaptive tables come from the
/// histogram of `z` itself.
pub fn encode_with_mode(z: &MaskedCodeTensor, mode: TableMode, info: &StreamInfo) -> Result<Bitstream, StreamError> {
    let table = match mode {
        TableMode::Unary => CodeTable::unary(z.depth),
        TableMode::Adaptive => build_table(&histogram(z))?,
    };
    encode_stream(z, &Coding::Huffman(table), info)
}

pub fn decode_stream(bs: &Bitstream) -> Result<MaskedCodeTensor, StreamError> {
    let header = &bs.header;
    header.validate()?;
    let (h, w, k) = header.code_dims();
    let mut grid = SymbolGrid::zeros(h, w, k);
    let capacity = h * w;
    let mut r = BitReader::new(&bs.payload);
    match &header.coding {
        Coding::Raw => {
            for ch in 0..k {
                for pos in 0..capacity {
                    let s = r.read(header.depth as u32).ok_or(StreamError::Truncated {
                        channel: ch,
                        bits: r.position(),
                    })?;
                    let (row, col) = scan_coords(pos, h, w);
                    grid.set(row, col, ch, s as u8);
                }
            }
        }
        Coding::Huffman(table) => {
            let lookup = table.decoder();
            let max_len = table.max_len();
            let eoc = table.terminator();
            for ch in 0..k {
                let mut pos = 0usize;
                let mut last = None;
                loop {
                    let start = r.position();
                    let (mut code, mut len) = (0u64, 0u8);
                    let symbol = loop {
                        let bit = r.read_bit().ok_or(StreamError::Truncated {
                            channel: ch,
                            bits: r.position(),
                        })?;
                        code = code.checked_shl(1).unwrap_or(0) | bit as u64;
                        len += 1;
                        if let Some(&s) = lookup.get(&(len, code)) {
                            break s;
                        }
                        if len >= max_len {
                            return Err(StreamError::InvalidCodeword {
                                channel: ch,
                                bit_offset: start,
                            });
                        }
                    };
                    if symbol == eoc {
                        if last == Some(0) {
                            return Err(StreamError::NonCanonical { channel: ch });
                        }
                        break;
                    }
                    if pos >= capacity {
                        return Err(StreamError::ChannelOverflow { channel: ch, capacity });
                    }
                    let (row, col) = scan_coords(pos, h, w);
                    grid.set(row, col, ch, symbol as u8);
                    last = Some(symbol);
                    pos += 1;
                }
            }
        }
    }
    let rest = r.remaining();
    if rest >= 8 || r.read(rest as u32).is_some_and(|v| v != 0) {
        return Err(StreamError::TrailingData { bits: rest });
    }
    Ok(MaskedCodeTensor {
        depth: header.depth,
        grid,
    })
}

/// Bits per original pixel, header included.
pub fn bpp(bs: &Bitstream) -> f64 {
    let pixels = bs.header.original_height as f64 * bs.header.original_width as f64;
    (bs.byte_len() * 8) as f64 / pixels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_channel(h: usize, w: usize, rows_top_down: &[u8]) -> MaskedCodeTensor {
        MaskedCodeTensor {
            depth: 2,
            grid: SymbolGrid {
                height: h,
                width: w,
                channels: 1,
                data: rows_top_down.to_vec(),
            },
        }
    }

    fn info(z: &MaskedCodeTensor) -> StreamInfo {
        StreamInfo {
            original_height: (z.grid.height * 8) as u32,
            original_width: (z.grid.width * 8) as u32,
            shift: 0.0,
        }
    }

    fn bit_string(bs: &Bitstream) -> String {
        bs.payload
            .iter()
            .map(|b| format!("{b:08b}"))
            .collect::<String>()
            .chars()
            .take(bs.payload_bits as usize)
            .collect()
    }

    #[test]
    fn fixed_code_three_symbol_example() {
        // scan order: bottom row [0, 0, 1]
        let z = single_channel(1, 3, &[0, 0, 1]);
        let bs = encode_with_mode(&z, TableMode::Unary, &info(&z)).unwrap();
        assert_eq!(bit_string(&bs), "1101".to_string() + "00001");
        assert_eq!(decode_stream(&bs).unwrap(), z);
    }

    #[test]
    fn bottom_up_scan_example() {
        let z = single_channel(2, 2, &[0, 0, 1, 2]);
        let bs = encode_with_mode(&z, TableMode::Unary, &info(&z)).unwrap();
        assert_eq!(bit_string(&bs), "0100100001");
        assert_eq!(decode_stream(&bs).unwrap(), z);
    }

    #[test]
    fn zero_channel_is_terminator_only() {
        let z = single_channel(2, 2, &[0, 0, 0, 0]);
        let bs = encode_with_mode(&z, TableMode::Unary, &info(&z)).unwrap();
        assert_eq!(bit_string(&bs), "00001");
    }

    #[test]
    fn consecutive_terminators_decode_to_zeros() {
        let z = MaskedCodeTensor {
            depth: 2,
            grid: SymbolGrid::zeros(2, 2, 5),
        };
        let bs = encode_with_mode(&z, TableMode::Unary, &info(&z)).unwrap();
        assert_eq!(bs.payload_bits, 25);
        assert_eq!(decode_stream(&bs).unwrap(), z);
    }

    #[test]
    fn header_round_trip_through_bytes() {
        let z = single_channel(2, 2, &[3, 0, 1, 2]);
        for mode in [TableMode::Unary, TableMode::Adaptive] {
            let bs = encode_with_mode(&z, mode, &info(&z)).unwrap();
            let bytes = bs.to_bytes();
            assert_eq!(bytes.len(), bs.byte_len());
            let back = Bitstream::from_bytes(&bytes).unwrap();
            assert_eq!(back.header, bs.header);
            assert_eq!(decode_stream(&back).unwrap(), z);
        }
        let raw = encode_stream(&z, &Coding::Raw, &info(&z)).unwrap();
        assert_eq!(
            decode_stream(&Bitstream::from_bytes(&raw.to_bytes()).unwrap()).unwrap(),
            z
        );
    }

    #[test]
    fn header_errors_are_distinct() {
        let z = single_channel(2, 2, &[3, 0, 1, 2]);
        let bytes = encode_with_mode(&z, TableMode::Unary, &info(&z)).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Bitstream::from_bytes(&bad), Err(StreamError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            Bitstream::from_bytes(&bad),
            Err(StreamError::UnsupportedVersion { found: 2, expected: 1 })
        ));
        assert!(matches!(
            Bitstream::from_bytes(&bytes[..10]),
            Err(StreamError::HeaderTruncated { .. })
        ));
    }

    #[test]
    fn payload_errors_are_distinct() {
        let z = single_channel(1, 2, &[0, 0]);
        let mut bs = encode_with_mode(&z, TableMode::Unary, &info(&z)).unwrap();
        bs.payload.clear();
        assert!(matches!(decode_stream(&bs), Err(StreamError::Truncated { .. })));
        // "00000" matches no codeword of the fixed table
        bs.payload = vec![0b0000_0000];
        assert!(matches!(decode_stream(&bs), Err(StreamError::InvalidCodeword { .. })));
        // three symbols into a two-slot channel: 01 01 01 ...
        bs.payload = vec![0b0101_0100, 0b0010_0000];
        assert!(matches!(decode_stream(&bs), Err(StreamError::ChannelOverflow { .. })));
        // zero before terminator: 1 00001
        bs.payload = vec![0b1000_0100];
        assert!(matches!(decode_stream(&bs), Err(StreamError::NonCanonical { .. })));
        bs.payload = vec![0b0000_1000, 0];
        assert!(matches!(decode_stream(&bs), Err(StreamError::TrailingData { .. })));
    }

    #[test]
    fn symbol_outside_alphabet_rejected() {
        let z = single_channel(1, 2, &[4, 0]);
        assert!(matches!(
            encode_with_mode(&z, TableMode::Unary, &info(&z)),
            Err(StreamError::SymbolOutOfAlphabet { .. })
        ));
    }

    #[test]
    fn bpp_counts_header() {
        let z = single_channel(1, 1, &[0]);
        let bs = encode_with_mode(
            &z,
            TableMode::Unary,
            &StreamInfo {
                original_height: 8,
                original_width: 8,
                shift: 0.0,
            },
        )
        .unwrap();
        assert_eq!(bs.byte_len(), HEADER_LEN + 1);
        assert!((bpp(&bs) - (30.0 * 8.0 / 64.0)).abs() < 1e-12);
        let mut larger = bs.clone();
        larger.header.original_height = 16;
        assert!(bpp(&larger) < bpp(&bs));
    }
}
