//! Code tables: the fixed unary table and canonical Huffman tables.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::StreamError;

/// Longest codeword the adaptive table may use.
pub const MAX_CODE_LEN: u8 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMode {
    /// `s -> "0"^s "1"`, terminator `"0"^(2^L) "1"`.
    Unary,
    /// Canonical Huffman built from the payload histogram.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Codeword {
    pub bits: u64,
    pub len: u8,
}

/// Codewords for the alphabet `0..2^L` followed by the terminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTable {
    pub mode: TableMode,
    codes: Vec<Option<Codeword>>,
}

impl CodeTable {
    /// Unary table over `2^depth` symbols plus terminator.
    pub fn unary(depth: u8) -> Self {
        let n = (1usize << depth) + 1;
        Self {
            mode: TableMode::Unary,
            codes: (0..n)
                .map(|s| {
                    Some(Codeword {
                        bits: 1,
                        len: (s + 1) as u8,
                    })
                })
                .collect(),
        }
    }

    /// Canonical code from per-symbol lengths (0 = symbol absent).
    pub fn canonical(lengths: &[u8]) -> Result<Self, StreamError> {
        if lengths.iter().all(|&l| l == 0) {
            return Err(StreamError::InvalidTable("no symbol has a codeword".into()));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l > MAX_CODE_LEN) {
            return Err(StreamError::InvalidTable(format!(
                "code length {l} exceeds {MAX_CODE_LEN}"
            )));
        }
        let kraft: u128 = lengths
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| 1u128 << (MAX_CODE_LEN - l))
            .sum();
        if kraft > 1u128 << MAX_CODE_LEN {
            return Err(StreamError::InvalidTable(
                "code lengths violate the Kraft inequality".into(),
            ));
        }
        let mut order: Vec<usize> = (0..lengths.len()).filter(|&s| lengths[s] > 0).collect();
        order.sort_by_key(|&s| (lengths[s], s));
        let mut codes = vec![None; lengths.len()];
        let mut code: u64 = 0;
        let mut prev = lengths[order[0]];
        for (i, &s) in order.iter().enumerate() {
            let len = lengths[s];
            if i > 0 {
                code = (code + 1) << (len - prev);
            }
            prev = len;
            codes[s] = Some(Codeword { bits: code, len });
        }
        Ok(Self {
            mode: TableMode::Adaptive,
            codes,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.codes.len()
    }

    pub fn terminator(&self) -> usize {
        self.codes.len() - 1
    }

    pub fn code(&self, symbol: usize) -> Option<Codeword> {
        self.codes.get(symbol).copied().flatten()
    }

    pub fn lengths(&self) -> Vec<u8> {
        self.codes.iter().map(|c| c.map_or(0, |c| c.len)).collect()
    }

    pub fn max_len(&self) -> u8 {
        self.lengths().into_iter().max().unwrap_or(0)
    }

    /// `sum 2^-len` over present symbols.
    pub fn kraft_sum(&self) -> f64 {
        self.codes.iter().flatten().map(|c| 0.5f64.powi(c.len as i32)).sum()
    }

    pub fn is_prefix_free(&self) -> bool {
        let present: Vec<Codeword> = self.codes.iter().flatten().copied().collect();
        for (i, a) in present.iter().enumerate() {
            for (j, b) in present.iter().enumerate() {
                if i != j && a.len <= b.len {
                    let shift = (b.len - a.len) as u32;
                    let prefix = if shift >= 64 { 0 } else { b.bits >> shift };
                    if prefix == a.bits {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub(crate) fn decoder(&self) -> HashMap<(u8, u64), usize> {
        self.codes
            .iter()
            .enumerate()
            .filter_map(|(s, c)| c.map(|c| ((c.len, c.bits), s)))
            .collect()
    }
}

/// Huffman code lengths; merge ties break on `(count, smallest symbol)`.
pub fn huffman_lengths(counts: &[u64]) -> Result<Vec<u8>, StreamError> {
    let present: Vec<usize> = (0..counts.len()).filter(|&s| counts[s] > 0).collect();
    if present.is_empty() {
        return Err(StreamError::EmptyHistogram);
    }
    let mut lengths = vec![0u8; counts.len()];
    if present.len() == 1 {
        lengths[present[0]] = 1;
        return Ok(lengths);
    }
    // node: (weight, min symbol, children or leaf)
    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut leaf_node = HashMap::new();
    for &s in &present {
        leaf_node.insert(s, parent.len());
        heap.push(Reverse((counts[s], s, parent.len())));
        parent.push(None);
    }
    while heap.len() > 1 {
        let Reverse((wa, sa, a)) = heap.pop().expect("two nodes");
        let Reverse((wb, sb, b)) = heap.pop().expect("two nodes");
        let id = parent.len();
        parent.push(None);
        parent[a] = Some(id);
        parent[b] = Some(id);
        heap.push(Reverse((wa + wb, sa.min(sb), id)));
    }
    for &s in &present {
        let mut depth = 0u32;
        let mut node = leaf_node[&s];
        while let Some(p) = parent[node] {
            depth += 1;
            node = p;
        }
        if depth > MAX_CODE_LEN as u32 {
            return Err(StreamError::InvalidTable(format!(
                "Huffman depth {depth} exceeds {MAX_CODE_LEN}"
            )));
        }
        lengths[s] = depth as u8;
    }
    Ok(lengths)
}

/// Canonical Huffman table for a histogram over the alphabet plus terminator.
pub fn build_table(histogram: &[u64]) -> Result<CodeTable, StreamError> {
    CodeTable::canonical(&huffman_lengths(histogram)?)
}
