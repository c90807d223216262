//! Wire format of a rank set.
//!
//! ```text
//! +----------------+------------------------------+-----------------+---------+
//! | count: u16 BE  | count x B-bit ranks (BE bits) | count flag bits | 0 pad   |
//! +----------------+------------------------------+-----------------+---------+
//! ```
//!
//! `B` is the minimum bit width for the group (see [`TreeShape::bits`]).
//! Flag bits are present only in the [`Layout::WithFlags`] layout; the
//! receiver knows the layout from the algorithm instance.

use crate::error::CodecError;
use crate::topology::{AlgRank, TreeShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Plain,
    WithFlags,
}

/// Ascending rank list, optionally with one reduction bit per rank.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RankSetPayload {
    pub ranks: Vec<AlgRank>,
    pub flags: Option<Vec<bool>>,
}

impl RankSetPayload {
    pub fn plain(ranks: Vec<AlgRank>) -> Self {
        RankSetPayload { ranks, flags: None }
    }

    pub fn count(&self) -> usize {
        self.ranks.len()
    }

    pub fn layout(&self) -> Layout {
        if self.flags.is_some() {
            Layout::WithFlags
        } else {
            Layout::Plain
        }
    }

    pub fn validate(&self, shape: TreeShape) -> Result<(), CodecError> {
        if self.ranks.len() > u16::MAX as usize {
            return Err(CodecError::TooManyRanks(self.ranks.len()));
        }
        for (i, r) in self.ranks.iter().enumerate() {
            if !shape.contains(*r) {
                return Err(CodecError::RankOutOfRange {
                    rank: r.0,
                    size: shape.size(),
                });
            }
            if i > 0 && self.ranks[i - 1] >= *r {
                return Err(CodecError::NotAscending(i));
            }
        }
        if let Some(flags) = &self.flags {
            if flags.len() != self.ranks.len() {
                return Err(CodecError::FlagCount {
                    flags: flags.len(),
                    ranks: self.ranks.len(),
                });
            }
        }
        Ok(())
    }
}

/// Number of body bytes following the header.
pub fn body_len(count: usize, shape: TreeShape, layout: Layout) -> usize {
    let per = shape.bits() as usize + usize::from(layout == Layout::WithFlags);
    (count * per).div_ceil(8)
}

struct BitWriter {
    out: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn put(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            if self.used.is_multiple_of(8) {
                self.out.push(0);
            }
            let bit = (value >> i) & 1;
            let last = self.out.last_mut().expect("byte pushed above");
            *last |= (bit as u8) << (7 - self.used % 8);
            self.used += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn take(&mut self, width: u32) -> u32 {
        let mut v = 0u32;
        for _ in 0..width {
            let byte = self.bytes[self.pos / 8];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        v
    }
}

pub fn encode_rank_set(p: &RankSetPayload, shape: TreeShape) -> Result<Vec<u8>, CodecError> {
    p.validate(shape)?;
    let count = p.count() as u16;
    let mut w = BitWriter {
        out: Vec::with_capacity(2 + body_len(p.count(), shape, p.layout())),
        used: 0,
    };
    w.out.extend_from_slice(&count.to_be_bytes());
    w.used = 16;
    for r in &p.ranks {
        w.put(r.0, shape.bits());
    }
    if let Some(flags) = &p.flags {
        for &f in flags {
            w.put(u32::from(f), 1);
        }
    }
    Ok(w.out)
}

pub fn decode_rank_set(
    bytes: &[u8],
    shape: TreeShape,
    layout: Layout,
) -> Result<RankSetPayload, CodecError> {
    if bytes.len() < 2 {
        return Err(CodecError::Truncated {
            needed: 2,
            have: bytes.len(),
        });
    }
    let count = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
    let body = &bytes[2..];
    let needed = body_len(count, shape, layout);
    if body.len() < needed {
        return Err(CodecError::Truncated {
            needed: needed + 2,
            have: bytes.len(),
        });
    }
    if body.len() > needed {
        return Err(CodecError::TrailingBytes(body.len() - needed));
    }
    let mut r = BitReader {
        bytes: body,
        pos: 0,
    };
    let mut ranks = Vec::with_capacity(count);
    for i in 0..count {
        let v = r.take(shape.bits());
        if v >= shape.size() {
            return Err(CodecError::RankOutOfRange {
                rank: v,
                size: shape.size(),
            });
        }
        if i > 0 && ranks[i - 1] >= AlgRank(v) {
            return Err(CodecError::NotAscending(i));
        }
        ranks.push(AlgRank(v));
    }
    let flags = match layout {
        Layout::Plain => None,
        Layout::WithFlags => Some((0..count).map(|_| r.take(1) == 1).collect()),
    };
    let pad = (body.len() * 8 - r.pos) as u32;
    if pad > 0 && r.take(pad) != 0 {
        return Err(CodecError::DirtyPadding);
    }
    Ok(RankSetPayload { ranks, flags })
}
