//! Exhaustive enumeration, used as the reference for every chart quantity.

use alloc::vec::Vec;

use super::{score_segmentation, PotentialTable, Segmentation, Span};
use crate::error::{Error, Result};

/// Longest sentence the enumeration accepts.
pub const ENUMERATION_LIMIT: usize = 8;

/// Every valid labeled segmentation with its log-score.
pub fn brute_force_oracle(pt: &PotentialTable) -> Result<Vec<(Segmentation, f64)>> {
    if pt.len() > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            len: pt.len(),
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut out = Vec::new();
    let mut stack = Vec::new();
    extend(pt, 0, &mut stack, &mut out)?;
    Ok(out)
}

fn extend(
    pt: &PotentialTable,
    at: usize,
    stack: &mut Vec<Span>,
    out: &mut Vec<(Segmentation, f64)>,
) -> Result<()> {
    if at == pt.len() {
        let z = Segmentation::new(stack.clone());
        let score = score_segmentation(&z, pt)?;
        out.push((z, score));
        return Ok(());
    }
    for d in 1..=pt.max_len_at(at) {
        for c in 0..pt.labels() {
            stack.push(Span::new(at, at + d, c));
            extend(pt, at + d, stack, out)?;
            stack.pop();
        }
    }
    Ok(())
}
