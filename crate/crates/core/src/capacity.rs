//! Hard cap on exhaustive enumeration sizes.

use crate::error::{Error, Result};

/// Environment variable overriding the enumeration cap (log2 of the count).
pub const LIMIT_VAR: &str = "PRPD_ENUM_LIMIT_LOG2";

pub const DEFAULT_LIMIT_LOG2: u32 = 22;

pub fn limit_log2() -> u32 {
    std::env::var(LIMIT_VAR)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_LIMIT_LOG2)
        .min(40)
}

/// Refuses an enumeration of `2^bits` items above the cap.
pub fn check_capacity(what: &str, bits: usize) -> Result<()> {
    let limit = limit_log2();
    if bits > limit as usize {
        return Err(Error::Capacity {
            what: what.to_string(),
            needed_log2: bits as u32,
            limit_log2: limit,
        });
    }
    Ok(())
}
