use thiserror::Error;

/// Two views that must have equal length did not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("length mismatch: expected {expected}, found {found}")]
pub struct LengthMismatch {
    pub expected: usize,
    pub found: usize,
}

impl LengthMismatch {
    pub(crate) fn check(expected: usize, found: usize) -> Result<(), LengthMismatch> {
        if expected == found {
            Ok(())
        } else {
            Err(LengthMismatch { expected, found })
        }
    }
}
