use thiserror::Error;

/// Element count does not match the requested dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expected {}x{} elements, found {found}", expected.0, expected.1)]
pub struct ShapeError {
    pub expected: (usize, usize),
    pub found: usize,
}
