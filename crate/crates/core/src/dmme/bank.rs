use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{EngineGeometry, MatMulMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Routing {
    /// Lowest `n` elements of the word, wired straight to head 0.
    Direct,
    /// A 2-to-1 multiplexer picks this head's `n`-element slice.
    MuxSelect,
    /// The whole `m`-element word goes to every head.
    Broadcast,
}

/// One input-memory word as seen by one head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankAccess {
    pub bank: usize,
    pub address: usize,
    pub routing: Routing,
    /// Element lanes of the `m`-wide word delivered to the head.
    pub lanes: Range<usize>,
}

/// Input bank word for array column `column`, head `head`, at streaming step
/// `cycle`. Every column owns a bank; each bank word holds `m` elements,
/// which in dense mode are the `n`-element slices of the `h` heads' tiles.
pub fn bank_address(
    mode: MatMulMode,
    g: &EngineGeometry,
    column: usize,
    head: usize,
    cycle: usize,
) -> BankAccess {
    assert!(column < g.c(), "column {column} outside {} banks", g.c());
    assert!(head < g.h(), "head {head} outside {} heads", g.h());
    match mode {
        MatMulMode::DenseDense => BankAccess {
            bank: column,
            address: cycle,
            routing: if head == 0 { Routing::Direct } else { Routing::MuxSelect },
            lanes: head * g.n()..(head + 1) * g.n(),
        },
        MatMulMode::SparseDense => BankAccess {
            bank: column,
            address: cycle,
            routing: Routing::Broadcast,
            lanes: 0..g.m(),
        },
    }
}
