use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::MatMulMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TraceLevel {
    /// Totals only.
    #[default]
    Summary,
    /// Totals plus one record per counted cycle.
    PerCycle,
}

/// Activity summed over all heads in one cycle. Reads are in 16-bit elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u64,
    pub active_pes: u64,
    pub macs: u64,
    pub weight_reads: u64,
    pub input_reads: u64,
    pub selector_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub mode: MatMulMode,
    pub passes: u64,
    pub fill_skew: u64,
    pub steady_per_pass: u64,
    pub total_cycles: u64,
    pub compute_cycles: u64,
    /// Shift-out cycles between passes (counted in `total_cycles`).
    pub drain_cycles: u64,
    /// Shift-out of the last pass (not counted in `total_cycles`).
    pub drain_tail: u64,
    pub total_macs: u64,
    pub weight_reads: u64,
    pub input_reads: u64,
    pub selector_ops: u64,
    pub overflow_count: u64,
    /// Most MACs any PE issued in a single cycle.
    pub max_pe_macs: u32,
    pub records: Vec<CycleRecord>,
}

/// The JSON summary of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub total_cycles: u64,
    pub total_macs: u64,
    pub overflow_count: u64,
}

impl CycleTrace {
    pub fn new(mode: MatMulMode) -> Self {
        Self {
            mode,
            passes: 0,
            fill_skew: 0,
            steady_per_pass: 0,
            total_cycles: 0,
            compute_cycles: 0,
            drain_cycles: 0,
            drain_tail: 0,
            total_macs: 0,
            weight_reads: 0,
            input_reads: 0,
            selector_ops: 0,
            overflow_count: 0,
            max_pe_macs: 0,
            records: Vec::new(),
        }
    }

    /// Adds a compute cycle and returns its index.
    pub(crate) fn push(&mut self, rec: CycleRecord, keep: bool) {
        debug_assert_eq!(rec.cycle, self.total_cycles);
        self.total_cycles += 1;
        self.total_macs += rec.macs;
        self.weight_reads += rec.weight_reads;
        self.input_reads += rec.input_reads;
        self.selector_ops += rec.selector_ops;
        if keep {
            self.records.push(rec);
        }
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            total_cycles: self.total_cycles,
            total_macs: self.total_macs,
            overflow_count: self.overflow_count,
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string(&self.summary()).expect("summary serializes")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "cycle,macs,weight_reads,input_reads,selector_ops")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.cycle, r.macs, r.weight_reads, r.input_reads, r.selector_ops
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_summary() {
        let mut t = CycleTrace::new(MatMulMode::SparseDense);
        for c in 0..3 {
            t.push(CycleRecord { cycle: c, macs: 2, ..Default::default() }, true);
        }
        t.overflow_count = 1;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(2).unwrap(), "1,2,0,0,0");
        let s: TraceSummary = serde_json::from_str(&t.summary_json()).unwrap();
        assert_eq!(s, TraceSummary { total_cycles: 3, total_macs: 6, overflow_count: 1 });
    }
}
