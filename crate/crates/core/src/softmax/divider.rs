use std::collections::VecDeque;

use super::SoftmaxError;

/// One restoring shift-subtract stage: produces one quotient bit.
#[inline]
fn stage(rem: u64, quot: u32, den: u64) -> (u64, u32) {
    let rem = rem << 1;
    if rem >= den {
        (rem - den, (quot << 1) | 1)
    } else {
        (rem, quot << 1)
    }
}

/// `num / den` as a `q`-bit fraction after `q` restoring stages.
/// Requires `num <= den`; `x / x` yields `2^q - 1`.
pub fn pipelined_divide(num: u64, den: u64, q: u32) -> Result<u32, SoftmaxError> {
    if den == 0 {
        return Err(SoftmaxError::DivideByZero);
    }
    if num > den {
        return Err(SoftmaxError::NumeratorTooLarge { num, den });
    }
    let (mut rem, mut quot) = (num, 0u32);
    for _ in 0..q {
        (rem, quot) = stage(rem, quot, den);
    }
    Ok(quot)
}

struct Batch {
    items: Vec<(usize, u64, u32)>,
    done: u32,
}

/// `lanes`-wide divider with `depth` stages. A batch is latched on the cycle
/// it is issued and leaves after `depth` further cycles.
pub struct DividerPipeline {
    lanes: usize,
    depth: u32,
    in_flight: VecDeque<Batch>,
}

impl DividerPipeline {
    pub fn new(lanes: u32, depth: u32) -> Self {
        Self {
            lanes: lanes as usize,
            depth,
            in_flight: VecDeque::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_empty()
    }

    /// Advances one cycle, latching `issue` (tag, numerator) pairs, and
    /// returns the (tag, quotient) pairs that completed this cycle.
    pub fn tick(&mut self, issue: &[(usize, u64)], den: u64) -> Vec<(usize, u32)> {
        assert!(issue.len() <= self.lanes, "more issues than lanes");
        assert!(den > 0, "division by zero");
        for b in &mut self.in_flight {
            for item in &mut b.items {
                let (r, q) = stage(item.1, item.2, den);
                item.1 = r;
                item.2 = q;
            }
            b.done += 1;
        }
        let mut out = Vec::new();
        while self.in_flight.front().is_some_and(|b| b.done >= self.depth) {
            let b = self.in_flight.pop_front().unwrap();
            out.extend(b.items.into_iter().map(|(t, _, q)| (t, q)));
        }
        if !issue.is_empty() {
            for &(_, num) in issue {
                assert!(num <= den, "numerator exceeds denominator");
            }
            self.in_flight.push_back(Batch {
                items: issue.iter().map(|&(t, n)| (t, n, 0)).collect(),
                done: 0,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_small_operands() {
        for q in 4..=16u32 {
            for den in 1..=255u64 {
                for num in 0..=den {
                    let want = ((num << q) / den).min((1 << q) - 1) as u32;
                    assert_eq!(pipelined_divide(num, den, q).unwrap(), want);
                }
            }
        }
    }

    #[test]
    fn errors() {
        assert_eq!(pipelined_divide(1, 0, 8), Err(SoftmaxError::DivideByZero));
        assert!(matches!(pipelined_divide(5, 4, 8), Err(SoftmaxError::NumeratorTooLarge { .. })));
        assert_eq!(pipelined_divide(7, 7, 16).unwrap(), 65535);
        assert_eq!(pipelined_divide(1, 2, 8).unwrap(), 128);
    }

    #[test]
    fn pipeline_latency_and_order() {
        let mut p = DividerPipeline::new(2, 4);
        let mut got = Vec::new();
        let mut cycle = 0;
        let inputs = [(0usize, 1u64), (1, 2), (2, 3)];
        let mut next = 0;
        while next < inputs.len() || !p.is_empty() {
            let end = (next + 2).min(inputs.len());
            let done = p.tick(&inputs[next..end], 4);
            next = end;
            cycle += 1;
            for d in done {
                got.push((cycle, d));
            }
        }
        assert_eq!(cycle, 2 + 4);
        assert_eq!(got, vec![(5, (0, 4)), (5, (1, 8)), (6, (2, 12))]);
    }
}
