//! Exhaustive checks of the stream scheduler's counting properties.

use navex::mnm::StreamTable;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LemmaViolation {
    /// Stream count after quantum `q` differs from `⌈√q⌉`.
    StreamCount { q: u64, streams: usize, expected: u64 },
    /// At quantum `b²` some stream has not served exactly `b` quanta.
    Balance { b: u64, stream: usize, served: u64 },
    /// Served counts of the settled streams spread by more than one.
    Fairness { q: u64, gap: u64 },
}

/// Smallest `m` with `m² ≥ q`.
pub fn ceil_sqrt(q: u64) -> u64 {
    let r = q.isqrt();
    if r * r == q {
        r
    } else {
        r + 1
    }
}

/// Stream count after every quantum `q ≤ q_max` equals `⌈√q⌉`.
pub fn check_stream_count(q_max: u64) -> Result<(), LemmaViolation> {
    let mut table = StreamTable::new();
    for q in 1..=q_max {
        table.advance();
        let expected = ceil_sqrt(q);
        if table.stream_count() as u64 != expected {
            return Err(LemmaViolation::StreamCount {
                q,
                streams: table.stream_count(),
                expected,
            });
        }
    }
    Ok(())
}

/// At every quantum `b²` with `b ≤ b_max` each of the `b` streams has
/// served exactly `b` quanta, and at every quantum in between the settled
/// streams are within one quantum of each other.
pub fn check_balance(b_max: u64) -> Result<(), LemmaViolation> {
    let mut table = StreamTable::new();
    for b in 1..=b_max {
        while table.quantum() < b * b {
            table.advance();
            let gap = table.settled_gap();
            if gap > 1 {
                return Err(LemmaViolation::Fairness {
                    q: table.quantum(),
                    gap,
                });
            }
        }
        for stream in 1..=table.stream_count() {
            if table.served(stream) != b {
                return Err(LemmaViolation::Balance {
                    b,
                    stream,
                    served: table.served(stream),
                });
            }
        }
    }
    Ok(())
}
