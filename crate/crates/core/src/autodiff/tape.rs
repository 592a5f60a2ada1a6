//! Thread-local recording graph.
//!
//! Every recorded node stores the indices of its operands together with the
//! local partial derivative with respect to each. Operands always precede the
//! node that uses them, so one reverse sweep accumulates all adjoints.

use std::cell::RefCell;

pub(crate) const CONST: u32 = u32::MAX;

#[derive(Default)]
pub(crate) struct Tape {
    /// Offset of each node's operand list in `args`.
    starts: Vec<u32>,
    args: Vec<(u32, f64)>,
    non_finite: bool,
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

#[derive(Clone, Copy)]
pub(crate) struct Mark {
    nodes: usize,
    args: usize,
    non_finite: bool,
}

impl Tape {
    fn push(&mut self, value: f64, operands: impl IntoIterator<Item = (u32, f64)>) -> u32 {
        let idx = self.starts.len();
        assert!(idx < CONST as usize, "autodiff tape exhausted");
        self.starts.push(self.args.len() as u32);
        self.args.extend(operands);
        if !value.is_finite() {
            self.non_finite = true;
        }
        idx as u32
    }

    fn node_args(&self, idx: usize) -> &[(u32, f64)] {
        let lo = self.starts[idx] as usize;
        let hi = self.starts.get(idx + 1).map_or(self.args.len(), |&s| s as usize);
        &self.args[lo..hi]
    }
}

pub(crate) fn record(value: f64, operands: impl IntoIterator<Item = (u32, f64)>) -> u32 {
    TAPE.with(|t| t.borrow_mut().push(value, operands))
}

pub(crate) fn mark() -> Mark {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        let m = Mark {
            nodes: t.starts.len(),
            args: t.args.len(),
            non_finite: t.non_finite,
        };
        t.non_finite = false;
        m
    })
}

/// Whether a non-finite value was recorded since `mark`.
pub(crate) fn saw_non_finite() -> bool {
    TAPE.with(|t| t.borrow().non_finite)
}

pub(crate) fn rewind(m: Mark) {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.starts.truncate(m.nodes);
        t.args.truncate(m.args);
        t.non_finite = m.non_finite;
    })
}

/// Reverse sweep from `output`, returning the adjoint of each requested node.
pub(crate) fn adjoints(output: u32, wrt: &[u32]) -> Vec<f64> {
    if output == CONST {
        return vec![0.0; wrt.len()];
    }
    TAPE.with(|t| {
        let t = t.borrow();
        let lowest = wrt.iter().copied().filter(|&i| i != CONST).min().unwrap_or(0) as usize;
        let out = output as usize;
        let mut adj = vec![0.0; out + 1 - lowest.min(out + 1)];
        let base = lowest.min(out + 1);
        adj[out - base] = 1.0;
        for node in (base..=out).rev() {
            let a = adj[node - base];
            if a == 0.0 {
                continue;
            }
            for &(arg, d) in t.node_args(node) {
                let arg = arg as usize;
                if arg >= base {
                    adj[arg - base] += a * d;
                }
            }
        }
        wrt.iter()
            .map(|&i| {
                if i == CONST || (i as usize) < base || (i as usize) > out {
                    0.0
                } else {
                    adj[i as usize - base]
                }
            })
            .collect()
    })
}
