//! Layered read-once branching programs and their transition-matrix semantics.
//!
//! Layers are numbered `0..=n`; step `t` (1-based) moves from layer `t - 1`
//! to layer `t` reading `d_step` bits. A label string for the segment
//! `a..b` has `(b - a) * d_step` bits, step `a + 1` first.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::mat::{Mat, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Robp {
    n: usize,
    w: usize,
    d_step: usize,
    /// `transitions[t][label][state]` is the successor of `state` at step `t + 1`.
    transitions: Vec<Vec<Vec<usize>>>,
}

impl Robp {
    pub fn new(n: usize, w: usize, d_step: usize, transitions: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if w == 0 || d_step == 0 {
            return Err(Error::input("width and bits per step must be at least 1"));
        }
        if d_step > 20 {
            return Err(Error::input(format!("{d_step} bits per step is beyond desk scale")));
        }
        if transitions.len() != n {
            return Err(Error::input(format!(
                "expected {n} steps of transitions, got {}",
                transitions.len()
            )));
        }
        for (t, step) in transitions.iter().enumerate() {
            if step.len() != 1 << d_step {
                return Err(Error::input(format!(
                    "step {} has {} labels, expected {}",
                    t + 1,
                    step.len(),
                    1 << d_step
                )));
            }
            for (v, succ) in step.iter().enumerate() {
                if succ.len() != w {
                    return Err(Error::input(format!(
                        "step {} label {v} maps {} states, expected {w}",
                        t + 1,
                        succ.len()
                    )));
                }
                if let Some(&bad) = succ.iter().find(|&&s| s >= w) {
                    return Err(Error::input(format!(
                        "step {} label {v} has successor {bad} >= width {w}",
                        t + 1
                    )));
                }
            }
        }
        Ok(Robp {
            n,
            w,
            d_step,
            transitions,
        })
    }

    /// Every label leaves every state in place.
    pub fn identity(n: usize, w: usize, d_step: usize) -> Result<Self> {
        let step = vec![(0..w).collect::<Vec<_>>(); 1 << d_step];
        Robp::new(n, w, d_step, vec![step; n])
    }

    /// Uniformly random successor maps, reproducible from `seed`.
    pub fn random(n: usize, w: usize, d_step: usize, seed: u64) -> Result<Self> {
        if n == 0 || w == 0 {
            return Err(Error::input("random ROBPs need n, w >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transitions = (0..n)
            .map(|_| {
                (0..1usize << d_step)
                    .map(|_| (0..w).map(|_| rng.gen_range(0..w)).collect())
                    .collect()
            })
            .collect();
        Robp::new(n, w, d_step, transitions)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn d_step(&self) -> usize {
        self.d_step
    }

    pub fn labels(&self) -> usize {
        1 << self.d_step
    }

    /// Appends identity steps until the program has `n` steps.
    pub fn padded_to(&self, n: usize) -> Result<Self> {
        if n < self.n {
            return Err(Error::input(format!("cannot pad {} steps down to {n}", self.n)));
        }
        let mut transitions = self.transitions.clone();
        let id = vec![(0..self.w).collect::<Vec<_>>(); self.labels()];
        transitions.resize(n, id);
        Robp::new(n, self.w, self.d_step, transitions)
    }

    fn check_step(&self, t: usize, label: usize) -> Result<()> {
        if t == 0 || t > self.n {
            return Err(Error::input(format!("step {t} outside 1..={}", self.n)));
        }
        if label >= self.labels() {
            return Err(Error::input(format!(
                "label {label} is not a {}-bit value",
                self.d_step
            )));
        }
        Ok(())
    }

    /// Successor map of step `t` (1-based) under `label`.
    pub fn successors(&self, t: usize, label: usize) -> Result<&[usize]> {
        self.check_step(t, label)?;
        Ok(&self.transitions[t - 1][label])
    }

    pub fn step_matrix<T: Scalar>(&self, t: usize, label: usize) -> Result<Mat<T>> {
        Ok(Mat::from_successors(self.successors(t, label)?))
    }

    fn check_segment(&self, a: usize, b: usize) -> Result<()> {
        if a > b || b > self.n {
            return Err(Error::input(format!(
                "segment {a}..{b} is not within 0..={}",
                self.n
            )));
        }
        Ok(())
    }

    /// Successor map of the walk from layer `a` to layer `b` along `r`.
    pub fn walk(&self, a: usize, b: usize, r: &BitString) -> Result<Vec<usize>> {
        self.check_segment(a, b)?;
        if r.len() != (b - a) * self.d_step {
            return Err(Error::input(format!(
                "label string has {} bits, segment {a}..{b} needs {}",
                r.len(),
                (b - a) * self.d_step
            )));
        }
        let mut state: Vec<usize> = (0..self.w).collect();
        for (i, t) in (a..b).enumerate() {
            let step = &self.transitions[t][r.chunk(i, self.d_step)];
            for s in state.iter_mut() {
                *s = step[*s];
            }
        }
        Ok(state)
    }

    pub fn walk_matrix<T: Scalar>(&self, a: usize, b: usize, r: &BitString) -> Result<Mat<T>> {
        Ok(Mat::from_successors(&self.walk(a, b, r)?))
    }

    /// Integer walk matrix, used by the hot evaluation paths.
    pub(crate) fn walk_matrix_int(&self, a: usize, b: usize, r: &BitString) -> Result<Mat<i64>> {
        Ok(Mat::from_successors(&self.walk(a, b, r)?))
    }

    /// Average of the label matrices of step `t`.
    pub fn step_average<T: Scalar>(&self, t: usize) -> Result<Mat<T>> {
        self.check_step(t, 0)?;
        let mut counts = Mat::<i64>::zeros(self.w);
        for succ in &self.transitions[t - 1] {
            for (i, &j) in succ.iter().enumerate() {
                let c = *counts.get(i, j);
                counts.set(i, j, c + 1);
            }
        }
        Ok(counts.to_dyadic(self.d_step as u32))
    }

    /// The random-walk matrix `M_{a..b}`, as the product of per-step averages.
    pub fn exact_average<T: Scalar>(&self, a: usize, b: usize) -> Result<Mat<T>> {
        self.check_segment(a, b)?;
        let mut acc = Mat::identity(self.w);
        for t in a + 1..=b {
            acc = acc.mul(&self.step_average(t)?);
        }
        Ok(acc)
    }

    /// Text form: header `robp n w d_step`, then one line of successors per
    /// (step, label) in increasing order.
    pub fn to_text(&self) -> String {
        let mut out = format!("robp {} {} {}\n", self.n, self.w, self.d_step);
        for (t, step) in self.transitions.iter().enumerate() {
            let _ = writeln!(out, "# step {}", t + 1);
            for succ in step {
                let line: Vec<String> = succ.iter().map(|s| s.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            field: 1,
            message: "missing `robp n w d_step` header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.first() != Some(&"robp") {
            return Err(Error::Parse {
                line: hline,
                field: 1,
                message: "header must start with `robp`".into(),
            });
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: hline,
                field: fields.len().min(4) + 1,
                message: "header must be `robp n w d_step`".into(),
            });
        }
        let num = |idx: usize| -> Result<usize> {
            fields[idx].parse().map_err(|_| Error::Parse {
                line: hline,
                field: idx + 1,
                message: format!("expected a non-negative integer, got {:?}", fields[idx]),
            })
        };
        let (n, w, d_step) = (num(1)?, num(2)?, num(3)?);
        if w == 0 || d_step == 0 || d_step > 20 {
            return Err(Error::Parse {
                line: hline,
                field: if w == 0 { 3 } else { 4 },
                message: "width must be >= 1 and bits per step in 1..=20".into(),
            });
        }

        let mut transitions = Vec::with_capacity(n);
        let mut last_line = hline;
        for _ in 0..n {
            let mut step = Vec::with_capacity(1 << d_step);
            for _ in 0..1usize << d_step {
                let (lno, line) = lines.next().ok_or(Error::Parse {
                    line: last_line + 1,
                    field: 1,
                    message: "unexpected end of input".into(),
                })?;
                last_line = lno;
                let succ: Vec<&str> = line.split_whitespace().collect();
                if succ.len() != w {
                    return Err(Error::Parse {
                        line: lno,
                        field: succ.len().min(w) + 1,
                        message: format!("expected {w} successors, got {}", succ.len()),
                    });
                }
                let row = succ
                    .iter()
                    .enumerate()
                    .map(|(f, s)| match s.parse::<usize>() {
                        Ok(v) if v < w => Ok(v),
                        Ok(v) => Err(Error::Parse {
                            line: lno,
                            field: f + 1,
                            message: format!("successor {v} is not below width {w}"),
                        }),
                        Err(_) => Err(Error::Parse {
                            line: lno,
                            field: f + 1,
                            message: format!("expected a state index, got {s:?}"),
                        }),
                    })
                    .collect::<Result<Vec<_>>>()?;
                step.push(row);
            }
            transitions.push(step);
        }
        if let Some((lno, _)) = lines.next() {
            return Err(Error::Parse {
                line: lno,
                field: 1,
                message: "trailing data after the last step".into(),
            });
        }
        Robp::new(n, w, d_step, transitions)
    }
}
