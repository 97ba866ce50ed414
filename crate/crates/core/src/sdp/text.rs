//! Plain-text sparse triplet format for dumping problems.
//!
//! ```text
//! m 2
//! blocks 2 1
//! c 1 0
//! logdet 2 0.5
//! eq 1 1 1.0
//! eqrhs 1 3.0
//! 1 1 1 0 1.0
//! ```
//!
//! The header gives the variable count and block sizes, then the objective.
//! Data lines are `block row col var value` (1-based; `var 0` is the
//! constant matrix), upper triangle only. Optional `logdet block weight`,
//! `eq row var value` and `eqrhs row value` lines mark log-determinant
//! blocks and equalities. `#` starts a comment.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{AffineBlock, BlockKind, SdpProblem};
use crate::error::{Error, Result};

pub fn to_triplets(problem: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "m {}", problem.dim);
    out.push_str("blocks");
    for b in &problem.blocks {
        let _ = write!(out, " {}", b.size());
    }
    out.push('\n');
    out.push('c');
    for v in problem.objective.iter() {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
    for (i, b) in problem.blocks.iter().enumerate() {
        if let BlockKind::LogDet { weight } = b.kind {
            let _ = writeln!(out, "logdet {} {weight:e}", i + 1);
        }
    }
    if let Some(eq) = &problem.equalities {
        for r in 0..eq.a.nrows() {
            for j in 0..eq.a.ncols() {
                if eq.a[(r, j)] != 0.0 {
                    let _ = writeln!(out, "eq {} {} {:e}", r + 1, j + 1, eq.a[(r, j)]);
                }
            }
            let _ = writeln!(out, "eqrhs {} {:e}", r + 1, eq.b[r]);
        }
    }
    for (i, b) in problem.blocks.iter().enumerate() {
        let mut emit = |var: usize, m: &DMatrix<f64>| {
            for r in 0..m.nrows() {
                for c in r..m.ncols() {
                    if m[(r, c)] != 0.0 {
                        let _ = writeln!(out, "{} {} {} {} {:e}", i + 1, r + 1, c + 1, var, m[(r, c)]);
                    }
                }
            }
        };
        emit(0, &b.constant);
        for (j, f) in &b.terms {
            emit(j + 1, f);
        }
    }
    out
}

fn bad(line: usize, what: &str) -> Error {
    Error::MalformedProblem(format!("line {line}: {what}"))
}

fn num<T: core::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| bad(line, what))
}

pub fn from_triplets(text: &str) -> Result<SdpProblem> {
    let mut dim: Option<usize> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut c: Option<Vec<f64>> = None;
    let mut logdet: Vec<(usize, f64)> = Vec::new();
    let mut eq: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs: Vec<(usize, f64)> = Vec::new();
    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap_or("");
        match head {
            "m" => dim = Some(num(tok.next(), ln, "variable count")?),
            "blocks" => sizes = Some(tok.map(|t| t.parse().map_err(|_| bad(ln, "block size"))).collect::<Result<_>>()?),
            "c" => c = Some(tok.map(|t| t.parse().map_err(|_| bad(ln, "objective entry"))).collect::<Result<_>>()?),
            "logdet" => logdet.push((num(tok.next(), ln, "block")?, num(tok.next(), ln, "weight")?)),
            "eq" => eq.push((num(tok.next(), ln, "row")?, num(tok.next(), ln, "var")?, num(tok.next(), ln, "value")?)),
            "eqrhs" => rhs.push((num(tok.next(), ln, "row")?, num(tok.next(), ln, "value")?)),
            _ => {
                let b: usize = num(Some(head), ln, "block index")?;
                let r: usize = num(tok.next(), ln, "row")?;
                let col: usize = num(tok.next(), ln, "col")?;
                let v: usize = num(tok.next(), ln, "var")?;
                let x: f64 = num(tok.next(), ln, "value")?;
                entries.push((b, r, col, v, x));
            }
        }
    }
    let dim = dim.ok_or_else(|| bad(0, "missing `m` header"))?;
    let sizes = sizes.ok_or_else(|| bad(0, "missing `blocks` header"))?;
    let c = c.unwrap_or_else(|| vec![0.0; dim]);
    if c.len() != dim {
        return Err(bad(0, "objective length differs from m"));
    }
    let mut consts: Vec<DMatrix<f64>> = sizes.iter().map(|k| DMatrix::zeros(*k, *k)).collect();
    let mut coeffs: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); sizes.len()];
    for (b, r, col, v, x) in entries {
        if b == 0 || b > sizes.len() {
            return Err(bad(0, "block index out of range"));
        }
        let k = sizes[b - 1];
        if r == 0 || col == 0 || r > k || col > k || v > dim {
            return Err(bad(0, "entry index out of range"));
        }
        let target = if v == 0 {
            &mut consts[b - 1]
        } else {
            let list = &mut coeffs[b - 1];
            let pos = match list.iter().position(|(j, _)| *j == v - 1) {
                Some(p) => p,
                None => {
                    list.push((v - 1, DMatrix::zeros(k, k)));
                    list.len() - 1
                }
            };
            &mut list[pos].1
        };
        target[(r - 1, col - 1)] = x;
        target[(col - 1, r - 1)] = x;
    }
    let mut blocks = Vec::with_capacity(sizes.len());
    for (i, (f0, terms)) in consts.into_iter().zip(coeffs).enumerate() {
        let mut blk = AffineBlock::new(f0, terms)?;
        if let Some((_, w)) = logdet.iter().find(|(b, _)| *b == i + 1) {
            blk.kind = BlockKind::LogDet { weight: *w };
        }
        blocks.push(blk);
    }
    let problem = SdpProblem::new(DVector::from_vec(c), blocks)?;
    if eq.is_empty() && rhs.is_empty() {
        return Ok(problem);
    }
    let rows = eq.iter().map(|e| e.0).chain(rhs.iter().map(|r| r.0)).max().unwrap_or(0);
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    for (r, j, v) in eq {
        if r == 0 || j == 0 || j > dim {
            return Err(bad(0, "equality index out of range"));
        }
        a[(r - 1, j - 1)] = v;
    }
    for (r, v) in rhs {
        if r == 0 {
            return Err(bad(0, "equality row out of range"));
        }
        b[r - 1] = v;
    }
    problem.with_equalities(a, b)
}
