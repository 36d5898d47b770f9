//! Transient distributions of finite continuous-time chains by uniformization.
//!
//! With `Λ >= max exit rate` and `P = I + Q/Λ`, the law at time `t` is
//! `Σ_k Pois(Λt; k) p0 P^k`; the series is cut once the remaining Poisson
//! mass drops below the tolerance.

use crate::error::{Result, ZrpError};

/// Poisson tail mass left out of the series.
pub const DEFAULT_TRUNCATION: f64 = 1e-12;
/// Maximum number of series terms.
pub const DEFAULT_TERM_BUDGET: usize = 5_000_000;

/// One step `p -> p P` for the out-rate lists `rows`.
fn step(rows: &[Vec<(usize, f64)>], exit: &[f64], lambda: f64, p: &[f64], out: &mut [f64]) {
    for (y, o) in out.iter_mut().enumerate() {
        *o = p[y] * (1.0 - exit[y] / lambda);
    }
    for (x, row) in rows.iter().enumerate() {
        let px = p[x];
        if px == 0.0 {
            continue;
        }
        for &(y, q) in row {
            out[y] += px * q / lambda;
        }
    }
}

/// Law at time `t` of the chain with off-diagonal out-rates `rows`, started from `p0`.
pub fn evolve(rows: &[Vec<(usize, f64)>], p0: &[f64], t: f64, tol: f64, budget: usize) -> Result<Vec<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(ZrpError::InvalidArgument(format!("time must be finite and non-negative, got {t}")));
    }
    let exit: Vec<f64> = rows.iter().map(|r| r.iter().map(|&(_, q)| q).sum()).collect();
    let lambda = exit.iter().fold(0.0f64, |m, &e| m.max(e));
    if t == 0.0 || lambda == 0.0 {
        return Ok(p0.to_vec());
    }
    let mean = lambda * t;
    let mut log_w = -mean;
    let mut cumulative = 0.0;
    let mut acc = vec![0.0; p0.len()];
    let mut cur = p0.to_vec();
    let mut next = vec![0.0; p0.len()];
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        cumulative += w;
        if w > 0.0 {
            acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += w * c);
        }
        // Only stop past the mode, where the weights decrease.
        if k as f64 > mean && 1.0 - cumulative < tol {
            break;
        }
        k += 1;
        if k > budget {
            return Err(ZrpError::TruncationBudget { budget });
        }
        step(rows, &exit, lambda, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        log_w += mean.ln() - (k as f64).ln();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_chain_closed_form() {
        // 0 -> 1 at rate a, 1 -> 0 at rate b.
        let (a, b) = (2.0, 0.5);
        let rows = vec![vec![(1, a)], vec![(0, b)]];
        for &t in &[0.0, 0.1, 1.0, 3.0, 40.0] {
            let p = evolve(&rows, &[1.0, 0.0], t, 1e-13, DEFAULT_TERM_BUDGET).unwrap();
            let exact = b / (a + b) + a / (a + b) * (-(a + b) * t).exp();
            assert!((p[0] - exact).abs() < 1e-11, "t={t}");
            assert!((p[0] + p[1] - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn long_horizons_survive_underflow() {
        let rows = vec![vec![(1, 3.0)], vec![(0, 3.0)]];
        let p = evolve(&rows, &[1.0, 0.0], 400.0, 1e-12, DEFAULT_TERM_BUDGET).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn budget_and_argument_errors() {
        let rows = vec![vec![(1, 1.0)], vec![(0, 1.0)]];
        assert!(matches!(evolve(&rows, &[1.0, 0.0], 100.0, 1e-12, 10), Err(ZrpError::TruncationBudget { budget: 10 })));
        assert!(evolve(&rows, &[1.0, 0.0], -1.0, 1e-12, 10).is_err());
    }
}
