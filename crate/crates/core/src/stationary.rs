//! Occupancy Markov chain of the tracked-element count and its stationary law.
//!
//! One slot moves the count `r` to `r - d + n`: first `d ~ Binomial(r, 1 - e^{-μ})`
//! elements expire, then `n` Poisson(λ) arrivals are admitted into the
//! `R - (r - d)` free places, the excess being dropped.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::ScenarioParams;
use crate::prob::{DeletionLaw, PoissonTable};

/// Chains with at most this many states are solved by direct elimination.
pub const DIRECT_SOLVE_LIMIT: usize = 2001;

/// Stationary masses below this are flushed to zero.
pub const FLUSH_BELOW: f64 = 1e-300;

/// Per-slot deletion and arrival laws of one scenario, shared by the kernel
/// and by the message-size distributions.
#[derive(Debug, Clone)]
pub(crate) struct SlotLaw {
    capacity: usize,
    lambda: f64,
    deletion: DeletionLaw,
    arrivals: PoissonTable,
}

impl SlotLaw {
    pub(crate) fn new(scenario: &ScenarioParams) -> Result<Self> {
        scenario.validate()?;
        Ok(SlotLaw {
            capacity: scenario.capacity,
            lambda: scenario.lambda,
            deletion: DeletionLaw::new(scenario.mu)?,
            arrivals: PoissonTable::new(scenario.lambda, scenario.capacity),
        })
    }

    /// Calls `f(d, n, p)` for every `(deletions, admissions)` outcome of a
    /// slot starting from `r` elements whose probability is not zero.
    pub(crate) fn visit(&self, r: usize, scratch: &mut Vec<f64>, mut f: impl FnMut(usize, usize, f64)) {
        self.deletion.row(r as u64, scratch);
        for (d, &pd) in scratch.iter().enumerate() {
            if pd == 0.0 {
                continue;
            }
            let room = self.capacity - r + d;
            if room == 0 {
                f(d, 0, pd);
                continue;
            }
            for n in 0..room {
                let pn = self.arrivals.pmf(n);
                if pn == 0.0 {
                    if n as f64 > self.lambda {
                        break;
                    }
                    continue;
                }
                f(d, n, pd * pn);
            }
            let tail = self.arrivals.tail(room);
            if tail > 0.0 {
                f(d, room, pd * tail);
            }
        }
    }
}

/// Dense row-stochastic one-slot transition matrix over `0..=R`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    size: usize,
    data: Vec<f64>,
}

impl TransitionKernel {
    /// Wraps a dense row-major matrix, checking it is row-stochastic.
    pub fn from_dense(size: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 || data.len() != size * size {
            return Err(Error::param("kernel", format!("expected {size}x{size} entries, got {}", data.len())));
        }
        let kernel = TransitionKernel { size, data };
        if let Some(e) = kernel.data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::param("kernel", format!("entry {e} outside [0, 1]")));
        }
        if let Some((r, s)) = kernel.row_sums().enumerate().find(|(_, s)| (s - 1.0).abs() > 1e-10) {
            return Err(Error::param("kernel", format!("row {r} sums to {s}")));
        }
        Ok(kernel)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.size..(from + 1) * self.size]
    }

    pub fn row_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.chunks(self.size).map(|row| row.iter().sum())
    }

    /// `π P`.
    pub fn apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (r, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(self.row(r)) {
                *o += w * p;
            }
        }
        out
    }

    /// `‖π P − π‖_∞`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        self.apply(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, |m, x| if x > m || x.is_nan() { x } else { m })
    }
}

/// Builds the one-slot kernel of the occupancy chain.
pub fn build_kernel(scenario: &ScenarioParams) -> Result<TransitionKernel> {
    let law = SlotLaw::new(scenario)?;
    let size = scenario.capacity + 1;
    let mut data = vec![0.0; size * size];
    data.par_chunks_mut(size).enumerate().for_each_init(Vec::new, |scratch, (r, row)| {
        law.visit(r, scratch, |d, n, p| row[r - d + n] += p);
    });
    Ok(TransitionKernel { size, data })
}

/// Stationary law `π_0..π_R` of the occupancy chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pi: Vec<f64>,
}

impl StationaryDistribution {
    /// Wraps a probability vector, checking non-negativity and unit mass.
    pub fn from_vec(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::param("pi", "empty distribution"));
        }
        if pi.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::param("pi", "negative or NaN mass"));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::param("pi", format!("masses sum to {total}")));
        }
        Ok(StationaryDistribution { pi })
    }

    /// All mass on `state`, over `0..size`.
    pub fn point_mass(size: usize, state: usize) -> Self {
        assert!(state < size, "state {state} outside 0..{size}");
        let mut pi = vec![0.0; size];
        pi[state] = 1.0;
        StationaryDistribution { pi }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.pi
    }

    /// Largest state, `R`.
    pub fn capacity(&self) -> usize {
        self.pi.len() - 1
    }

    /// Writes `r,pi_r` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,pi_r")?;
        for (r, p) in self.pi.iter().enumerate() {
            writeln!(out, "{r},{}", crate::fmt::sig(*p))?;
        }
        Ok(())
    }

    fn normalized(mut pi: Vec<f64>) -> Result<Self> {
        let total: f64 = pi.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain("stationary solve", format!("degenerate solution with total mass {total}")));
        }
        for p in &mut pi {
            *p /= total;
            if *p < FLUSH_BELOW {
                *p = 0.0;
            }
        }
        Ok(StationaryDistribution { pi })
    }
}

/// Solves the kernel: direct elimination up to [`DIRECT_SOLVE_LIMIT`] states,
/// power iteration beyond.
pub fn solve_stationary(kernel: &TransitionKernel) -> Result<StationaryDistribution> {
    if kernel.size() <= DIRECT_SOLVE_LIMIT {
        solve_direct(kernel)
    } else {
        solve_power(kernel, &PowerOptions::default())
    }
}

/// Direct solve of `π (P − I) = 0`, `Σ π = 1` by Grassmann–Taksar–Heyman
/// elimination, which uses no subtractions and so keeps every mass
/// non-negative.
pub fn solve_direct(kernel: &TransitionKernel) -> Result<StationaryDistribution> {
    let n = kernel.size();
    let mut a = kernel.data.clone();
    for k in (1..n).rev() {
        let (upper, lower) = a.split_at_mut(k * n);
        let row_k = &lower[..k];
        let s: f64 = row_k.iter().sum();
        if !(s > 0.0) {
            return Err(Error::domain("stationary solve", format!("state {k} cannot move downward; chain is not solvable by elimination")));
        }
        for i in 0..k {
            let row_i = &mut upper[i * n..i * n + n];
            row_i[k] /= s;
            let f = row_i[k];
            if f == 0.0 {
                continue;
            }
            for (x, &y) in row_i[..k].iter_mut().zip(row_k) {
                *x += f * y;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for j in 1..n {
        pi[j] = (0..j).map(|i| pi[i] * a[i * n + j]).sum();
        // Unnormalized ratios π_j / π_0 can exceed the f64 range.
        if pi[j] > 1e150 {
            let scale = pi[j].recip();
            pi[..=j].iter_mut().for_each(|p| *p *= scale);
        }
    }
    StationaryDistribution::normalized(pi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    /// Stop once successive iterates differ by less than this in max norm.
    pub tolerance: f64,
    pub max_iterations: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions { tolerance: 1e-10, max_iterations: 1_000_000 }
    }
}

/// Power iteration from the uniform law.
pub fn solve_power(kernel: &TransitionKernel, options: &PowerOptions) -> Result<StationaryDistribution> {
    let n = kernel.size();
    let mut pi = vec![1.0 / n as f64; n];
    let mut change = f64::INFINITY;
    for _ in 0..options.max_iterations {
        let mut next = kernel.apply(&pi);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= total);
        change = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if change < options.tolerance {
            return StationaryDistribution::normalized(pi);
        }
    }
    Err(Error::Convergence { iterations: options.max_iterations, residual: change })
}

/// Stationary law of a scenario's occupancy chain.
pub fn stationary(scenario: &ScenarioParams) -> Result<StationaryDistribution> {
    solve_stationary(&build_kernel(scenario)?)
}

/// Mean admissions and mean deletions per slot under `pi`; equal at the
/// fixed point.
pub fn drift_balance(scenario: &ScenarioParams, pi: &StationaryDistribution) -> Result<(f64, f64)> {
    let law = SlotLaw::new(scenario)?;
    let mut scratch = Vec::new();
    let (mut adds, mut dels) = (0.0, 0.0);
    for (r, &w) in pi.probabilities().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        law.visit(r, &mut scratch, |d, n, p| {
            adds += w * p * n as f64;
            dels += w * p * d as f64;
        });
    }
    Ok((adds, dels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ElementSize;
    use crate::prob::{addition_dist, deletion_dist};
    use proptest::prelude::*;

    fn scenario(lambda: f64, mu: f64, capacity: usize) -> ScenarioParams {
        ScenarioParams {
            lambda,
            mu,
            capacity,
            element_size: ElementSize::from_bits(8).unwrap(),
            gamma: 0.0,
            neighbors: vec![0.0],
            p_thresh: 0.9,
        }
    }

    /// Independent oracle: enumerate every `(d, n)` pair through the public
    /// single-point laws.
    fn enumerated_kernel(s: &ScenarioParams) -> Vec<Vec<f64>> {
        let cap = s.capacity as i64;
        let mut k = vec![vec![0.0; s.capacity + 1]; s.capacity + 1];
        for r in 0..=cap {
            for d in 0..=r {
                for n in 0..=(cap + d - r) {
                    let p = deletion_dist(d, r, s.mu).unwrap() * addition_dist(n, r, d, s.lambda, cap).unwrap();
                    k[r as usize][(r - d + n) as usize] += p;
                }
            }
        }
        k
    }

    #[test]
    fn kernel_matches_enumeration() {
        let s = scenario(1.0, 0.5, 2);
        let kernel = build_kernel(&s).unwrap();
        let oracle = enumerated_kernel(&s);
        for r in 0..3 {
            for c in 0..3 {
                assert!((kernel.get(r, c) - oracle[r][c]).abs() < 1e-15, "[{r}][{c}]");
            }
        }
        // Hand check of one entry: from r=0 nothing dies, and two or more
        // arrivals fill both places.
        let e = (-1.0_f64).exp();
        assert!((kernel.get(0, 2) - (1.0 - 2.0 * e)).abs() < 1e-15);
    }

    #[test]
    fn no_arrivals_is_pure_death() {
        let s = scenario(0.0, 0.05, 12);
        let kernel = build_kernel(&s).unwrap();
        assert_eq!(kernel.get(0, 0), 1.0);
        for r in 0..=12 {
            for c in r + 1..=12 {
                assert_eq!(kernel.get(r, c), 0.0);
            }
        }
        let pi = solve_stationary(&kernel).unwrap();
        assert_eq!(pi.probabilities()[0], 1.0);
        assert!(pi.probabilities()[1..].iter().all(|p| *p == 0.0));
    }

    #[test]
    fn certain_death_empties_the_store() {
        let s = scenario(0.0, 60.0, 8);
        let kernel = build_kernel(&s).unwrap();
        for r in 0..=8 {
            assert!((kernel.get(r, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_stochastic_at_full_scale() {
        let s = scenario(15.0, 0.01, 1000);
        let kernel = build_kernel(&s).unwrap();
        for (r, sum) in kernel.row_sums().enumerate() {
            assert!((sum - 1.0).abs() < 1e-10, "row {r}: {sum}");
        }
        let pi = solve_stationary(&kernel).unwrap();
        assert!(kernel.residual(pi.probabilities()) < 1e-8);
        let (adds, dels) = drift_balance(&s, &pi).unwrap();
        assert!((adds - dels).abs() < 1e-8, "{adds} vs {dels}");
    }

    #[test]
    fn direct_and_power_agree() {
        let s = scenario(1.3, 0.2, 20);
        let kernel = build_kernel(&s).unwrap();
        let direct = solve_direct(&kernel).unwrap();
        let power = solve_power(&kernel, &PowerOptions { tolerance: 1e-14, max_iterations: 100_000 }).unwrap();
        for (a, b) in direct.probabilities().iter().zip(power.probabilities()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn power_iteration_reports_non_convergence() {
        let s = scenario(1.0, 0.001, 30);
        let kernel = build_kernel(&s).unwrap();
        let err = solve_power(&kernel, &PowerOptions { tolerance: 1e-14, max_iterations: 3 }).unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 3, .. }));
    }

    #[test]
    fn from_dense_rejects_non_stochastic() {
        assert!(TransitionKernel::from_dense(2, vec![0.5, 0.5, 0.2, 0.7]).is_err());
        assert!(TransitionKernel::from_dense(2, vec![0.5, 0.5, 0.3, 0.7]).is_ok());
    }

    #[test]
    fn csv_dump() {
        let pi = StationaryDistribution::point_mass(3, 1);
        let mut buf = Vec::new();
        pi.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "r,pi_r\n0,0\n1,1\n2,0\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn higher_load_dominates(mu in 0.02..0.5f64, cap in 2usize..40, l1 in 0.05..3.0f64, dl in 0.05..3.0f64) {
            let lo = stationary(&scenario(l1 * mu * cap as f64, mu, cap)).unwrap();
            let hi = stationary(&scenario((l1 + dl) * mu * cap as f64, mu, cap)).unwrap();
            // First-order stochastic dominance: upper tails of `hi` are larger.
            let (mut tail_lo, mut tail_hi) = (0.0, 0.0);
            for r in (0..=cap).rev() {
                tail_lo += lo.probabilities()[r];
                tail_hi += hi.probabilities()[r];
                prop_assert!(tail_hi >= tail_lo - 1e-12, "r={} {} < {}", r, tail_hi, tail_lo);
            }
        }

        #[test]
        fn fixed_point_and_balance(lambda in 0.01..20.0f64, mu in 0.01..1.0f64, cap in 1usize..60) {
            let s = scenario(lambda, mu, cap);
            let kernel = build_kernel(&s).unwrap();
            for sum in kernel.row_sums() {
                prop_assert!((sum - 1.0).abs() < 1e-10);
            }
            for r in 0..=cap {
                prop_assert!(kernel.get(r, r) > 0.0);
            }
            let pi = solve_stationary(&kernel).unwrap();
            prop_assert!(kernel.residual(pi.probabilities()) < 1e-8);
            let (adds, dels) = drift_balance(&s, &pi).unwrap();
            prop_assert!((adds - dels).abs() < 1e-8);
        }
    }
}
