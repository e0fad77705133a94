//! Probability primitives: message loss, per-slot deletions and arrivals.
//!
//! Binomial and Poisson masses are evaluated in log space so that element
//! counts in the thousands neither overflow nor lose the tails.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::params::ElementSize;

/// Probability that a message of `size` elements is not decoded.
///
/// Implementations must be non-decreasing in `size` and return 0 for an
/// empty message.
pub trait LossModel {
    fn loss(&self, size: u64) -> f64;
}

/// Independent bit errors: `1 - (1 - ber)^(size · V₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitErrorLoss {
    ber: f64,
    /// `V₀ · ln(1 - ber)`, the log survival of one element.
    log_keep: f64,
}

impl BitErrorLoss {
    pub fn new(ber: f64, element_size: ElementSize) -> Result<Self> {
        if !(0.0..1.0).contains(&ber) {
            return Err(Error::domain("message loss", format!("bit error rate {ber} outside [0, 1)")));
        }
        Ok(BitErrorLoss { ber, log_keep: f64::from(element_size.bits()) * (-ber).ln_1p() })
    }

    pub fn ber(&self) -> f64 {
        self.ber
    }
}

impl LossModel for BitErrorLoss {
    fn loss(&self, size: u64) -> f64 {
        -(size as f64 * self.log_keep).exp_m1()
    }
}

/// Per-message loss probability under independent bit errors.
pub fn message_loss_prob(ber: f64, size: u64, element_size: ElementSize) -> Result<f64> {
    Ok(BitErrorLoss::new(ber, element_size)?.loss(size))
}

/// Bit error rate at which a message of `size` elements is lost with
/// probability `loss`.
pub fn ber_for_loss(loss: f64, size: u64, element_size: ElementSize) -> Result<f64> {
    if !(0.0..1.0).contains(&loss) {
        return Err(Error::domain("bit error rate", format!("loss probability {loss} outside [0, 1)")));
    }
    if size == 0 {
        return Err(Error::domain("bit error rate", "reference message size must be positive"));
    }
    let bits = size as f64 * f64::from(element_size.bits());
    Ok(-((-loss).ln_1p() / bits).exp_m1())
}

const LN_FACTORIAL_TABLE: usize = 4096;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // Neumaier-compensated running sum of ln k.
        let mut table = Vec::with_capacity(LN_FACTORIAL_TABLE);
        let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
        table.push(0.0);
        for k in 1..LN_FACTORIAL_TABLE {
            let term = (k as f64).ln();
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
            table.push(sum + comp);
        }
        table
    })
}

/// `ln(n!)`.
pub fn ln_factorial(n: u64) -> f64 {
    let table = ln_factorial_table();
    if let Some(&v) = table.get(n as usize) {
        return v;
    }
    // Stirling series for ln Γ(x), x = n + 1 > 4096.
    let x = n as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Logarithms of the per-slot deletion and survival probabilities of one
/// element with mean lifetime `1/μ`.
#[derive(Debug, Clone, Copy)]
pub struct DeletionLaw {
    ln_delete: f64,
    ln_keep: f64,
}

impl DeletionLaw {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || mu.is_nan() {
            return Err(Error::domain("deletion law", format!("mu must be positive, got {mu}")));
        }
        Ok(DeletionLaw { ln_delete: (-(-mu).exp_m1()).ln(), ln_keep: -mu })
    }

    pub fn delete_prob(&self) -> f64 {
        self.ln_delete.exp()
    }

    /// Probability of deleting exactly `d` of `r` elements.
    pub fn pmf(&self, d: u64, r: u64) -> f64 {
        if d > r {
            return 0.0;
        }
        let ln_keep_part = if r == d { 0.0 } else { (r - d) as f64 * self.ln_keep };
        let ln_del_part = if d == 0 { 0.0 } else { d as f64 * self.ln_delete };
        (ln_binomial(r, d) + ln_del_part + ln_keep_part).exp()
    }

    /// Fills `out` with the deletion law over `d = 0..=r`.
    ///
    /// The row is built by the ratio recurrence outward from the mode and
    /// renormalized, which keeps its moments accurate to a few ulps.
    pub fn row(&self, r: u64, out: &mut Vec<f64>) {
        out.clear();
        out.resize(r as usize + 1, 0.0);
        let p = self.delete_prob();
        let mode = (((r + 1) as f64 * p).floor() as u64).min(r) as usize;
        out[mode] = self.pmf(mode as u64, r);
        // p / (1 - p) = e^μ - 1
        let odds = (-self.ln_keep).exp_m1();
        let rf = r as f64;
        for d in mode..r as usize {
            out[d + 1] = out[d] * ((rf - d as f64) / (d as f64 + 1.0)) * odds;
        }
        for d in (1..=mode).rev() {
            out[d - 1] = out[d] * (d as f64 / (rf - d as f64 + 1.0)) / odds;
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|x| *x /= total);
    }
}

/// Probability of deleting `d` of `r` tracked elements in one slot.
pub fn deletion_dist(d: i64, r: i64, mu: f64) -> Result<f64> {
    if d < 0 || r < 0 || d > r {
        return Err(Error::domain("deletion distribution", format!("need 0 <= d <= r, got d={d}, r={r}")));
    }
    Ok(DeletionLaw::new(mu)?.pmf(d as u64, r as u64))
}

/// Poisson mass `λ^k e^{-λ} / k!`.
pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp()
}

/// Upper tail `P(X >= c)` of a Poisson variable.
pub fn poisson_tail(c: u64, lambda: f64) -> f64 {
    if c == 0 {
        return 1.0;
    }
    let lower: f64 = (0..c).map(|k| poisson_pmf(k, lambda)).sum();
    if lower <= 0.5 {
        1.0 - lower
    } else {
        poisson_upper_sum(c, lambda)
    }
}

/// Direct summation of `Σ_{k>=c} pmf(k)`, used when `c` is past the median.
fn poisson_upper_sum(c: u64, lambda: f64) -> f64 {
    let mut term = poisson_pmf(c, lambda);
    let mut sum = 0.0;
    let mut k = c;
    while term > 0.0 {
        sum += term;
        k += 1;
        term *= lambda / k as f64;
        if (k as f64) > lambda && term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Probability of admitting `n` new elements given `r` tracked and `d`
/// deleted this slot, with Poisson(λ) arrivals truncated at the free room
/// `R + d - r`.
pub fn addition_dist(n: i64, r: i64, d: i64, lambda: f64, capacity: i64) -> Result<f64> {
    if d < 0 || r < 0 || n < 0 || d > r || r > capacity {
        return Err(Error::domain(
            "addition distribution",
            format!("need 0 <= d <= r <= R and n >= 0, got n={n}, r={r}, d={d}, R={capacity}"),
        ));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain("addition distribution", format!("lambda must be >= 0, got {lambda}")));
    }
    let room = capacity + d - r;
    if n > room {
        return Err(Error::domain("addition distribution", format!("n={n} exceeds free room {room}")));
    }
    Ok(if n < room { poisson_pmf(n as u64, lambda) } else { poisson_tail(n as u64, lambda) })
}

/// Poisson masses and upper tails over `0..=max`, shared by every row of a
/// kernel.
#[derive(Debug, Clone)]
pub struct PoissonTable {
    pmf: Vec<f64>,
    tail: Vec<f64>,
}

impl PoissonTable {
    pub fn new(lambda: f64, max: usize) -> Self {
        let pmf: Vec<f64> = (0..=max as u64).map(|k| poisson_pmf(k, lambda)).collect();
        let mut tail = vec![0.0; max + 1];
        let mut lower = 0.0;
        let mut switch = max + 1;
        for c in 0..=max {
            if lower > 0.5 {
                switch = c;
                break;
            }
            tail[c] = 1.0 - lower;
            lower += pmf[c];
        }
        if switch <= max {
            tail[max] = poisson_upper_sum(max as u64, lambda);
            for c in (switch..max).rev() {
                tail[c] = tail[c + 1] + pmf[c];
            }
        }
        PoissonTable { pmf, tail }
    }

    pub fn pmf(&self, k: usize) -> f64 {
        self.pmf[k]
    }

    /// `P(X >= c)`.
    pub fn tail(&self, c: usize) -> f64 {
        self.tail[c]
    }

    /// Truncated arrival law into `room` free slots: interior masses for
    /// `n < room`, the tail at `n = room`.
    pub fn truncated(&self, n: usize, room: usize) -> f64 {
        match n.cmp(&room) {
            std::cmp::Ordering::Less => self.pmf[n],
            std::cmp::Ordering::Equal => self.tail[room],
            std::cmp::Ordering::Greater => 0.0,
        }
    }
}
