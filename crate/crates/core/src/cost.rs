//! Rebalancing costs and the cost-aware wealth transition.
//!
//! The marginal supply-demand curve prices a trade of `Δq` units at
//! `S_A·exp(k√|Δq|)` when buying and `S_B·exp(−k√|Δq|)` when selling. The
//! liquidity cost is the displacement integral `∫₀^Δq (MSDC(u) − S) du`,
//! which is nonnegative for both trade directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When the rebalancing cost leaves the portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostTiming {
    /// Paid out of cash at the trade, so the cost forgoes the period's interest.
    #[default]
    PreReturn,
    /// Paid after the period's returns accrue.
    PostReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub enabled: bool,
    /// Fraction of traded value.
    pub tc_rate: f64,
    /// Liquidity risk factor of the supply-demand curve.
    pub k: f64,
    /// Permanent impact as a fraction of the temporary peak.
    pub perm_impact_frac: f64,
    /// Relative bid-ask spread; `S_B = S_A · (1 − spread)`.
    #[serde(default)]
    pub bid_ask_spread: f64,
    #[serde(default)]
    pub timing: CostTiming,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            enabled: true,
            tc_rate: 0.003,
            k: 8e-6,
            perm_impact_frac: 2.0 / 3.0,
            bid_ask_spread: 0.0,
            timing: CostTiming::PreReturn,
        }
    }
}

impl CostModel {
    pub fn disabled() -> Self {
        CostModel {
            enabled: false,
            ..CostModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tc_rate.is_finite()
            && self.tc_rate >= 0.0
            && self.k.is_finite()
            && self.k >= 0.0
            && (0.0..=1.0).contains(&self.perm_impact_frac)
            && (0.0..1.0).contains(&self.bid_ask_spread);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "cost parameters out of range: tc_rate={}, k={}, perm_impact_frac={}, bid_ask_spread={}",
                self.tc_rate, self.k, self.perm_impact_frac, self.bid_ask_spread
            )))
        }
    }

    /// Rebalance to `step.weights` and roll wealth one period.
    ///
    /// Writes the new unit positions and post-impact prices into the output
    /// slices. Wealth at or below `floor` is replaced by `floor`.
    pub fn settle(
        &self,
        step: &Rebalance<'_>,
        floor: f64,
        positions: &mut [f64],
        post_prices: &mut [f64],
    ) -> Settlement {
        let w = step.wealth;
        let mut invested = 0.0;
        let mut turnover = 0.0;
        let mut liquidity = 0.0;
        let mut gain = 0.0;
        for i in 0..step.weights.len() {
            let s = step.prices[i];
            let q = step.weights[i] * w / s;
            invested += step.weights[i];
            positions[i] = q;
            let post = if self.enabled {
                let dq = q - step.prev_positions[i];
                turnover += dq.abs() * s;
                let s_b = s * (1.0 - self.bid_ask_spread);
                liquidity += liquidity_cost_unchecked(dq, s, s_b, self.k);
                permanent_impact(dq, s, self.k, self.perm_impact_frac)
            } else {
                s
            };
            post_prices[i] = post;
            gain += q * post * step.next_returns[i];
        }
        let cash = (1.0 - invested) * w;
        let cost = if self.enabled {
            transaction_cost(turnover, self.tc_rate) + liquidity
        } else {
            0.0
        };
        let next = match self.timing {
            CostTiming::PreReturn => w - cost + (cash - cost) * step.rf + gain,
            CostTiming::PostReturn => w + cash * step.rf + gain - cost,
        };
        let floored = !(next > floor);
        Settlement {
            wealth: if floored { floor } else { next },
            cost,
            floored,
        }
    }

    pub fn step_wealth(&self, step: &Rebalance<'_>, floor: f64) -> StepOutcome {
        let d = step.weights.len();
        let mut positions = vec![0.0; d];
        let mut post_prices = vec![0.0; d];
        let settlement = self.settle(step, floor, &mut positions, &mut post_prices);
        StepOutcome {
            wealth: settlement.wealth,
            positions,
            post_prices,
            cost: settlement.cost,
            floored: settlement.floored,
        }
    }
}

/// Inputs of one rebalance-and-hold period.
#[derive(Debug, Clone, Copy)]
pub struct Rebalance<'a> {
    pub wealth: f64,
    pub weights: &'a [f64],
    pub prices: &'a [f64],
    pub next_returns: &'a [f64],
    pub rf: f64,
    pub prev_positions: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settlement {
    pub wealth: f64,
    pub cost: f64,
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub wealth: f64,
    pub positions: Vec<f64>,
    pub post_prices: Vec<f64>,
    pub cost: f64,
    pub floored: bool,
}

/// Marginal supply-demand curve. Returns `s_a` at `Δq = 0`.
pub fn msdc_price(dq: f64, s_a: f64, s_b: f64, k: f64) -> f64 {
    if dq < 0.0 {
        s_b * (-k * (-dq).sqrt()).exp()
    } else {
        s_a * (k * dq.sqrt()).exp()
    }
}

/// Signed integral `∫₀^Δq exp(sign(u)·k·√|u|) du` of the normalised curve.
pub fn supply_curve_integral(dq: f64, k: f64) -> f64 {
    if dq == 0.0 || k == 0.0 {
        return dq;
    }
    let s = dq.signum();
    dq + s * excess_kernel(s * k * dq.abs().sqrt()) / (k * k)
}

/// Liquidity cost of changing a position by `dq` units.
pub fn liquidity_cost(dq: f64, s_a: f64, s_b: f64, k: f64) -> Result<f64> {
    if !(dq.is_finite() && s_a.is_finite() && s_b.is_finite() && k.is_finite()) {
        return Err(Error::Input("liquidity cost inputs must be finite".into()));
    }
    Ok(liquidity_cost_unchecked(dq, s_a, s_b, k))
}

fn liquidity_cost_unchecked(dq: f64, s_a: f64, s_b: f64, k: f64) -> f64 {
    if dq == 0.0 || k == 0.0 {
        return 0.0;
    }
    let (s, price) = if dq > 0.0 { (1.0, s_a) } else { (-1.0, s_b) };
    let t = s * k * dq.abs().sqrt();
    (price * s * excess_kernel(t) / (k * k)).max(0.0)
}

/// `2(t − 1)eᵗ + 2 − t²`, evaluated by its power series near zero where the
/// closed form cancels catastrophically.
fn excess_kernel(t: f64) -> f64 {
    if t.abs() > 1.0 {
        return 2.0 * (t - 1.0) * t.exp() + 2.0 - t * t;
    }
    // Σ_{n≥3} 2(n−1) tⁿ / n!
    let mut term = t * t * t / 6.0;
    let mut sum = 4.0 * term;
    let mut n = 3.0;
    loop {
        n += 1.0;
        term *= t / n;
        let add = 2.0 * (n - 1.0) * term;
        sum += add;
        if add.abs() <= 1e-17 * sum.abs() || n > 60.0 {
            break;
        }
    }
    sum
}

/// Proportional cost on traded value `Σ |Δq_i| S_i`.
pub fn transaction_cost(turnover_value: f64, tc_rate: f64) -> f64 {
    tc_rate * turnover_value
}

/// Post-trade price after a permanent shift of `frac` times the temporary peak.
pub fn permanent_impact(dq: f64, s_pre: f64, k: f64, frac: f64) -> f64 {
    if dq == 0.0 || frac == 0.0 {
        return s_pre;
    }
    s_pre + frac * (msdc_price(dq, s_pre, s_pre, k) - s_pre)
}
