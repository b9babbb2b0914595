//! Market maker contract (observation, action, reward), the random and
//! persistent baseline policies, and investor order generation.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::market::{LadderSnapshot, Side};

pub type MmId = usize;
pub type InvestorId = usize;

/// What one market maker sees at the start of a step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MmObservation {
    /// `(investor, signed size)` for every trade won last step, buys positive.
    pub trades_prev: Vec<(InvestorId, f64)>,
    pub inventory: f64,
    pub mid: f64,
    /// Best-level reference spread, fraction of mid.
    pub s_ref0: f64,
    /// Total one-side depth of the current book.
    pub depth: f64,
    pub market_volume_prev: f64,
    pub market_share_prev: f64,
    pub inv_pnl_prev: f64,
}

impl MmObservation {
    pub fn net_flow_prev(&self) -> f64 {
        self.trades_prev.iter().map(|&(_, v)| v).sum()
    }

    pub fn abs_volume_prev(&self) -> f64 {
        self.trades_prev.iter().map(|&(_, v)| v.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmAction {
    pub eps_b: f64,
    pub eps_s: f64,
    /// Fraction of current inventory to hedge on the exchange.
    pub x: f64,
}

impl MmAction {
    pub fn new(eps_b: f64, eps_s: f64, x: f64) -> Self {
        Self { eps_b, eps_s, x }
    }

    pub fn is_finite(&self) -> bool {
        self.eps_b.is_finite() && self.eps_s.is_finite() && self.x.is_finite()
    }

    /// Projects onto `[-1,1]^2 x [0,1]`, reporting whether anything moved.
    pub fn clamped(self) -> (Self, bool) {
        let out = Self {
            eps_b: self.eps_b.clamp(-1.0, 1.0),
            eps_s: self.eps_s.clamp(-1.0, 1.0),
            x: self.x.clamp(0.0, 1.0),
        };
        let moved = out != self;
        if moved {
            warn!("action {self:?} clamped to {out:?}");
        }
        (out, moved)
    }

    pub fn eps(&self, side: Side) -> f64 {
        match side {
            Side::Buy => self.eps_b,
            Side::Sell => self.eps_s,
        }
    }
}

/// Per-step reward components in currency. Hedge cost is stored negative so
/// `total_pnl` is a plain sum; the penalty is reported beside it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepRewards {
    pub spread_pnl: f64,
    pub hedge_cost: f64,
    pub inventory_pnl: f64,
    pub total_pnl: f64,
    pub penalty: f64,
}

impl StepRewards {
    pub fn new(spread_pnl: f64, hedge_cost: f64, inventory_pnl: f64, penalty: f64) -> Self {
        Self {
            spread_pnl,
            hedge_cost,
            inventory_pnl,
            total_pnl: spread_pnl + hedge_cost + inventory_pnl,
            penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvestorOrder {
    pub investor_id: InvestorId,
    /// Positive when the market maker buys (the investor sells).
    pub signed_size: f64,
}

impl InvestorOrder {
    /// Side of the market maker that fills this order.
    pub fn maker_side(&self) -> Side {
        if self.signed_size > 0.0 {
            Side::Buy
        } else {
            Side::Sell
        }
    }
}

/// A maker's spread curves for one step: `S_ref(v) * (1 + eps)` per side.
#[derive(Debug, Clone, Copy)]
pub struct QuotedCurves<'a> {
    pub eps_b: f64,
    pub eps_s: f64,
    ladder: &'a LadderSnapshot,
}

pub fn quote_from_eps(eps_b: f64, eps_s: f64, ladder: &LadderSnapshot) -> QuotedCurves<'_> {
    QuotedCurves {
        eps_b,
        eps_s,
        ladder,
    }
}

impl QuotedCurves<'_> {
    /// Quoted spread for a size-`v` trade on the maker's `side`, fraction of mid.
    pub fn spread(&self, side: Side, v: f64) -> f64 {
        let eps = match side {
            Side::Buy => self.eps_b,
            Side::Sell => self.eps_s,
        };
        // the maker's bid is benchmarked against the exchange bid, i.e. the
        // sell walk, and vice versa
        self.ladder.s_ref_extrapolated(side.opposite(), v) * (1.0 + eps)
    }

    pub fn buy_spread(&self, v: f64) -> f64 {
        self.spread(Side::Buy, v)
    }

    pub fn sell_spread(&self, v: f64) -> f64 {
        self.spread(Side::Sell, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomPolicy {
    pub eps_min: f64,
    pub eps_max: f64,
}

impl RandomPolicy {
    pub fn new(eps_min: f64, eps_max: f64) -> Result<Self> {
        let p = Self { eps_min, eps_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min.is_finite() && self.eps_max.is_finite()) {
            return Err(SimError::invalid("random.eps", "bounds must be finite"));
        }
        if !(-1.0 <= self.eps_min && self.eps_min <= self.eps_max && self.eps_max <= 1.0) {
            return Err(SimError::invalid(
                "random.eps",
                format!(
                    "need -1 <= eps_min <= eps_max <= 1, got [{}, {}]",
                    self.eps_min, self.eps_max
                ),
            ));
        }
        Ok(())
    }

    /// Independent uniform draws for both spreads and the hedge fraction.
    pub fn act<R: Rng + ?Sized>(&self, rng: &mut R) -> MmAction {
        let mut eps = || {
            if self.eps_min == self.eps_max {
                self.eps_min
            } else {
                rng.random_range(self.eps_min..=self.eps_max)
            }
        };
        let eps_b = eps();
        let eps_s = eps();
        let x = rng.random_range(0.0..=1.0);
        MmAction { eps_b, eps_s, x }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistentPolicy {
    pub eps_b: f64,
    pub eps_s: f64,
    pub x: f64,
}

impl PersistentPolicy {
    pub fn act(&self) -> MmAction {
        MmAction {
            eps_b: self.eps_b,
            eps_s: self.eps_s,
            x: self.x,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.act();
        if !a.is_finite() || a.clamped().1 {
            return Err(SimError::invalid(
                "persistent",
                "eps must lie in [-1,1] and x in [0,1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeDist {
    Constant { value: f64 },
    Uniform { min: f64, max: f64 },
}

impl Default for SizeDist {
    fn default() -> Self {
        SizeDist::Constant { value: 1.0 }
    }
}

impl SizeDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SizeDist::Constant { value } if value.is_finite() && value > 0.0 => Ok(()),
            SizeDist::Uniform { min, max }
                if min.is_finite() && max.is_finite() && 0.0 < min && min <= max =>
            {
                Ok(())
            }
            _ => Err(SimError::invalid(
                "investors.size",
                "sizes must be finite and > 0",
            )),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SizeDist::Constant { value } => value,
            SizeDist::Uniform { min, max } if min == max => min,
            SizeDist::Uniform { min, max } => Uniform::new_inclusive(min, max)
                .expect("validated bounds")
                .sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SizeDist::Constant { value } => value,
            SizeDist::Uniform { min, max } => 0.5 * (min + max),
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            SizeDist::Constant { value } => value,
            SizeDist::Uniform { max, .. } => max,
        }
    }
}

/// One investor's order for this step, or `None` if it does not arrive.
/// Direction is a fair coin.
pub fn investor_generate<R: Rng + ?Sized>(
    rng: &mut R,
    investor_id: InvestorId,
    arrival_prob: f64,
    size: &SizeDist,
) -> Option<InvestorOrder> {
    if arrival_prob <= 0.0 || !rng.random_bool(arrival_prob.min(1.0)) {
        return None;
    }
    let magnitude = size.sample(rng);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    Some(InvestorOrder {
        investor_id,
        signed_size: sign * magnitude,
    })
}

/// An investor who knows the next mid move trades against the maker: buys
/// from it before a rise, sells to it before a fall. A flat move is a coin flip.
pub fn toxic_investor_generate<R: Rng + ?Sized>(
    rng: &mut R,
    investor_id: InvestorId,
    next_mid_move: f64,
    size: &SizeDist,
) -> InvestorOrder {
    let magnitude = size.sample(rng);
    let rises = if next_mid_move == 0.0 {
        rng.random_bool(0.5)
    } else {
        next_mid_move > 0.0
    };
    let maker_sign = if rises { -1.0 } else { 1.0 };
    InvestorOrder {
        investor_id,
        signed_size: maker_sign * magnitude,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Level;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn book(offset: f64) -> LadderSnapshot {
        let lv = vec![Level {
            volume: 10.0,
            offset,
        }];
        LadderSnapshot::new(100.0, lv.clone(), lv).unwrap()
    }

    #[test]
    fn quote_multiplier() {
        let b = book(0.0001);
        let q = quote_from_eps(0.0, -1.0, &b);
        assert_eq!(q.buy_spread(3.0), b.s_ref(3.0).unwrap());
        assert_eq!(q.sell_spread(3.0), 0.0);
        let q = quote_from_eps(0.5, 0.0, &b);
        assert_relative_eq!(q.buy_spread(1.0), 0.00015, epsilon = 1e-18);
    }

    #[test]
    fn reward_identity() {
        let r = StepRewards::new(0.3, -0.1, 0.05, -0.02);
        assert_eq!(r.total_pnl, 0.3 + -0.1 + 0.05);
        assert_eq!(r.penalty, -0.02);
    }

    #[test]
    fn clamp_flags_changes() {
        let (a, moved) = MmAction::new(-1.5, 0.2, 1.2).clamped();
        assert!(moved);
        assert_eq!(a, MmAction::new(-1.0, 0.2, 1.0));
        let (_, moved) = MmAction::new(0.0, 0.0, 0.0).clamped();
        assert!(!moved);
    }

    #[test]
    fn random_degenerate_range() {
        let p = RandomPolicy::new(0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let a = p.act(&mut rng);
            assert_eq!((a.eps_b, a.eps_s), (0.0, 0.0));
            assert!((0.0..=1.0).contains(&a.x));
        }
    }

    #[test]
    fn random_rejects_bad_range() {
        assert!(RandomPolicy::new(0.5, 0.2).is_err());
        assert!(RandomPolicy::new(-1.5, 0.2).is_err());
        assert!(RandomPolicy::new(-0.2, 1.2).is_err());
    }

    #[test]
    fn random_eps_mean_is_centered() {
        let p = RandomPolicy::new(-1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| p.act(&mut rng).eps_b).sum::<f64>() / n as f64;
        // sd of Unif[-1,1] is 1/sqrt(3)
        let se = (1.0 / 3.0f64).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn random_hedge_fraction_is_uniform() {
        let p = RandomPolicy::new(-1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| p.act(&mut rng).x).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((hi - x).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn persistent_is_constant() {
        let p = PersistentPolicy {
            eps_b: -0.5,
            eps_s: -0.5,
            x: 0.2,
        };
        let first = p.act();
        let mut last = first;
        for _ in 0..10_000 {
            last = p.act();
        }
        assert_eq!(first.eps_b.to_bits(), last.eps_b.to_bits());
        assert_eq!(first.x.to_bits(), last.x.to_bits());
    }

    #[test]
    fn investors_fair_coin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let size = SizeDist::default();
        let buys = (0..n)
            .filter_map(|_| investor_generate(&mut rng, 0, 1.0, &size))
            .filter(|o| o.signed_size > 0.0)
            .count();
        let frac = buys as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn investor_arrival_and_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let size = SizeDist::default();
        assert!((0..1000).all(|_| investor_generate(&mut rng, 0, 0.0, &size).is_none()));
        let two = SizeDist::Constant { value: 2.0 };
        for _ in 0..1000 {
            let o = investor_generate(&mut rng, 3, 1.0, &two).unwrap();
            assert_eq!(o.signed_size.abs(), 2.0);
            assert_eq!(o.investor_id, 3);
        }
    }

    #[test]
    fn toxic_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let size = SizeDist::default();
        assert_eq!(
            toxic_investor_generate(&mut rng, 0, 0.3, &size).signed_size,
            -1.0
        );
        assert_eq!(
            toxic_investor_generate(&mut rng, 0, -0.3, &size).signed_size,
            1.0
        );
        let ups = (0..2000)
            .filter(|_| toxic_investor_generate(&mut rng, 0, 0.0, &size).signed_size > 0.0)
            .count();
        assert!((800..1200).contains(&ups));
    }
}
