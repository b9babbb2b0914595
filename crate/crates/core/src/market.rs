//! Exchange reference market: the mid-price diffusion and the synthetic
//! ten-level limit order book that every spread and hedge is priced from.
//!
//! Offsets and spreads are fractions of mid. A level at offset `o` on the ask
//! side trades at `mid * (1 + o)`, on the bid side at `mid * (1 - o)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Levels per side in a sampled ladder.
pub const LADDER_LEVELS: usize = 10;

/// Distance between consecutive levels, one basis point of mid.
pub const LEVEL_SPACING: f64 = 1e-4;

/// Trade direction. For quotes this is the market maker's side: `Buy` is the
/// bid (the maker buys from an investor). For book walks it is the direction
/// of the aggressor: `Buy` lifts the asks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    /// Sign of the inventory change for the party doing this side.
    pub fn sign(self) -> f64 {
        match self {
            Side::Buy => 1.0,
            Side::Sell => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MidPriceParams {
    pub p0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub delta: f64,
}

impl Default for MidPriceParams {
    fn default() -> Self {
        Self {
            p0: 100.0,
            mu: 0.0,
            sigma: 0.1,
            delta: 1.0,
        }
    }
}

impl MidPriceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mid_price.p0", self.p0),
            ("mid_price.mu", self.mu),
            ("mid_price.sigma", self.sigma),
            ("mid_price.delta", self.delta),
        ] {
            if !v.is_finite() {
                return Err(SimError::invalid(name, "must be finite"));
            }
        }
        if self.p0 <= 0.0 {
            return Err(SimError::invalid("mid_price.p0", "must be > 0"));
        }
        if self.sigma < 0.0 {
            return Err(SimError::invalid("mid_price.sigma", "must be >= 0"));
        }
        if self.delta <= 0.0 {
            return Err(SimError::invalid("mid_price.delta", "must be > 0"));
        }
        Ok(())
    }

    /// Normal volatility of one step in currency, `sigma * sqrt(delta) * price`.
    pub fn sigma_hat(&self, price: f64) -> f64 {
        self.sigma * self.delta.sqrt() * price
    }
}

/// One log-normal step of the mid price driven by the standard normal draw `z`.
pub fn next_mid(p_prev: f64, params: &MidPriceParams, z: f64) -> Result<f64> {
    if !p_prev.is_finite() {
        return Err(SimError::NonFinite("p_prev"));
    }
    if !z.is_finite() {
        return Err(SimError::NonFinite("z"));
    }
    if p_prev <= 0.0 {
        return Err(SimError::invalid("p_prev", "must be > 0"));
    }
    let MidPriceParams {
        mu, sigma, delta, ..
    } = *params;
    let exponent = mu * delta - 0.5 * sigma * sigma * delta + sigma * delta.sqrt() * z;
    let next = p_prev * exponent.exp();
    if !next.is_finite() || next <= 0.0 {
        return Err(SimError::NonFinite("next mid"));
    }
    Ok(next)
}

/// Quadratic depth profile `c0 + c1 n + c2 n^2` with `c0` pinned to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePoly(pub [f64; 3]);

impl ShapePoly {
    pub fn new(c1: f64, c2: f64) -> Self {
        ShapePoly([1.0, c1, c2])
    }

    pub fn eval(&self, n: usize) -> f64 {
        let n = n as f64;
        let [c0, c1, c2] = self.0;
        c0 + c1 * n + c2 * n * n
    }

    pub fn level_sum(&self) -> f64 {
        (0..LADDER_LEVELS).map(|n| self.eval(n)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LobModelParams {
    pub s0_mean: f64,
    pub s0_std: f64,
    pub s0_min: f64,
    pub s0_max: f64,
    pub lambda: f64,
    pub gamma_shape: f64,
    pub shape_pool: Vec<ShapePoly>,
}

impl Default for LobModelParams {
    fn default() -> Self {
        Self {
            s0_mean: 1e-4,
            s0_std: 5e-5,
            s0_min: 1e-5,
            s0_max: 2.5e-4,
            lambda: 2.0,
            gamma_shape: 2.0,
            shape_pool: vec![ShapePoly::new(0.1, 0.05)],
        }
    }
}

impl LobModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("lob.s0_mean", self.s0_mean),
            ("lob.s0_std", self.s0_std),
            ("lob.s0_min", self.s0_min),
            ("lob.s0_max", self.s0_max),
            ("lob.lambda", self.lambda),
            ("lob.gamma_shape", self.gamma_shape),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(SimError::invalid(name, "must be finite"));
            }
        }
        if self.s0_std < 0.0 {
            return Err(SimError::invalid("lob.s0_std", "must be >= 0"));
        }
        if self.s0_min < 0.0 || self.s0_min > self.s0_max {
            return Err(SimError::invalid(
                "lob.s0_min",
                "must satisfy 0 <= s0_min <= s0_max",
            ));
        }
        if self.lambda <= 0.0 {
            return Err(SimError::invalid("lob.lambda", "must be > 0"));
        }
        if self.gamma_shape <= 0.0 {
            return Err(SimError::invalid("lob.gamma_shape", "must be > 0"));
        }
        if self.shape_pool.is_empty() {
            return Err(SimError::Config("lob.shape_pool is empty".into()));
        }
        for (i, shape) in self.shape_pool.iter().enumerate() {
            if shape.0.iter().any(|c| !c.is_finite()) {
                return Err(SimError::invalid(
                    format!("lob.shape_pool[{i}]"),
                    "coefficients must be finite",
                ));
            }
            if shape.0[0] != 1.0 {
                return Err(SimError::invalid(
                    format!("lob.shape_pool[{i}]"),
                    "shape(0) must equal 1",
                ));
            }
            if (0..LADDER_LEVELS).any(|n| shape.eval(n) < 0.0) {
                return Err(SimError::invalid(
                    format!("lob.shape_pool[{i}]"),
                    "shape(n) must be >= 0 on levels 0..9",
                ));
            }
        }
        Ok(())
    }

    /// Expected total volume on one side of a sampled ladder.
    pub fn expected_side_depth(&self) -> f64 {
        let mean_sum: f64 = self
            .shape_pool
            .iter()
            .map(ShapePoly::level_sum)
            .sum::<f64>()
            / self.shape_pool.len() as f64;
        self.lambda * mean_sum
    }

    /// Rescales `lambda` so the expected one-side depth is at least
    /// `investor_volume + max_hedge`. Never lowers the current value.
    pub fn with_depth_for(mut self, investor_volume: f64, max_hedge: f64) -> Self {
        let target = investor_volume + max_hedge;
        let current = self.expected_side_depth();
        if current > 0.0 && current < target {
            self.lambda *= target / current;
        }
        self
    }

    pub fn clamp_spread(&self, s0: f64) -> f64 {
        s0.clamp(self.s0_min, self.s0_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub volume: f64,
    pub offset: f64,
}

/// Two-sided reference book for one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSnapshot {
    pub mid: f64,
    /// `s0 / 2`, the best-level offset.
    pub half_spread: f64,
    pub asks: Vec<Level>,
    pub bids: Vec<Level>,
}

impl LadderSnapshot {
    /// Builds a ladder from explicit levels. Offsets must be nonnegative and
    /// strictly increasing away from mid; volumes nonnegative.
    pub fn new(mid: f64, asks: Vec<Level>, bids: Vec<Level>) -> Result<Self> {
        if !(mid.is_finite() && mid > 0.0) {
            return Err(SimError::invalid("ladder.mid", "must be finite and > 0"));
        }
        for (name, levels) in [("asks", &asks), ("bids", &bids)] {
            if levels.is_empty() {
                return Err(SimError::invalid(
                    format!("ladder.{name}"),
                    "needs at least one level",
                ));
            }
            let mut prev = f64::NEG_INFINITY;
            for l in levels {
                if !(l.volume.is_finite() && l.volume >= 0.0) {
                    return Err(SimError::invalid(
                        format!("ladder.{name}"),
                        "volumes must be finite and >= 0",
                    ));
                }
                if !(l.offset.is_finite() && l.offset >= 0.0 && l.offset > prev) {
                    return Err(SimError::invalid(
                        format!("ladder.{name}"),
                        "offsets must be >= 0 and strictly increasing",
                    ));
                }
                prev = l.offset;
            }
        }
        let half_spread = asks[0].offset;
        Ok(Self {
            mid,
            half_spread,
            asks,
            bids,
        })
    }

    /// Levels an aggressor on `side` trades against.
    pub fn levels(&self, side: Side) -> &[Level] {
        match side {
            Side::Buy => &self.asks,
            Side::Sell => &self.bids,
        }
    }

    pub fn depth(&self, side: Side) -> f64 {
        self.levels(side).iter().map(|l| l.volume).sum()
    }

    /// Smaller of the two one-side depths.
    pub fn min_depth(&self) -> f64 {
        self.depth(Side::Buy).min(self.depth(Side::Sell))
    }

    pub fn level_price(&self, side: Side, level: &Level) -> f64 {
        match side {
            Side::Buy => self.mid + self.mid * level.offset,
            Side::Sell => self.mid - self.mid * level.offset,
        }
    }

    /// Cash exchanged walking `v` units through the book: paid for a buy,
    /// received for a sell. Cheapest levels fill first, the last one partially.
    pub fn walk_cost(&self, side: Side, v: f64) -> Result<f64> {
        self.check_size(side, v)?;
        let mut remaining = v;
        let mut cash = 0.0;
        for level in self.levels(side) {
            if remaining <= 0.0 {
                break;
            }
            let fill = remaining.min(level.volume);
            cash += fill * self.level_price(side, level);
            remaining -= fill;
        }
        Ok(cash)
    }

    /// Per-unit spread of a size-`v` trade as a fraction of mid. `S_ref(0)`
    /// is the best-level offset; beyond that it is the volume-weighted offset
    /// of the walked levels, equal to `(walk_cost(v)/v - mid)/mid` on the ask.
    pub fn s_ref_on(&self, side: Side, v: f64) -> Result<f64> {
        self.check_size(side, v)?;
        Ok(self.weighted_offset(side, v))
    }

    /// Cash paid beyond mid for walking `v` units: `v * S_ref(v) * mid`.
    pub fn walk_spread_cost(&self, side: Side, v: f64) -> Result<f64> {
        Ok(v * self.s_ref_on(side, v)? * self.mid)
    }

    /// Ask-side reference spread; the two sides are symmetric in sampled books.
    pub fn s_ref(&self, v: f64) -> Result<f64> {
        self.s_ref_on(Side::Buy, v)
    }

    /// Like [`Self::s_ref_on`] but sizes beyond the book are priced at the
    /// deepest offset instead of failing. Used to quote investor trades.
    pub fn s_ref_extrapolated(&self, side: Side, v: f64) -> f64 {
        let depth = self.depth(side);
        if v <= depth {
            return self.weighted_offset(side, v.max(0.0));
        }
        let deepest = self.levels(side).last().map_or(0.0, |l| l.offset);
        (self.weighted_offset(side, depth) * depth + (v - depth) * deepest) / v
    }

    fn weighted_offset(&self, side: Side, v: f64) -> f64 {
        let levels = self.levels(side);
        if v <= 0.0 {
            return levels[0].offset;
        }
        let mut remaining = v;
        let mut acc = 0.0;
        let mut touched = 0usize;
        let mut last = levels[0].offset;
        for level in levels {
            if remaining <= 0.0 {
                break;
            }
            if level.volume <= 0.0 {
                continue;
            }
            let fill = remaining.min(level.volume);
            acc += fill * level.offset;
            remaining -= fill;
            touched += 1;
            last = level.offset;
        }
        if touched <= 1 {
            // exact for walks that never leave one level
            last
        } else {
            acc / v
        }
    }

    fn check_size(&self, side: Side, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(SimError::NonFinite("trade size"));
        }
        if v < 0.0 {
            return Err(SimError::invalid("trade size", "must be >= 0"));
        }
        let available = self.depth(side);
        if v > available {
            return Err(SimError::DepthExhausted {
                requested: v,
                available,
            });
        }
        Ok(())
    }

    /// Same book with every offset multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let scale = |levels: &[Level]| {
            levels
                .iter()
                .map(|l| Level {
                    volume: l.volume,
                    offset: l.offset * k,
                })
                .collect::<Vec<_>>()
        };
        Self {
            mid: self.mid,
            half_spread: self.half_spread * k,
            asks: scale(&self.asks),
            bids: scale(&self.bids),
        }
    }
}

/// Draws one timestep's book around `mid`: a clamped normal `s0`, one Gamma
/// best-level volume and one shape from the pool, shared by both sides.
pub fn sample_ladder<R: Rng + ?Sized>(
    params: &LobModelParams,
    mid: f64,
    rng: &mut R,
) -> Result<LadderSnapshot> {
    if params.shape_pool.is_empty() {
        return Err(SimError::Config("lob.shape_pool is empty".into()));
    }
    let spread_dist = Normal::new(params.s0_mean, params.s0_std)
        .map_err(|e| SimError::invalid("lob.s0_std", e.to_string()))?;
    let v0_dist = Gamma::new(params.gamma_shape, 1.0 / params.gamma_shape)
        .map_err(|e| SimError::invalid("lob.gamma_shape", e.to_string()))?;

    let s0 = params.clamp_spread(spread_dist.sample(rng));
    let v0 = v0_dist.sample(rng);
    let shape = params.shape_pool[rng.random_range(0..params.shape_pool.len())];

    let levels: Vec<Level> = (0..LADDER_LEVELS)
        .map(|n| Level {
            volume: (params.lambda * v0 * shape.eval(n)).max(0.0),
            offset: s0 / 2.0 + n as f64 * LEVEL_SPACING,
        })
        .collect();

    Ok(LadderSnapshot {
        mid,
        half_spread: s0 / 2.0,
        asks: levels.clone(),
        bids: levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_level_book() -> LadderSnapshot {
        let lv = vec![
            Level {
                volume: 5.0,
                offset: 0.01,
            },
            Level {
                volume: 5.0,
                offset: 0.02,
            },
        ];
        LadderSnapshot::new(100.0, lv.clone(), lv).unwrap()
    }

    #[test]
    fn flat_gbm_is_a_fixed_point() {
        let p = MidPriceParams {
            p0: 100.0,
            mu: 0.0,
            sigma: 0.0,
            delta: 1.0,
        };
        for z in [-3.0, 0.0, 2.5] {
            assert_eq!(next_mid(100.0, &p, z).unwrap(), 100.0);
        }
    }

    #[test]
    fn gbm_step_closed_form() {
        let p = MidPriceParams {
            p0: 100.0,
            mu: 0.0,
            sigma: 0.1,
            delta: 1.0,
        };
        let expected = 100.0 * (-0.005f64 + 0.1).exp();
        assert_relative_eq!(next_mid(100.0, &p, 1.0).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 109.966, epsilon = 1e-3);
    }

    #[test]
    fn gbm_rejects_bad_inputs() {
        let p = MidPriceParams::default();
        assert!(next_mid(f64::NAN, &p, 0.0).is_err());
        assert!(next_mid(100.0, &p, f64::INFINITY).is_err());
        assert!(next_mid(-1.0, &p, 0.0).is_err());
    }

    #[test]
    fn gbm_mean_matches_drift() {
        let p = MidPriceParams {
            p0: 100.0,
            mu: 0.2,
            sigma: 0.1,
            delta: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let x = next_mid(100.0, &p, z).unwrap();
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 100.0 * 0.2f64.exp()).abs() < 4.0 * se);
    }

    #[test]
    fn spread_clamps_to_bounds() {
        let p = LobModelParams::default();
        assert_eq!(p.clamp_spread(0.0004), 0.00025);
        assert_eq!(p.clamp_spread(-0.001), 0.00001);
        assert_eq!(p.clamp_spread(0.0001), 0.0001);
    }

    #[test]
    fn flat_shape_gives_flat_book() {
        let p = LobModelParams {
            lambda: 1.0,
            gamma_shape: 1e9,
            shape_pool: vec![ShapePoly::new(0.0, 0.0)],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let book = sample_ladder(&p, 100.0, &mut rng).unwrap();
        for l in &book.asks {
            assert_relative_eq!(l.volume, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn shape_poly_level_volume() {
        // lambda * v0 * shape(3) = 2 * 0.5 * (1 + 0.3 + 0.45)
        let shape = ShapePoly::new(0.1, 0.05);
        assert_relative_eq!(2.0 * 0.5 * shape.eval(3), 1.75, epsilon = 1e-12);
    }

    #[test]
    fn empty_shape_pool_is_config_error() {
        let p = LobModelParams {
            shape_pool: vec![],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_ladder(&p, 100.0, &mut rng),
            Err(SimError::Config(_))
        ));
        assert!(p.validate().is_err());
    }

    #[test]
    fn negative_shape_rejected() {
        let p = LobModelParams {
            shape_pool: vec![ShapePoly::new(-0.5, 0.0)],
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn sampled_book_layout() {
        let p = LobModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let b = sample_ladder(&p, 100.0, &mut rng).unwrap();
            assert_eq!(b.asks.len(), LADDER_LEVELS);
            assert_eq!(b.asks, b.bids);
            let s0 = 2.0 * b.half_spread;
            assert!(s0 >= p.s0_min && s0 <= p.s0_max);
            for (n, l) in b.asks.iter().enumerate() {
                assert_relative_eq!(l.offset, b.half_spread + n as f64 * 1e-4, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn walk_cost_examples() {
        let b = two_level_book();
        assert_eq!(b.walk_cost(Side::Buy, 0.0).unwrap(), 0.0);
        assert_eq!(b.walk_cost(Side::Buy, 3.0).unwrap(), 303.0);
        assert_eq!(
            b.walk_cost(Side::Buy, 7.0).unwrap(),
            5.0 * 101.0 + 2.0 * 102.0
        );
        assert_eq!(
            b.walk_cost(Side::Sell, 7.0).unwrap(),
            5.0 * 99.0 + 2.0 * 98.0
        );
    }

    #[test]
    fn walk_past_depth_names_available() {
        let b = two_level_book();
        match b.walk_cost(Side::Buy, 10.5) {
            Err(SimError::DepthExhausted { available, .. }) => assert_eq!(available, 10.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(b.s_ref(11.0).is_err());
        // the full book is walkable
        assert_eq!(b.walk_cost(Side::Buy, 10.0).unwrap(), 505.0 + 510.0);
    }

    #[test]
    fn s_ref_examples() {
        let b = two_level_book();
        assert_eq!(b.s_ref(0.0).unwrap(), 0.01);
        assert_eq!(b.s_ref(3.0).unwrap(), 0.01);
        assert_eq!(b.s_ref(5.0).unwrap(), 0.01);
        // (5 * 0.01 + 2 * 0.02) / 7
        assert_relative_eq!(b.s_ref(7.0).unwrap(), 0.09 / 7.0, epsilon = 1e-15);
        let via_cost = (b.walk_cost(Side::Buy, 7.0).unwrap() / 7.0 - 100.0) / 100.0;
        assert_relative_eq!(b.s_ref(7.0).unwrap(), via_cost, epsilon = 1e-12);
    }

    #[test]
    fn extrapolated_spread_continues_past_depth() {
        let b = two_level_book();
        assert_eq!(b.s_ref_extrapolated(Side::Buy, 3.0), 0.01);
        assert_relative_eq!(
            b.s_ref_extrapolated(Side::Buy, 20.0),
            (5.0 * 0.01 + 15.0 * 0.02) / 20.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn depth_helper_never_shrinks() {
        let p = LobModelParams::default();
        let d = p.expected_side_depth();
        assert_relative_eq!(d, 2.0 * 28.75, epsilon = 1e-12);
        let grown = p.clone().with_depth_for(20.0, 100.0);
        assert_relative_eq!(grown.expected_side_depth(), 120.0, epsilon = 1e-9);
        assert_eq!(p.clone().with_depth_for(1.0, 1.0), p);
    }
}
