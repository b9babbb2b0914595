//! Adaptive market maker.
//!
//! The agent keeps an empirical response table: for every grid value of the
//! buy and sell multipliers it tracks exponentially forgotten first and second
//! moments of the volume it won and of the spread PnL it earned, the latter in
//! units of the best-level reference spread. Each step it
//!
//! 1. picks the largest diagonal `eps` whose expected market share is within
//!    `delta_tol` of the best achievable distance to its target,
//! 2. lowers the side that offsets its inventory to the grid value minimising
//!    a mean-variance cost of spread PnL against inventory risk,
//! 3. hedges the fraction of inventory minimising book-walk cost plus the
//!    risk of the residual position after expected internalisation.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{MmAction, MmObservation};
use crate::error::{Result, SimError};
use crate::market::{LadderSnapshot, Side};

/// `-1.0, -0.9, ..., 1.0`, each point the nearest double to its decimal.
pub fn default_eps_grid() -> Vec<f64> {
    (0..21).map(|i| (i as f64 - 10.0) / 10.0).collect()
}

/// `0, 0.05, ..., 1`.
pub fn default_x_grid() -> Vec<f64> {
    (0..21).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellStats {
    pub flow_mean: f64,
    pub flow_m2: f64,
    pub spread_mean: f64,
    pub spread_m2: f64,
    pub visits: u64,
}

impl CellStats {
    pub fn flow_var(&self) -> f64 {
        (self.flow_m2 - self.flow_mean * self.flow_mean).max(0.0)
    }

    pub fn spread_var(&self) -> f64 {
        (self.spread_m2 - self.spread_mean * self.spread_mean).max(0.0)
    }

    fn observe(&mut self, beta: f64, flow: f64, spread: f64) {
        if self.visits == 0 {
            self.flow_mean = flow;
            self.flow_m2 = flow * flow;
            self.spread_mean = spread;
            self.spread_m2 = spread * spread;
        } else {
            let ema = |m: &mut f64, x: f64| *m = (1.0 - beta) * *m + beta * x;
            ema(&mut self.flow_mean, flow);
            ema(&mut self.flow_m2, flow * flow);
            ema(&mut self.spread_mean, spread);
            ema(&mut self.spread_m2, spread * spread);
        }
        self.visits += 1;
    }
}

/// Mean and variance of signed net flow, buys positive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowStats {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    grid: Vec<f64>,
    beta: f64,
    buy: Vec<CellStats>,
    sell: Vec<CellStats>,
    market_volume: f64,
    market_volume_seen: bool,
}

impl ResponseTable {
    pub fn new(grid: Vec<f64>, beta: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(SimError::invalid("adaptive.grid", "must not be empty"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::invalid(
                "adaptive.grid",
                "must be strictly ascending",
            ));
        }
        if grid.iter().any(|e| !(-1.0..=1.0).contains(e)) {
            return Err(SimError::invalid(
                "adaptive.grid",
                "values must lie in [-1, 1]",
            ));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(SimError::invalid("adaptive.beta", "must lie in (0, 1]"));
        }
        let n = grid.len();
        Ok(Self {
            grid,
            beta,
            buy: vec![CellStats::default(); n],
            sell: vec![CellStats::default(); n],
            market_volume: 0.0,
            market_volume_seen: false,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn market_volume(&self) -> f64 {
        self.market_volume
    }

    /// Index of the grid point nearest `eps`, ties to the lower point.
    pub fn snap(&self, eps: f64) -> usize {
        let mut best = 0;
        for (i, &g) in self.grid.iter().enumerate() {
            if (g - eps).abs() < (self.grid[best] - eps).abs() {
                best = i;
            }
        }
        best
    }

    fn side_cells(&self, side: Side) -> &[CellStats] {
        match side {
            Side::Buy => &self.buy,
            Side::Sell => &self.sell,
        }
    }

    /// Raw cell, without neighbour fill-in.
    pub fn cell(&self, side: Side, idx: usize) -> &CellStats {
        &self.side_cells(side)[idx]
    }

    /// Statistics used for decisions: an unvisited cell takes those of the
    /// nearest visited cell on the same side (ties to the lower `eps`), or
    /// zeros if nothing has been visited.
    pub fn stats(&self, side: Side, idx: usize) -> CellStats {
        let cells = self.side_cells(side);
        if cells[idx].visits > 0 {
            return cells[idx];
        }
        for d in 1..cells.len() {
            if idx >= d && cells[idx - d].visits > 0 {
                return cells[idx - d];
            }
            if idx + d < cells.len() && cells[idx + d].visits > 0 {
                return cells[idx + d];
            }
        }
        CellStats::default()
    }

    /// Feeds one step of outcomes. `buy_volume`/`sell_volume` are the absolute
    /// volumes won on each side and `spread_*` the spread PnL earned there,
    /// divided by the best-level reference spread in currency.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        quoted_eps_b: f64,
        quoted_eps_s: f64,
        buy_volume: f64,
        sell_volume: f64,
        spread_b: f64,
        spread_s: f64,
        market_volume: f64,
    ) {
        let ib = self.snap(quoted_eps_b);
        let is = self.snap(quoted_eps_s);
        let beta = self.beta;
        self.buy[ib].observe(beta, buy_volume, spread_b);
        self.sell[is].observe(beta, sell_volume, spread_s);
        if self.market_volume_seen {
            self.market_volume = (1.0 - beta) * self.market_volume + beta * market_volume;
        } else {
            self.market_volume = market_volume;
            self.market_volume_seen = true;
        }
    }

    /// Net signed flow expected when quoting `(eps_b, eps_s)`; the two sides
    /// are treated as independent.
    pub fn net_flow(&self, eps_b: f64, eps_s: f64) -> FlowStats {
        let b = self.stats(Side::Buy, self.snap(eps_b));
        let s = self.stats(Side::Sell, self.snap(eps_s));
        FlowStats {
            mean: b.flow_mean - s.flow_mean,
            var: b.flow_var() + s.flow_var(),
        }
    }

    /// Debug dump: `epsilon,side,flow_mean,flow_var,spread_mean,spread_var,visits`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epsilon,side,flow_mean,flow_var,spread_mean,spread_var,visits\n");
        for side in [Side::Buy, Side::Sell] {
            let name = if side == Side::Buy { "buy" } else { "sell" };
            for (i, c) in self.side_cells(side).iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    self.grid[i],
                    name,
                    c.flow_mean,
                    c.flow_var(),
                    c.spread_mean,
                    c.spread_var(),
                    c.visits
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HedgeRule {
    /// Mean-variance hedge; `risk_aversion` overrides the pricing value.
    MeanVariance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        risk_aversion: Option<f64>,
    },
    Fixed {
        x: f64,
    },
    Random,
}

impl Default for HedgeRule {
    fn default() -> Self {
        HedgeRule::MeanVariance {
            risk_aversion: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveParams {
    pub ms_target: f64,
    pub risk_aversion: f64,
    pub delta_tol: f64,
    pub warmup_steps: u64,
    /// Drop expected flow from the hedge risk term.
    pub ignore_internalization: bool,
    pub beta: f64,
    pub hedge: HedgeRule,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            ms_target: 0.5,
            risk_aversion: 0.0,
            delta_tol: 0.05,
            warmup_steps: 50,
            ignore_internalization: false,
            beta: 0.35,
            hedge: HedgeRule::default(),
        }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ms_target > 0.0 && self.ms_target < 1.0) {
            return Err(SimError::invalid(
                "adaptive.ms_target",
                "must lie in (0, 1)",
            ));
        }
        if !(self.risk_aversion.is_finite() && self.risk_aversion >= 0.0) {
            return Err(SimError::invalid("adaptive.risk_aversion", "must be >= 0"));
        }
        if !(self.delta_tol.is_finite() && self.delta_tol > 0.0) {
            return Err(SimError::invalid("adaptive.delta_tol", "must be > 0"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(SimError::invalid("adaptive.beta", "must lie in (0, 1]"));
        }
        match self.hedge {
            HedgeRule::MeanVariance {
                risk_aversion: Some(g),
            } if !(g.is_finite() && g >= 0.0) => Err(SimError::invalid(
                "adaptive.hedge.risk_aversion",
                "must be >= 0",
            )),
            HedgeRule::Fixed { x } if !(0.0..=1.0).contains(&x) => {
                Err(SimError::invalid("adaptive.hedge.x", "must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Step 1: the largest grid `eps` whose market-share miss is within
/// `delta_tol` of the smallest miss. Share is the expected absolute volume
/// won on both sides at `(eps, eps)` over the market volume.
pub fn target_market_share_eps(
    table: &ResponseTable,
    params: &AdaptiveParams,
    market_volume: f64,
) -> f64 {
    let grid = table.grid();
    if market_volume <= 0.0 {
        return *grid.last().expect("grid is non-empty");
    }
    let costs: Vec<f64> = (0..grid.len())
        .map(|i| {
            let won = table.stats(Side::Buy, i).flow_mean + table.stats(Side::Sell, i).flow_mean;
            (params.ms_target - won / market_volume).abs()
        })
        .collect();
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let limit = best + params.delta_tol + 1e-12;
    let idx = costs
        .iter()
        .rposition(|&c| c <= limit)
        .expect("minimum is always within tolerance");
    grid[idx]
}

/// Mean-variance pricing cost of one candidate on the skewed side. `spread`
/// holds that side's normalised spread statistics, `flow` the net flow at the
/// resulting quote pair, `s_ref0_cash` the best-level spread in currency.
pub fn skew_cost(
    spread_mean: f64,
    spread_var: f64,
    flow: FlowStats,
    inventory: f64,
    gamma: f64,
    s_ref0_cash: f64,
    sigma_hat: f64,
) -> f64 {
    let carried = flow.var + (inventory + flow.mean).powi(2);
    -s_ref0_cash * spread_mean
        + gamma * (s_ref0_cash * s_ref0_cash * spread_var + sigma_hat * sigma_hat * carried).sqrt()
}

/// Step 2: lower the side that offsets `inventory` (the bid when short, the
/// ask when long) to the grid value `<= eps_star` of least [`skew_cost`];
/// the other side stays at `eps_star`. Ties go to the larger `eps`.
pub fn skew_side(
    table: &ResponseTable,
    eps_star: f64,
    inventory: f64,
    gamma: f64,
    s_ref0_cash: f64,
    sigma_hat: f64,
) -> (f64, f64) {
    let side = if inventory < 0.0 {
        Side::Buy
    } else if inventory > 0.0 {
        Side::Sell
    } else {
        return (eps_star, eps_star);
    };
    let grid = table.grid();
    let mut best: Option<(f64, f64)> = None;
    for i in (0..grid.len()).rev() {
        let eps = grid[i];
        if eps > eps_star + 1e-12 {
            continue;
        }
        let (eb, es) = match side {
            Side::Buy => (eps, eps_star),
            Side::Sell => (eps_star, eps),
        };
        let s = table.stats(side, i);
        let cost = skew_cost(
            s.spread_mean,
            s.spread_var(),
            table.net_flow(eb, es),
            inventory,
            gamma,
            s_ref0_cash,
            sigma_hat,
        );
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((eps, cost));
        }
    }
    let eps = best.map_or(eps_star, |(e, _)| e);
    match side {
        Side::Buy => (eps, eps_star),
        Side::Sell => (eps_star, eps),
    }
}

/// Hedge objective for fraction `x`: walk cost of hedging `|x z|` plus the
/// risk of `z(1-x)` and the step's expected flow. `None` when the book is too
/// thin for the hedge.
pub fn hedge_cost(
    x: f64,
    inventory: f64,
    gamma: f64,
    sigma_hat: f64,
    ladder: &LadderSnapshot,
    flow: FlowStats,
    ignore_internalization: bool,
) -> Option<f64> {
    let size = (x * inventory).abs();
    // long inventory is hedged by selling into the bids
    let side = if inventory > 0.0 {
        Side::Sell
    } else {
        Side::Buy
    };
    let spread = ladder.s_ref_on(side, size).ok()?;
    let flow = if ignore_internalization {
        FlowStats::default()
    } else {
        flow
    };
    let residual = inventory * (1.0 - x) + flow.mean;
    Some(
        size * spread * ladder.mid
            + gamma * (sigma_hat * sigma_hat * (flow.var + residual * residual)).sqrt(),
    )
}

/// Grid search of [`hedge_cost`] over `x` in `0, 0.05, ..., 1`; ties to the
/// smaller fraction.
pub fn optimal_hedge_fraction(
    inventory: f64,
    gamma: f64,
    sigma_hat: f64,
    ladder: &LadderSnapshot,
    flow: FlowStats,
    ignore_internalization: bool,
) -> f64 {
    if inventory == 0.0 {
        return 0.0;
    }
    let mut best = (0.0, f64::INFINITY);
    for x in default_x_grid() {
        if let Some(c) = hedge_cost(
            x,
            inventory,
            gamma,
            sigma_hat,
            ladder,
            flow,
            ignore_internalization,
        ) {
            if c < best.1 {
                best = (x, c);
            }
        }
    }
    best.0
}

/// Diagnostics of the latest decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub warmup: bool,
    pub eps_star: f64,
    pub inventory: f64,
    pub action: MmAction,
}

#[derive(Debug, Clone)]
struct PendingQuote {
    eps_b: f64,
    eps_s: f64,
    ladder: LadderSnapshot,
}

#[derive(Debug, Clone)]
pub struct AdaptiveAgent {
    params: AdaptiveParams,
    table: ResponseTable,
    steps: u64,
    pending: Option<PendingQuote>,
    last: Option<Decision>,
}

impl AdaptiveAgent {
    pub fn new(params: AdaptiveParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            table: ResponseTable::new(default_eps_grid(), params.beta)?,
            steps: 0,
            pending: None,
            last: None,
        })
    }

    pub fn params(&self) -> &AdaptiveParams {
        &self.params
    }

    pub fn table(&self) -> &ResponseTable {
        &self.table
    }

    pub fn last_decision(&self) -> Option<&Decision> {
        self.last.as_ref()
    }

    /// Forget the in-flight quote; the next observation starts a new episode.
    /// The response table is kept.
    pub fn on_episode_start(&mut self) {
        self.pending = None;
    }

    /// Learns from last step's fills, then prices and hedges for this step.
    /// `ladder` is the book as the agent sees it; `sigma_hat` the one-step
    /// normal volatility in currency.
    pub fn decide<R: Rng + ?Sized>(
        &mut self,
        obs: &MmObservation,
        ladder: &LadderSnapshot,
        sigma_hat: f64,
        rng: &mut R,
    ) -> MmAction {
        if let Some(prev) = self.pending.take() {
            self.learn(obs, &prev);
        }

        let grid = self.table.grid();
        let z = obs.inventory;
        let warmup = self.steps < self.params.warmup_steps;
        let (eps_star, eps_b, eps_s) = if warmup {
            let eb = grid[rng.random_range(0..grid.len())];
            let es = grid[rng.random_range(0..grid.len())];
            (eb.max(es), eb, es)
        } else {
            let star =
                target_market_share_eps(&self.table, &self.params, self.table.market_volume());
            let s_ref0_cash = ladder.half_spread * ladder.mid;
            let (eb, es) = skew_side(
                &self.table,
                star,
                z,
                self.params.risk_aversion,
                s_ref0_cash,
                sigma_hat,
            );
            (star, eb, es)
        };

        let x = match self.params.hedge {
            HedgeRule::Fixed { x } => x,
            HedgeRule::Random => rng.random_range(0.0..=1.0),
            HedgeRule::MeanVariance { risk_aversion } => optimal_hedge_fraction(
                z,
                risk_aversion.unwrap_or(self.params.risk_aversion),
                sigma_hat,
                ladder,
                self.table.net_flow(eps_b, eps_s),
                self.params.ignore_internalization,
            ),
        };

        let action = MmAction { eps_b, eps_s, x };
        self.pending = Some(PendingQuote {
            eps_b,
            eps_s,
            ladder: ladder.clone(),
        });
        self.last = Some(Decision {
            warmup,
            eps_star,
            inventory: z,
            action,
        });
        self.steps += 1;
        action
    }

    fn learn(&mut self, obs: &MmObservation, prev: &PendingQuote) {
        let s_ref0 = prev.ladder.half_spread;
        let mut buy = (0.0, 0.0);
        let mut sell = (0.0, 0.0);
        for &(_, v) in &obs.trades_prev {
            let size = v.abs();
            let (acc, eps, book_side) = if v > 0.0 {
                (&mut buy, prev.eps_b, Side::Sell)
            } else {
                (&mut sell, prev.eps_s, Side::Buy)
            };
            let rel = if s_ref0 > 0.0 {
                prev.ladder.s_ref_extrapolated(book_side, size) / s_ref0
            } else {
                1.0
            };
            acc.0 += size;
            acc.1 += size * rel * (1.0 + eps);
        }
        self.table.update(
            prev.eps_b,
            prev.eps_s,
            buy.0,
            sell.0,
            buy.1,
            sell.1,
            obs.market_volume_prev,
        );
    }
}
