//! Per-step event loop, trade allocation and episode bookkeeping.
//!
//! Step order: publish the book at `P_t`, clamp actions, execute hedges,
//! allocate investor orders, advance the mid, mark inventory to market.

use std::collections::VecDeque;
use std::io::Write;

use log::{debug, info};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveAgent;
use crate::agents::{
    investor_generate, quote_from_eps, toxic_investor_generate, InvestorId, InvestorOrder,
    MmAction, MmId, MmObservation, PersistentPolicy, RandomPolicy, StepRewards,
};
use crate::analytics::{risk_penalty, PenaltySpec};
use crate::config::{PolicySpec, ScenarioConfig};
use crate::error::{Result, SimError};
use crate::market::{
    next_mid, sample_ladder, LadderSnapshot, LobModelParams, MidPriceParams, Side,
};

// Stream ids for the per-component generators derived from one seed.
const STREAM_PRICE: u64 = 1;
const STREAM_BOOK: u64 = 2;
const STREAM_INVESTORS: u64 = 3;
const STREAM_ALLOCATION: u64 = 4;
const STREAM_AGENT_BASE: u64 = 100;

pub(crate) fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub t: u64,
    pub investor_id: InvestorId,
    pub mm_id: MmId,
    pub signed_size: f64,
    /// Currency earned on the quoted spread, `|v| * S(v) * mid`.
    pub spread_earned: f64,
}

/// Routes each order to the maker with the smallest `eps` on the side that
/// fills it; ties go uniformly at random among the best. The generator is
/// drawn from only when there is a tie.
pub fn allocate_trades<R: Rng + ?Sized>(
    t: u64,
    orders: &[InvestorOrder],
    quotes: &[MmAction],
    ladder: &LadderSnapshot,
    rng: &mut R,
) -> Vec<TradeRecord> {
    assert!(
        !quotes.is_empty(),
        "allocation needs at least one quoting maker"
    );
    let mut best = Vec::with_capacity(quotes.len());
    let mut out = Vec::with_capacity(orders.len());
    for order in orders {
        let side = order.maker_side();
        let min = quotes
            .iter()
            .map(|q| q.eps(side))
            .fold(f64::INFINITY, f64::min);
        best.clear();
        best.extend((0..quotes.len()).filter(|&i| quotes[i].eps(side) == min));
        let winner = if best.len() == 1 {
            best[0]
        } else {
            best[rng.random_range(0..best.len())]
        };
        let q = quotes[winner];
        let size = order.signed_size.abs();
        let spread = quote_from_eps(q.eps_b, q.eps_s, ladder).spread(side, size);
        out.push(TradeRecord {
            t,
            investor_id: order.investor_id,
            mm_id: winner,
            signed_size: order.signed_size,
            spread_earned: size * spread * ladder.mid,
        });
    }
    out
}

/// Size-weighted share of the step's flow won by `mm_id`; 0 with no flow.
pub fn compute_market_share(trades: &[TradeRecord], mm_id: MmId) -> f64 {
    let total: f64 = trades.iter().map(|r| r.signed_size.abs()).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let won: f64 = trades
        .iter()
        .filter(|r| r.mm_id == mm_id)
        .map(|r| r.signed_size.abs())
        .sum();
    won / total
}

#[derive(Debug, Clone, Default)]
struct MakerState {
    inventory: f64,
    trades_prev: Vec<(InvestorId, f64)>,
    market_share_prev: f64,
    inv_pnl_prev: f64,
    inv_pnl_history: VecDeque<f64>,
}

/// Everything that happened to the market during one step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Global step index (0-based) of the step just executed.
    pub t: u64,
    /// Mid at which the step was quoted, `P_t`.
    pub mid: f64,
    pub next_mid: f64,
    /// Actions after clamping and hedge truncation.
    pub actions: Vec<MmAction>,
    pub clamped: Vec<bool>,
    pub rewards: Vec<StepRewards>,
    /// End-of-step inventories, before any episode reset.
    pub inventories: Vec<f64>,
    pub market_shares: Vec<f64>,
    pub orders: Vec<InvestorOrder>,
    pub trades: Vec<TradeRecord>,
    /// Observations for the next decision. On the last step of an episode
    /// these describe the terminal state, not the reset one.
    pub observations: Vec<MmObservation>,
    pub episode_end: bool,
}

/// Market state shared by all makers: mid path, book, inventories.
#[derive(Debug, Clone)]
pub struct World {
    mid_params: MidPriceParams,
    lob: LobModelParams,
    investors: crate::config::InvestorSpec,
    penalties: Vec<Option<PenaltySpec>>,
    hedge_cost_multiplier: f64,
    s_ref_scale: f64,
    episode_length: u64,
    t: u64,
    t_in_episode: u64,
    mid: f64,
    ladder: LadderSnapshot,
    market_volume_prev: f64,
    makers: Vec<MakerState>,
    price_rng: ChaCha8Rng,
    book_rng: ChaCha8Rng,
    investor_rng: ChaCha8Rng,
    alloc_rng: ChaCha8Rng,
}

impl World {
    pub fn new(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut book_rng = component_rng(seed, STREAM_BOOK);
        let mid = config.mid_price.p0;
        let ladder = sample_ladder(&config.lob, mid, &mut book_rng)?;
        Ok(Self {
            mid_params: config.mid_price,
            lob: config.lob.clone(),
            investors: config.investors.clone(),
            penalties: config.agents.iter().map(|a| a.penalty.clone()).collect(),
            hedge_cost_multiplier: config.hedge_cost_multiplier,
            s_ref_scale: config.s_ref_scale,
            episode_length: config.episode_length,
            t: 0,
            t_in_episode: 0,
            mid,
            ladder,
            market_volume_prev: 0.0,
            makers: vec![MakerState::default(); config.agents.len()],
            price_rng: component_rng(seed, STREAM_PRICE),
            book_rng,
            investor_rng: component_rng(seed, STREAM_INVESTORS),
            alloc_rng: component_rng(seed, STREAM_ALLOCATION),
        })
    }

    pub fn num_makers(&self) -> usize {
        self.makers.len()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn t_in_episode(&self) -> u64 {
        self.t_in_episode
    }

    pub fn episode_length(&self) -> u64 {
        self.episode_length
    }

    pub fn mid(&self) -> f64 {
        self.mid
    }

    pub fn inventory(&self, mm: MmId) -> f64 {
        self.makers[mm].inventory
    }

    /// Sets a maker's inventory directly; for fixtures and tests.
    pub fn set_inventory(&mut self, mm: MmId, z: f64) {
        self.makers[mm].inventory = z;
    }

    /// Replaces the current book; for fixtures and tests.
    pub fn set_ladder(&mut self, ladder: LadderSnapshot) {
        self.mid = ladder.mid;
        self.ladder = ladder;
    }

    /// The book as makers see and trade against it (after `s_ref_scale`).
    pub fn visible_ladder(&self) -> LadderSnapshot {
        if self.s_ref_scale == 1.0 {
            self.ladder.clone()
        } else {
            self.ladder.scaled(self.s_ref_scale)
        }
    }

    pub fn sigma_hat(&self) -> f64 {
        self.mid_params.sigma_hat(self.mid)
    }

    pub fn observation(&self, mm: MmId) -> MmObservation {
        let st = &self.makers[mm];
        let ladder = self.visible_ladder();
        MmObservation {
            trades_prev: st.trades_prev.clone(),
            inventory: st.inventory,
            mid: self.mid,
            s_ref0: ladder.half_spread,
            depth: ladder.min_depth(),
            market_volume_prev: self.market_volume_prev,
            market_share_prev: st.market_share_prev,
            inv_pnl_prev: st.inv_pnl_prev,
        }
    }

    pub fn step(&mut self, raw_actions: &[MmAction]) -> Result<StepOutcome> {
        let n = self.makers.len();
        if raw_actions.len() != n {
            return Err(SimError::invalid(
                "actions",
                format!("expected {n} actions, got {}", raw_actions.len()),
            ));
        }
        let mut actions = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        for a in raw_actions {
            if !a.is_finite() {
                return Err(SimError::NonFinite("action"));
            }
            let (c, moved) = a.clamped();
            actions.push(c);
            clamped.push(moved);
        }

        let t = self.t;
        let mid = self.mid;
        let ladder = self.visible_ladder();

        // Hedges. Sizes beyond the book are cut to the available depth.
        let mut hedge_cost = vec![0.0; n];
        let mut post_hedge = vec![0.0; n];
        for (i, act) in actions.iter_mut().enumerate() {
            let z = self.makers[i].inventory;
            if z == 0.0 || act.x == 0.0 {
                post_hedge[i] = z;
                continue;
            }
            let side = if z > 0.0 { Side::Sell } else { Side::Buy };
            let depth = ladder.depth(side);
            let wanted = (act.x * z).abs();
            if wanted > depth {
                let x_eff = depth / z.abs();
                info!("t={t} mm={i}: hedge {wanted} exceeds depth {depth}, truncated to x={x_eff}");
                act.x = x_eff;
            }
            let remaining = z * (1.0 - act.x);
            let size = (z - remaining).abs().min(depth);
            let cost = ladder.walk_spread_cost(side, size)?;
            hedge_cost[i] = -self.hedge_cost_multiplier * cost;
            post_hedge[i] = remaining;
        }

        // The next mid is drawn before investors act so toxic flow can see it.
        let z_draw: f64 = StandardNormal.sample(&mut self.price_rng);
        let p_next = next_mid(mid, &self.mid_params, z_draw)?;

        let inv = &self.investors;
        let mut orders = Vec::with_capacity(inv.count);
        for id in 0..inv.count {
            let order = if inv.toxic {
                Some(toxic_investor_generate(
                    &mut self.investor_rng,
                    id,
                    p_next - mid,
                    &inv.size,
                ))
            } else {
                investor_generate(&mut self.investor_rng, id, inv.arrival_prob, &inv.size)
            };
            orders.extend(order);
        }
        let trades = allocate_trades(t, &orders, &actions, &ladder, &mut self.alloc_rng);
        let volume: f64 = orders.iter().map(|o| o.signed_size.abs()).sum();

        let mut rewards = Vec::with_capacity(n);
        let mut inventories = Vec::with_capacity(n);
        let mut shares = Vec::with_capacity(n);
        for i in 0..n {
            let mut spread = 0.0;
            let mut net = 0.0;
            let mut mine = Vec::new();
            for tr in trades.iter().filter(|tr| tr.mm_id == i) {
                spread += tr.spread_earned;
                net += tr.signed_size;
                mine.push((tr.investor_id, tr.signed_size));
            }
            let z_end = post_hedge[i] + net;
            let inv_pnl = (p_next - mid) * z_end;
            let st = &mut self.makers[i];
            let penalty = match &self.penalties[i] {
                Some(spec) => {
                    st.inv_pnl_history.push_back(inv_pnl);
                    while st.inv_pnl_history.len() > spec.window.max(1) {
                        st.inv_pnl_history.pop_front();
                    }
                    risk_penalty(spec, st.inv_pnl_history.make_contiguous())
                }
                None => 0.0,
            };
            let share = compute_market_share(&trades, i);
            st.inventory = z_end;
            st.trades_prev = mine;
            st.market_share_prev = share;
            st.inv_pnl_prev = inv_pnl;
            rewards.push(StepRewards::new(spread, hedge_cost[i], inv_pnl, penalty));
            inventories.push(z_end);
            shares.push(share);
        }

        self.market_volume_prev = volume;
        self.mid = p_next;
        self.t += 1;
        self.t_in_episode += 1;
        self.ladder = sample_ladder(&self.lob, self.mid, &mut self.book_rng)?;
        let observations = (0..n).map(|i| self.observation(i)).collect();
        let episode_end = self.t_in_episode >= self.episode_length;
        if episode_end {
            debug!("episode ends at t={}", self.t);
            self.reset_episode()?;
        }

        Ok(StepOutcome {
            t,
            mid,
            next_mid: p_next,
            actions,
            clamped,
            rewards,
            inventories,
            market_shares: shares,
            orders,
            trades,
            observations,
            episode_end,
        })
    }

    /// Zeroes inventories and per-maker history and restarts the mid at `P0`.
    /// Random streams continue.
    pub fn reset_episode(&mut self) -> Result<()> {
        self.t_in_episode = 0;
        self.mid = self.mid_params.p0;
        self.market_volume_prev = 0.0;
        for st in &mut self.makers {
            *st = MakerState::default();
        }
        self.ladder = sample_ladder(&self.lob, self.mid, &mut self.book_rng)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    Random(RandomPolicy),
    Persistent(PersistentPolicy),
    Adaptive(Box<AdaptiveAgent>),
    /// Actions arrive from outside; `fallback` is used when none is given.
    External(PersistentPolicy),
}

impl Policy {
    pub fn from_spec(spec: &PolicySpec) -> Result<Self> {
        Ok(match spec {
            PolicySpec::Random { eps_min, eps_max } => {
                Policy::Random(RandomPolicy::new(*eps_min, *eps_max)?)
            }
            PolicySpec::Persistent { eps_b, eps_s, x } => {
                let p = PersistentPolicy {
                    eps_b: *eps_b,
                    eps_s: *eps_s,
                    x: *x,
                };
                p.validate()?;
                Policy::Persistent(p)
            }
            PolicySpec::Adaptive { params } => {
                Policy::Adaptive(Box::new(AdaptiveAgent::new(*params)?))
            }
            PolicySpec::External { fallback } => Policy::External(*fallback),
        })
    }
}

/// A world plus the policies driving each maker.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ScenarioConfig,
    world: World,
    policies: Vec<Policy>,
    agent_rngs: Vec<ChaCha8Rng>,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        let world = World::new(config, seed)?;
        let policies = config
            .agents
            .iter()
            .map(|a| Policy::from_spec(&a.policy))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            world,
            policies,
            agent_rngs: agent_rngs(seed, config.agents.len()),
        })
    }

    /// Restarts the market from `seed` while keeping what the policies have
    /// learned.
    pub fn reseed(&mut self, seed: u64) -> Result<()> {
        self.world = World::new(&self.config, seed)?;
        self.agent_rngs = agent_rngs(seed, self.policies.len());
        for p in &mut self.policies {
            if let Policy::Adaptive(a) = p {
                a.on_episode_start();
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    /// Runs one step. `external` supplies the action for the external slot,
    /// if there is one.
    pub fn step(&mut self, external: Option<MmAction>) -> Result<StepOutcome> {
        let ladder = self.world.visible_ladder();
        let sigma_hat = self.world.sigma_hat();
        let mut actions = Vec::with_capacity(self.policies.len());
        for (i, policy) in self.policies.iter_mut().enumerate() {
            let rng = &mut self.agent_rngs[i];
            let a = match policy {
                Policy::Random(p) => p.act(rng),
                Policy::Persistent(p) => p.act(),
                Policy::Adaptive(agent) => {
                    let obs = self.world.observation(i);
                    agent.decide(&obs, &ladder, sigma_hat, rng)
                }
                Policy::External(fallback) => external.unwrap_or_else(|| fallback.act()),
            };
            actions.push(a);
        }
        let out = self.world.step(&actions)?;
        if out.episode_end {
            for p in &mut self.policies {
                if let Policy::Adaptive(a) = p {
                    a.on_episode_start();
                }
            }
        }
        Ok(out)
    }
}

fn agent_rngs(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|i| component_rng(seed, STREAM_AGENT_BASE + i as u64))
        .collect()
}

/// One trajectory CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrajectoryRow {
    pub t: u64,
    pub mm_id: String,
    pub eps_b: f64,
    pub eps_s: f64,
    pub x: f64,
    pub inventory: f64,
    pub spread_pnl: f64,
    pub hedge_cost: f64,
    pub inventory_pnl: f64,
    pub total_pnl: f64,
    pub penalty: f64,
    pub market_share: f64,
    pub mid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub mm_ids: Vec<String>,
    /// Row-major by step, then by maker.
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn rows_for<'a>(&'a self, mm_id: &'a str) -> impl Iterator<Item = &'a TrajectoryRow> + 'a {
        self.rows.iter().filter(move |r| r.mm_id == mm_id)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: std::io::Read>(seed: u64, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        let mut mm_ids: Vec<String> = Vec::new();
        for rec in rdr.deserialize() {
            let row: TrajectoryRow = rec?;
            if !mm_ids.contains(&row.mm_id) {
                mm_ids.push(row.mm_id.clone());
            }
            rows.push(row);
        }
        Ok(Self { seed, mm_ids, rows })
    }
}

/// Runs `config.total_steps` steps from `seed`, resetting every episode.
pub fn run_episode(config: &ScenarioConfig, seed: u64) -> Result<Trajectory> {
    run_with(config, seed, |_, _| {})
}

/// As [`run_episode`], calling `inspect` after every step.
pub fn run_with<F>(config: &ScenarioConfig, seed: u64, mut inspect: F) -> Result<Trajectory>
where
    F: FnMut(&Simulation, &StepOutcome),
{
    let mut sim = Simulation::new(config, seed)?;
    let mm_ids: Vec<String> = config.agents.iter().map(|a| a.id.clone()).collect();
    let mut rows = Vec::with_capacity(config.total_steps as usize * mm_ids.len());
    for _ in 0..config.total_steps {
        let out = sim.step(None)?;
        for (i, id) in mm_ids.iter().enumerate() {
            let a = out.actions[i];
            let r = out.rewards[i];
            rows.push(TrajectoryRow {
                t: out.t,
                mm_id: id.clone(),
                eps_b: a.eps_b,
                eps_s: a.eps_s,
                x: a.x,
                inventory: out.inventories[i],
                spread_pnl: r.spread_pnl,
                hedge_cost: r.hedge_cost,
                inventory_pnl: r.inventory_pnl,
                total_pnl: r.total_pnl,
                penalty: r.penalty,
                market_share: out.market_shares[i],
                mid: out.mid,
            });
        }
        inspect(&sim, &out);
    }
    Ok(Trajectory { seed, mm_ids, rows })
}

/// Runs every seed of `config` on its own thread; results follow seed order.
pub fn run_seeds(config: &ScenarioConfig) -> Result<Vec<Trajectory>> {
    config.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_episode(config, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AgentSpec;
    use crate::market::Level;
    use approx::assert_relative_eq;

    fn persistent(id: &str, eps: f64, x: f64) -> AgentSpec {
        AgentSpec {
            id: id.into(),
            policy: PolicySpec::Persistent {
                eps_b: eps,
                eps_s: eps,
                x,
            },
            penalty: None,
        }
    }

    fn quiet_config(agents: Vec<AgentSpec>) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            agents,
            ..Default::default()
        };
        cfg.investors.count = 0;
        cfg.mid_price.sigma = 0.0;
        cfg
    }

    fn flat_ladder(mid: f64, volume: f64, offset: f64) -> LadderSnapshot {
        let lv = vec![Level { volume, offset }];
        LadderSnapshot::new(mid, lv.clone(), lv).unwrap()
    }

    #[test]
    fn quiet_market_pays_nothing() {
        let cfg = quiet_config(vec![persistent("a", 0.0, 0.0)]);
        let mut w = World::new(&cfg, 1).unwrap();
        for _ in 0..10 {
            let out = w.step(&[MmAction::new(0.0, 0.0, 0.0)]).unwrap();
            assert_eq!(out.rewards[0], StepRewards::default());
        }
    }

    #[test]
    fn inventory_marked_to_next_mid() {
        let mut cfg = quiet_config(vec![persistent("a", 0.0, 0.0)]);
        cfg.mid_price.mu = (101.0f64 / 100.0).ln();
        let mut w = World::new(&cfg, 1).unwrap();
        w.set_inventory(0, 10.0);
        let out = w.step(&[MmAction::new(0.0, 0.0, 0.0)]).unwrap();
        assert_relative_eq!(out.next_mid, 101.0, max_relative = 1e-12);
        assert_relative_eq!(out.rewards[0].inventory_pnl, 10.0, max_relative = 1e-9);
    }

    #[test]
    fn full_hedge_pays_walk_cost() {
        let cfg = quiet_config(vec![persistent("a", 0.0, 1.0)]);
        let mut w = World::new(&cfg, 1).unwrap();
        w.set_ladder(flat_ladder(100.0, 5.0, 0.0001));
        w.set_inventory(0, -4.0);
        let out = w.step(&[MmAction::new(0.0, 0.0, 1.0)]).unwrap();
        assert_relative_eq!(out.rewards[0].hedge_cost, -0.04, max_relative = 1e-12);
        assert_eq!(out.inventories[0], 0.0);
    }

    #[test]
    fn oversized_hedge_is_truncated() {
        let cfg = quiet_config(vec![persistent("a", 0.0, 1.0)]);
        let mut w = World::new(&cfg, 1).unwrap();
        w.set_ladder(flat_ladder(100.0, 5.0, 0.0001));
        w.set_inventory(0, 20.0);
        let out = w.step(&[MmAction::new(0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(out.actions[0].x, 0.25);
        assert_eq!(out.inventories[0], 15.0);
        assert_relative_eq!(out.rewards[0].hedge_cost, -0.05, max_relative = 1e-12);
    }

    #[test]
    fn strict_argmin_wins() {
        let ladder = flat_ladder(100.0, 50.0, 0.0001);
        let quotes = [MmAction::new(0.0, 0.1, 0.0), MmAction::new(0.0, 0.3, 0.0)];
        // Investor buys: the maker sells.
        let orders = [InvestorOrder {
            investor_id: 0,
            signed_size: -1.0,
        }];
        let mut rng = component_rng(0, 0);
        let tr = allocate_trades(0, &orders, &quotes, &ladder, &mut rng);
        assert_eq!(tr[0].mm_id, 0);
        assert_relative_eq!(
            tr[0].spread_earned,
            1.1 * 0.0001 * 100.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn ties_split_uniformly() {
        let ladder = flat_ladder(100.0, 50.0, 0.0001);
        let mut rng = component_rng(9, 0);
        for k in [2usize, 3] {
            let quotes = vec![MmAction::new(0.0, 0.0, 0.0); k];
            let n = 100_000;
            let orders: Vec<_> = (0..n)
                .map(|i| InvestorOrder {
                    investor_id: i,
                    signed_size: 1.0,
                })
                .collect();
            let tr = allocate_trades(0, &orders, &quotes, &ladder, &mut rng);
            let p = 1.0 / k as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            for mm in 0..k {
                let share = compute_market_share(&tr, mm);
                assert!((share - p).abs() < 3.0 * se, "k={k} mm={mm} share={share}");
            }
        }
    }

    #[test]
    fn market_share_examples() {
        let mk = |mm| TradeRecord {
            t: 0,
            investor_id: 0,
            mm_id: mm,
            signed_size: 1.0,
            spread_earned: 0.0,
        };
        let trades: Vec<_> = (0..20).map(|i| mk(if i < 5 { 0 } else { 1 })).collect();
        assert_eq!(compute_market_share(&trades, 0), 0.25);
        assert_eq!(compute_market_share(&trades[..5], 0), 1.0);
        assert_eq!(compute_market_share(&[], 0), 0.0);
    }

    #[test]
    fn episodes_reset_inventory_and_mid() {
        let mut cfg = quiet_config(vec![persistent("a", 0.0, 0.0)]);
        cfg.investors.count = 20;
        cfg.mid_price.sigma = 0.1;
        cfg.episode_length = 5;
        cfg.total_steps = 5;
        let mut w = World::new(&cfg, 3).unwrap();
        for k in 1..=5 {
            let out = w.step(&[MmAction::new(0.0, 0.0, 0.0)]).unwrap();
            assert_eq!(out.episode_end, k == 5);
        }
        assert_eq!(w.inventory(0), 0.0);
        assert_eq!(w.mid(), cfg.mid_price.p0);
        assert_eq!(w.t_in_episode(), 0);
    }

    #[test]
    fn twenty_unit_investors_trade_twenty() {
        let mut cfg = quiet_config(vec![persistent("a", 0.0, 0.0), persistent("b", 0.0, 0.0)]);
        cfg.investors.count = 20;
        let mut w = World::new(&cfg, 5).unwrap();
        for _ in 0..50 {
            let out = w.step(&[MmAction::new(0.0, 0.0, 0.0); 2]).unwrap();
            let vol: f64 = out.trades.iter().map(|t| t.signed_size.abs()).sum();
            assert_eq!(vol, 20.0);
            assert_eq!(out.market_shares.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn wrong_action_count_rejected() {
        let cfg = quiet_config(vec![persistent("a", 0.0, 0.0)]);
        let mut w = World::new(&cfg, 1).unwrap();
        assert!(w.step(&[]).is_err());
        assert!(w.step(&[MmAction::new(f64::NAN, 0.0, 0.0)]).is_err());
    }
}
