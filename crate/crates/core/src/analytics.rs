//! Optimal pricing against a known competitor distribution, risk penalties
//! and PnL summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::SizeDist;
use crate::engine::Trajectory;
use crate::error::{Result, SimError};

/// Distribution of the competitor's `eps` on one side.
#[derive(Debug, Clone, PartialEq)]
pub enum CompetitorCdf {
    Uniform {
        a: f64,
        b: f64,
    },
    /// Sorted sample.
    Empirical(Vec<f64>),
}

impl CompetitorCdf {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(SimError::NonFinite("competitor bounds"));
        }
        if a < -1.0 {
            return Err(SimError::invalid("a", "must be >= -1"));
        }
        if a > b {
            return Err(SimError::invalid("a", "must be <= b"));
        }
        Ok(Self::Uniform { a, b })
    }

    pub fn empirical(mut sample: Vec<f64>) -> Result<Self> {
        if sample.is_empty() {
            return Err(SimError::invalid("sample", "must be nonempty"));
        }
        if sample.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFinite("competitor sample"));
        }
        sample.sort_by(f64::total_cmp);
        Ok(Self::Empirical(sample))
    }

    /// `P[X <= x]`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Uniform { a, b } => {
                if x < *a {
                    0.0
                } else if x >= *b {
                    1.0
                } else {
                    (x - a) / (b - a)
                }
            }
            Self::Empirical(s) => s.partition_point(|&v| v <= x) as f64 / s.len() as f64,
        }
    }

    /// `P[X < x]`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            Self::Uniform { a, b } if a == b => {
                if x > *a {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { .. } => self.cdf(x),
            Self::Empirical(s) => s.partition_point(|&v| v < x) as f64 / s.len() as f64,
        }
    }

    pub fn point_mass(&self, x: f64) -> f64 {
        self.cdf(x) - self.cdf_left(x)
    }

    /// Inverse CDF for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Uniform { a, b } => a + (b - a) * u,
            Self::Empirical(s) => {
                let i = ((u * s.len() as f64) as usize).min(s.len() - 1);
                s[i]
            }
        }
    }

    fn support_points(&self) -> &[f64] {
        match self {
            Self::Uniform { .. } => &[],
            Self::Empirical(s) => s,
        }
    }
}

/// Expected spread PnL of quoting `eps` on one side, up to the flow scale:
/// `(1 + eps) * (1 - F(eps) + p * Fhat(eps))`.
pub fn win_objective(cdf: &CompetitorCdf, p: f64, eps: f64) -> f64 {
    (1.0 + eps) * (1.0 - cdf.cdf(eps) + p * cdf.point_mass(eps))
}

/// Closed-form optimum against `Unif[a, b]`: `max(a, (b - 1) / 2)`.
pub fn optimal_eps_uniform(a: f64, b: f64) -> Result<f64> {
    CompetitorCdf::uniform(a, b)?;
    Ok(a.max((b - 1.0) / 2.0))
}

/// `eps` grid on `[-1, 1]` with step 0.01.
pub fn theorem_grid() -> Vec<f64> {
    (-100..=100).map(|i| i as f64 / 100.0).collect()
}

/// Argmax of [`win_objective`] over `grid` plus every sample point of an
/// empirical distribution. Ties go to the largest `eps`.
pub fn optimal_eps_empirical(cdf: &CompetitorCdf, p: f64, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(SimError::invalid("grid", "must be nonempty"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(SimError::invalid("p", "must lie in [0, 1]"));
    }
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &eps in grid.iter().chain(cdf.support_points()) {
        if eps < -1.0 {
            continue;
        }
        let h = win_objective(cdf, p, eps);
        if h > best.0 || (h == best.0 && eps > best.1) {
            best = (h, eps);
        }
    }
    if best.1 == f64::NEG_INFINITY {
        return Err(SimError::invalid("grid", "no point >= -1"));
    }
    Ok(best.1)
}

/// Investor flow seen by the single maker in the Monte-Carlo oracle: every
/// trade is quoted at a flat reference spread worth `unit_spread_cash` per
/// unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub n_investors: usize,
    pub arrival_prob: f64,
    pub size: SizeDist,
    pub unit_spread_cash: f64,
}

impl Default for FlowModel {
    fn default() -> Self {
        Self {
            n_investors: 20,
            arrival_prob: 1.0,
            size: SizeDist::Constant { value: 1.0 },
            unit_spread_cash: 0.01,
        }
    }
}

/// Monte-Carlo estimate of expected spread PnL against a competitor quoting
/// both sides i.i.d. from `competitor`, with ties won with probability `p`.
///
/// Competitor quotes are stratified over the draws, and every `eps` is scored
/// against the same draws. Flow is independent of the competitor's quotes, so
/// each side's estimate is the simulated mean flow weight times the
/// stratified win frequency.
#[derive(Debug, Clone)]
pub struct SpreadPnlOracle {
    comp_b: Vec<f64>,
    comp_s: Vec<f64>,
    /// Mean cash weight of flow filled on the buy side, and the part of it
    /// that a tie would win.
    flow_b: (f64, f64),
    flow_s: (f64, f64),
}

impl SpreadPnlOracle {
    pub fn new<R: Rng + ?Sized>(
        competitor: &CompetitorCdf,
        flow: &FlowModel,
        p: f64,
        n_draws: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_draws == 0 {
            return Err(SimError::invalid("n_draws", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::invalid("p", "must lie in [0, 1]"));
        }
        flow.size.validate()?;
        let n = n_draws as f64;
        let stratified = |rng: &mut R| {
            let mut idx: Vec<usize> = (0..n_draws).collect();
            idx.shuffle(rng);
            let mut q: Vec<f64> = idx
                .into_iter()
                .map(|k| competitor.quantile((k as f64 + rng.random::<f64>()) / n))
                .collect();
            q.sort_by(f64::total_cmp);
            q
        };
        let comp_b = stratified(rng);
        let comp_s = stratified(rng);

        let (mut wb, mut tb, mut ws, mut ts) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n_draws {
            for _ in 0..flow.n_investors {
                if flow.arrival_prob <= 0.0 || !rng.random_bool(flow.arrival_prob.min(1.0)) {
                    continue;
                }
                let w = flow.size.sample(rng) * flow.unit_spread_cash;
                let wins_tie = rng.random_bool(p);
                let (acc, tie) = if rng.random_bool(0.5) {
                    (&mut wb, &mut tb)
                } else {
                    (&mut ws, &mut ts)
                };
                *acc += w;
                if wins_tie {
                    *tie += w;
                }
            }
        }
        Ok(Self {
            comp_b,
            comp_s,
            flow_b: (wb / n, tb / n),
            flow_s: (ws / n, ts / n),
        })
    }

    /// Mean spread PnL per step when quoting `eps` on both sides.
    pub fn expected_spread_pnl(&self, eps: f64) -> f64 {
        let side = |comp: &[f64], (w, tie): (f64, f64)| {
            let n = comp.len() as f64;
            let below_or_eq = comp.partition_point(|&c| c <= eps);
            let below = comp.partition_point(|&c| c < eps);
            let wins = (comp.len() - below_or_eq) as f64 / n;
            let ties = (below_or_eq - below) as f64 / n;
            w * wins + tie * ties
        };
        (1.0 + eps) * (side(&self.comp_b, self.flow_b) + side(&self.comp_s, self.flow_s))
    }

    /// Grid argmax, ties to the largest `eps`.
    pub fn argmax(&self, grid: &[f64]) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for &eps in grid {
            let v = self.expected_spread_pnl(eps);
            if best.is_none_or(|(bv, be)| v > bv || (v == bv && eps > be)) {
                best = Some((v, eps));
            }
        }
        best.map(|(_, e)| e)
    }
}

/// One-shot Monte-Carlo estimate for a single `eps`.
pub fn expected_spread_pnl_mc<R: Rng + ?Sized>(
    eps: f64,
    competitor: &CompetitorCdf,
    flow: &FlowModel,
    p: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(SpreadPnlOracle::new(competitor, flow, p, n_draws, rng)?.expected_spread_pnl(eps))
}

/// Outcome of checking the optimal-pricing result three ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremReport {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub n_draws: usize,
    /// `max(a, (b - 1) / 2)`; assumes a continuous competitor.
    pub closed_form: f64,
    /// Exact grid argmax of the win objective. Equals the closed form when
    /// `a < b`; differs for a point mass, where ties matter.
    pub reference: f64,
    /// Argmax against an i.i.d. sample of `n_draws` competitor quotes.
    pub empirical: f64,
    /// Argmax of the Monte-Carlo spread PnL estimate.
    pub monte_carlo: f64,
    pub agrees: bool,
}

/// Tolerance for the empirical argmax, which carries sampling noise.
pub const EMPIRICAL_TOL: f64 = 0.02;
/// Tolerance for the Monte-Carlo argmax: one grid step.
pub const MC_TOL: f64 = 0.01 + 1e-9;

pub fn verify_theorem(a: f64, b: f64, p: f64, n_draws: usize, seed: u64) -> Result<TheoremReport> {
    let closed_form = optimal_eps_uniform(a, b)?;
    if n_draws == 0 {
        return Err(SimError::invalid("n_draws", "must be >= 1"));
    }
    let grid = theorem_grid();
    let uniform = CompetitorCdf::uniform(a, b)?;
    let reference = if a < b {
        closed_form
    } else {
        optimal_eps_empirical(&uniform, p, &grid)?
    };

    let mut rng = crate::engine::component_rng(seed, 0);
    let sample: Vec<f64> = (0..n_draws)
        .map(|_| uniform.quantile(rng.random::<f64>()))
        .collect();
    let empirical = optimal_eps_empirical(&CompetitorCdf::empirical(sample)?, p, &grid)?;

    let oracle = SpreadPnlOracle::new(&uniform, &FlowModel::default(), p, n_draws, &mut rng)?;
    let monte_carlo = oracle.argmax(&grid).expect("grid is nonempty");

    let agrees =
        (empirical - reference).abs() <= EMPIRICAL_TOL && (monte_carlo - reference).abs() <= MC_TOL;
    Ok(TheoremReport {
        a,
        b,
        p,
        n_draws,
        closed_form,
        reference,
        empirical,
        monte_carlo,
        agrees,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    InvPnlStdev,
    InvPnlSquared,
    Asymmetric,
}

impl PenaltyKind {
    pub fn default_alpha(self) -> f64 {
        match self {
            PenaltyKind::InvPnlStdev => 0.4,
            PenaltyKind::InvPnlSquared => 0.07,
            PenaltyKind::Asymmetric => 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    10
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind) -> Self {
        Self {
            kind,
            alpha: None,
            window: default_window(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| self.kind.default_alpha())
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha();
        if !(a.is_finite() && a >= 0.0) {
            return Err(SimError::invalid(
                "penalty.alpha",
                "must be finite and >= 0",
            ));
        }
        if self.window < 2 {
            return Err(SimError::invalid("penalty.window", "must be >= 2"));
        }
        Ok(())
    }
}

/// Penalty for the latest step given the inventory PnL history (oldest
/// first). The stdev kind uses the population std of the last `window`
/// entries. Always `<= 0`; an empty history gives 0.
pub fn risk_penalty(spec: &PenaltySpec, history: &[f64]) -> f64 {
    let Some(&last) = history.last() else {
        return 0.0;
    };
    let alpha = spec.alpha();
    let p = match spec.kind {
        PenaltyKind::InvPnlStdev => {
            let tail = &history[history.len().saturating_sub(spec.window)..];
            let n = tail.len() as f64;
            let mean = tail.iter().sum::<f64>() / n;
            let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            -alpha * var.sqrt()
        }
        PenaltyKind::InvPnlSquared => -alpha * last * last,
        PenaltyKind::Asymmetric => alpha * last.min(0.0),
    };
    if p == 0.0 {
        0.0
    } else {
        p
    }
}

/// Mean and spread of a per-step metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SeedStat {
    pub mean: f64,
    /// Sample std across seeds; 0 with one seed.
    pub std: f64,
}

impl SeedStat {
    fn from(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mm_id: String,
    /// Competitor for excess rows, empty for plain rows.
    pub over: String,
    pub seeds: usize,
    pub spread_pnl: SeedStat,
    pub inventory_pnl: SeedStat,
    pub hedge_cost: SeedStat,
    pub total_pnl: SeedStat,
    pub penalty: SeedStat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PnlReport {
    pub rows: Vec<SummaryRow>,
    pub excess: Vec<SummaryRow>,
    /// Per-seed per-step means, keyed by maker then seed order.
    #[serde(skip)]
    pub per_seed: BTreeMap<String, Vec<[f64; 5]>>,
}

const METRICS: [&str; 5] = [
    "spread_pnl",
    "inventory_pnl",
    "hedge_cost",
    "total_pnl",
    "penalty",
];

impl PnlReport {
    pub fn row(&self, mm_id: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.mm_id == mm_id)
    }

    pub fn excess_row(&self, mm_id: &str, over: &str) -> Option<&SummaryRow> {
        self.excess
            .iter()
            .find(|r| r.mm_id == mm_id && r.over == over)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "row".to_string(),
            "mm_id".into(),
            "over".into(),
            "seeds".into(),
        ];
        for m in METRICS {
            header.push(format!("{m}_x100"));
        }
        for m in METRICS {
            header.push(m.to_string());
        }
        for m in METRICS {
            header.push(format!("{m}_std"));
        }
        w.write_record(&header)?;
        for (kind, rows) in [("maker", &self.rows), ("excess", &self.excess)] {
            for r in rows {
                let stats = r.stats();
                let mut rec = vec![
                    kind.to_string(),
                    r.mm_id.clone(),
                    r.over.clone(),
                    r.seeds.to_string(),
                ];
                rec.extend(stats.iter().map(|s| format!("{}", s.mean * 100.0)));
                rec.extend(stats.iter().map(|s| format!("{}", s.mean)));
                rec.extend(stats.iter().map(|s| format!("{}", s.std)));
                w.write_record(&rec)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| SimError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned table of per-step means x100 with the raw total beside them.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>12} {:>12} {:>12} {:>12} {:>12} {:>14}",
            "maker (x100)", "spread", "inventory", "hedge", "total", "penalty", "total (raw)"
        );
        let mut emit = |label: String, r: &SummaryRow| {
            let s = r.stats();
            let _ = writeln!(
                out,
                "{:<24} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>14.6}",
                label,
                s[0].mean * 100.0,
                s[1].mean * 100.0,
                s[2].mean * 100.0,
                s[3].mean * 100.0,
                s[4].mean * 100.0,
                s[3].mean
            );
        };
        for r in &self.rows {
            emit(r.mm_id.clone(), r);
        }
        for r in &self.excess {
            emit(format!("{} - {}", r.mm_id, r.over), r);
        }
        out
    }
}

impl SummaryRow {
    fn stats(&self) -> [SeedStat; 5] {
        [
            self.spread_pnl,
            self.inventory_pnl,
            self.hedge_cost,
            self.total_pnl,
            self.penalty,
        ]
    }

    fn from_values(mm_id: &str, over: &str, per_seed: &[[f64; 5]]) -> Self {
        let col = |k: usize| SeedStat::from(&per_seed.iter().map(|v| v[k]).collect::<Vec<_>>());
        Self {
            mm_id: mm_id.to_string(),
            over: over.to_string(),
            seeds: per_seed.len(),
            spread_pnl: col(0),
            inventory_pnl: col(1),
            hedge_cost: col(2),
            total_pnl: col(3),
            penalty: col(4),
        }
    }
}

/// Per-maker mean per-step PnL components aggregated across trajectories
/// (one per seed), plus excess rows for every ordered pair of makers.
pub fn pnl_report(trajectories: &[Trajectory]) -> Result<PnlReport> {
    let first = trajectories
        .first()
        .ok_or_else(|| SimError::invalid("trajectories", "need at least one"))?;
    let ids = first.mm_ids.clone();
    let mut per_seed: BTreeMap<String, Vec<[f64; 5]>> = BTreeMap::new();
    for tr in trajectories {
        if tr.mm_ids != ids {
            return Err(SimError::invalid("trajectories", "maker rosters differ"));
        }
        for id in &ids {
            let mut sums = [0.0; 5];
            let mut n = 0usize;
            for r in tr.rows_for(id) {
                sums[0] += r.spread_pnl;
                sums[1] += r.inventory_pnl;
                sums[2] += r.hedge_cost;
                sums[3] += r.total_pnl;
                sums[4] += r.penalty;
                n += 1;
            }
            let means = if n == 0 {
                [0.0; 5]
            } else {
                sums.map(|s| s / n as f64)
            };
            per_seed.entry(id.clone()).or_default().push(means);
        }
    }
    let rows = ids
        .iter()
        .map(|id| SummaryRow::from_values(id, "", &per_seed[id]))
        .collect();
    let mut excess = Vec::new();
    for a in &ids {
        for b in &ids {
            if a == b {
                continue;
            }
            let diffs: Vec<[f64; 5]> = per_seed[a]
                .iter()
                .zip(&per_seed[b])
                .map(|(x, y)| std::array::from_fn(|k| x[k] - y[k]))
                .collect();
            excess.push(SummaryRow::from_values(a, b, &diffs));
        }
    }
    Ok(PnlReport {
        rows,
        excess,
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TrajectoryRow;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_examples() {
        assert_eq!(optimal_eps_uniform(-1.0, 1.0).unwrap(), 0.0);
        assert_eq!(optimal_eps_uniform(-0.5, 0.5).unwrap(), -0.25);
        assert_eq!(optimal_eps_uniform(0.5, 1.0).unwrap(), 0.5);
        assert!(optimal_eps_uniform(-1.5, 1.0).is_err());
        assert!(optimal_eps_uniform(0.5, 0.0).is_err());
    }

    #[test]
    fn point_mass_competitor() {
        let c = CompetitorCdf::uniform(0.0, 0.0).unwrap();
        assert_eq!(c.point_mass(0.0), 1.0);
        let eps = optimal_eps_empirical(&c, 0.5, &theorem_grid()).unwrap();
        assert_eq!(eps, -0.01);
        assert_abs_diff_eq!(win_objective(&c, 0.5, -0.01), 0.99);
        assert_abs_diff_eq!(win_objective(&c, 0.5, 0.0), 0.5);
        assert_eq!(
            optimal_eps_empirical(&c, 1.0, &theorem_grid()).unwrap(),
            0.0
        );
        let e = CompetitorCdf::empirical(vec![0.0; 5]).unwrap();
        assert_eq!(
            optimal_eps_empirical(&e, 0.5, &theorem_grid()).unwrap(),
            -0.01
        );
        assert!(optimal_eps_empirical(&e, 0.5, &[]).is_err());
    }

    #[test]
    fn objective_case_structure() {
        let c = CompetitorCdf::empirical(vec![-0.3, 0.1, 0.4]).unwrap();
        assert_eq!(win_objective(&c, 0.5, 0.5), 0.0);
        assert_abs_diff_eq!(win_objective(&c, 0.5, -0.5), 0.5);
    }

    #[test]
    fn mc_oracle_closed_forms() {
        let mut rng = crate::engine::component_rng(1, 0);
        let flow = FlowModel {
            unit_spread_cash: 0.25,
            ..Default::default()
        };
        let below = CompetitorCdf::uniform(-1.0, -1.0).unwrap();
        let v = expected_spread_pnl_mc(0.0, &below, &flow, 0.5, 100, &mut rng).unwrap();
        assert_eq!(v, 0.0);
        let above = CompetitorCdf::uniform(1.0, 1.0).unwrap();
        let v = expected_spread_pnl_mc(0.0, &above, &flow, 0.5, 100, &mut rng).unwrap();
        assert_abs_diff_eq!(v, 20.0 * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn penalties() {
        let asym = PenaltySpec::new(PenaltyKind::Asymmetric);
        let sq = PenaltySpec::new(PenaltyKind::InvPnlSquared);
        let sd = PenaltySpec::new(PenaltyKind::InvPnlStdev);
        assert_abs_diff_eq!(risk_penalty(&asym, &[-2.0]), -0.6, epsilon = 1e-15);
        assert_eq!(risk_penalty(&asym, &[2.0]), 0.0);
        assert_abs_diff_eq!(risk_penalty(&sq, &[2.0]), -0.28, epsilon = 1e-15);
        for spec in [&asym, &sq, &sd] {
            assert_eq!(risk_penalty(spec, &[0.0; 12]), 0.0);
        }
        assert_eq!(risk_penalty(&sd, &[3.0; 7]), 0.0);
        // population std of {1, 3} is 1
        assert_abs_diff_eq!(risk_penalty(&sd, &[1.0, 3.0]), -0.4, epsilon = 1e-15);
        // only the last 10 count
        let mut h = vec![100.0];
        h.extend([1.0; 10]);
        assert_eq!(risk_penalty(&sd, &h), 0.0);
    }

    fn fixture(rows: &[(&str, f64, f64, f64)]) -> Trajectory {
        let mut out = Vec::new();
        for (t, chunk) in rows.chunks(2).enumerate() {
            for &(id, s, h, i) in chunk {
                out.push(TrajectoryRow {
                    t: t as u64,
                    mm_id: id.into(),
                    eps_b: 0.0,
                    eps_s: 0.0,
                    x: 0.0,
                    inventory: 0.0,
                    spread_pnl: s,
                    hedge_cost: h,
                    inventory_pnl: i,
                    total_pnl: s + h + i,
                    penalty: 0.0,
                    market_share: 0.5,
                    mid: 100.0,
                });
            }
        }
        Trajectory {
            seed: 0,
            mm_ids: vec!["a".into(), "b".into()],
            rows: out,
        }
    }

    #[test]
    fn report_scaling_and_excess() {
        let tr = fixture(&[
            ("a", 0.5, 0.0, 0.0),
            ("b", 0.5, 0.0, 0.0),
            ("a", 0.5, 0.0, 0.0),
            ("b", 0.5, 0.0, 0.0),
        ]);
        let rep = pnl_report(&[tr]).unwrap();
        assert_eq!(rep.row("a").unwrap().spread_pnl.mean * 100.0, 50.0);

        let tr = fixture(&[
            ("a", 1.0, -0.5, 2.0),
            ("b", 0.2, 0.0, -1.0),
            ("a", 0.4, -0.1, -3.0),
            ("b", 0.3, -0.2, 0.5),
            ("a", 0.7, 0.0, 0.0),
            ("b", 0.1, 0.0, 0.25),
        ]);
        let rep = pnl_report(&[tr]).unwrap();
        let total_a = (2.5 + -2.7 + 0.7) / 3.0;
        let total_b = (-0.8 + 0.6 + 0.35) / 3.0;
        let ex = rep.excess_row("a", "b").unwrap();
        assert_abs_diff_eq!(ex.total_pnl.mean, total_a - total_b, epsilon = 1e-12);
        assert_abs_diff_eq!(ex.spread_pnl.mean, (2.1 - 0.6) / 3.0, epsilon = 1e-12);
        assert!(rep.to_csv().unwrap().lines().count() == 5);
        assert!(rep.to_text().contains("a - b"));
    }

    #[test]
    fn zero_report() {
        let tr = fixture(&[("a", 0.0, 0.0, 0.0), ("b", 0.0, 0.0, 0.0)]);
        let rep = pnl_report(&[tr]).unwrap();
        for r in rep.rows.iter().chain(&rep.excess) {
            assert!(r.stats().iter().all(|s| s.mean == 0.0 && s.std == 0.0));
        }
        assert!(pnl_report(&[]).is_err());
    }
}
