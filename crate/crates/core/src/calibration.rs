//! Fits book-model parameters from snapshot volumes.
//!
//! Input CSV has `level_index` and `volume` columns; a row with level 0
//! starts a new snapshot, and each snapshot must list levels 0..9 in order.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::market::{LobModelParams, ShapePoly, LADDER_LEVELS};

pub const MIN_SNAPSHOTS: usize = 10;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Row {
    level_index: usize,
    volume: f64,
}

/// Reads snapshots as rows of per-level volumes.
pub fn read_snapshots<R: Read>(reader: R) -> Result<Vec<[f64; LADDER_LEVELS]>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    let mut cur: Vec<f64> = Vec::with_capacity(LADDER_LEVELS);
    let flush = |cur: &mut Vec<f64>, out: &mut Vec<[f64; LADDER_LEVELS]>| -> Result<()> {
        if cur.is_empty() {
            return Ok(());
        }
        let snap: [f64; LADDER_LEVELS] = cur.as_slice().try_into().map_err(|_| {
            SimError::Calibration(format!(
                "snapshot {} has {} levels, expected {LADDER_LEVELS}",
                out.len(),
                cur.len()
            ))
        })?;
        out.push(snap);
        cur.clear();
        Ok(())
    };
    for (line, rec) in rdr.deserialize::<Row>().enumerate() {
        let row = rec?;
        if !(row.volume.is_finite() && row.volume >= 0.0) {
            return Err(SimError::Calibration(format!(
                "row {}: volume must be finite and >= 0",
                line + 1
            )));
        }
        if row.level_index == 0 {
            flush(&mut cur, &mut out)?;
        }
        if row.level_index != cur.len() {
            return Err(SimError::Calibration(format!(
                "row {}: level {} out of order (expected {})",
                line + 1,
                row.level_index,
                cur.len()
            )));
        }
        cur.push(row.volume);
    }
    flush(&mut cur, &mut out)?;
    Ok(out)
}

pub fn write_snapshots<W: Write>(w: W, snapshots: &[[f64; LADDER_LEVELS]]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for snap in snapshots {
        for (level_index, &volume) in snap.iter().enumerate() {
            wtr.serialize(Row {
                level_index,
                volume,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Draws snapshots from the book model; used to build calibration fixtures.
pub fn synthetic_snapshots<R: Rng + ?Sized>(
    lambda: f64,
    gamma_shape: f64,
    shape: ShapePoly,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; LADDER_LEVELS]>> {
    let g = Gamma::new(gamma_shape, 1.0 / gamma_shape)
        .map_err(|e| SimError::invalid("gamma_shape", e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let v0 = g.sample(rng);
            std::array::from_fn(|lvl| lambda * v0 * shape.eval(lvl))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub lambda: f64,
    pub gamma_shape: f64,
    pub c1: f64,
    pub c2: f64,
    pub snapshots: usize,
}

impl Calibration {
    /// Default book parameters with the fitted values substituted.
    pub fn lob_params(&self) -> LobModelParams {
        LobModelParams {
            lambda: self.lambda,
            gamma_shape: self.gamma_shape,
            shape_pool: vec![ShapePoly::new(self.c1, self.c2)],
            ..LobModelParams::default()
        }
    }

    /// `{"lob": {...}}`, mergeable into a scenario file.
    pub fn to_json_fragment(&self) -> Result<String> {
        let frag = serde_json::json!({ "lob": self.lob_params() });
        Ok(serde_json::to_string_pretty(&frag)?)
    }
}

/// Fits `lambda` as the mean best-level volume, the Gamma shape by method of
/// moments on best-level volume over `lambda`, and `c1, c2` by least squares
/// on level-averaged volume relative to level 0 (intercept pinned to 1).
pub fn calibrate(snapshots: &[[f64; LADDER_LEVELS]]) -> Result<Calibration> {
    let n = snapshots.len();
    if n < MIN_SNAPSHOTS {
        return Err(SimError::Calibration(format!(
            "need at least {MIN_SNAPSHOTS} snapshots, got {n}"
        )));
    }
    let nf = n as f64;
    let mut level_mean = [0.0; LADDER_LEVELS];
    for snap in snapshots {
        for (m, v) in level_mean.iter_mut().zip(snap) {
            *m += v / nf;
        }
    }
    let lambda = level_mean[0];
    if lambda <= 0.0 {
        return Err(SimError::Calibration(
            "best-level volume is always zero".into(),
        ));
    }
    let var = snapshots
        .iter()
        .map(|s| (s[0] / lambda - 1.0).powi(2))
        .sum::<f64>()
        / (nf - 1.0);
    if var <= 1e-12 * lambda.max(1.0) {
        return Err(SimError::Calibration(
            "best-level volume has zero variance; Gamma shape is undefined".into(),
        ));
    }
    let gamma_shape = 1.0 / var;

    // Normal equations for r_n - 1 = c1 n + c2 n^2.
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (lvl, m) in level_mean.iter().enumerate() {
        let x = lvl as f64;
        let y = m / lambda - 1.0;
        s11 += x * x;
        s12 += x * x * x;
        s22 += x * x * x * x;
        b1 += x * y;
        b2 += x * x * y;
    }
    let det = s11 * s22 - s12 * s12;
    let c1 = (b1 * s22 - b2 * s12) / det;
    let c2 = (s11 * b2 - s12 * b1) / det;

    Ok(Calibration {
        lambda,
        gamma_shape,
        c1,
        c2,
        snapshots: n,
    })
}

pub fn calibrate_csv<R: Read>(reader: R) -> Result<Calibration> {
    calibrate(&read_snapshots(reader)?)
}
