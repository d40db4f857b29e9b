//! Tensor grids over `(t, s, v, i, y)` and the price field stored on them.
//!
//! Spot nodes are log-spaced, but interpolation between two spot nodes is
//! linear in `s` itself so that payoff components linear in `s` are carried
//! through the solver without interpolation error. Outside the spot range
//! the field is continued linearly: above `s_max` with the payoff slope
//! `c1`, below `s_min` along the first grid cell.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PayoffSpec;

/// Resolution and extent of a [`FieldGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    /// Geometric centre of the spot range.
    pub s_center: f64,
    /// The spot range is `[s_center / s_ratio, s_center * s_ratio]`.
    pub s_ratio: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Variance moved onto the nearest variance node, typically the initial one.
    pub v_anchor: Option<f64>,
    pub y_max: f64,
    pub n_t: usize,
    pub n_s: usize,
    pub n_v: usize,
    pub n_y: usize,
    pub regimes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub times: Vec<f64>,
    pub spots: Vec<f64>,
    pub variances: Vec<f64>,
    pub ages: Vec<f64>,
    pub regimes: usize,
    log_s_min: f64,
    log_step: f64,
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

/// Linear bracket in a sorted node list with clamping at both ends.
fn bracket(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    if n == 1 || x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let k = nodes.partition_point(|&z| z <= x) - 1;
    (k, (x - nodes[k]) / (nodes[k + 1] - nodes[k]))
}

impl FieldGrid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        if spec.n_t < 2 || spec.n_s < 3 || spec.n_v < 2 || spec.n_y < 1 {
            return Err(Error::Config("grid needs n_t >= 2, n_s >= 3, n_v >= 2, n_y >= 1".into()));
        }
        if !(spec.horizon > 0.0 && spec.s_center > 0.0 && spec.s_ratio > 1.0) {
            return Err(Error::Config("grid horizon, spot centre and spot ratio must be positive (ratio > 1)".into()));
        }
        if !(spec.v_min > 0.0 && spec.v_max > spec.v_min) || !(spec.y_max >= 0.0) {
            return Err(Error::Config("variance range must satisfy 0 < v_min < v_max and y_max >= 0".into()));
        }
        if spec.regimes == 0 {
            return Err(Error::Config("grid needs at least one regime".into()));
        }
        let log_s_min = (spec.s_center / spec.s_ratio).ln();
        let log_step = 2.0 * spec.s_ratio.ln() / (spec.n_s - 1) as f64;
        let spots = (0..spec.n_s).map(|a| (log_s_min + a as f64 * log_step).exp()).collect();
        // quadratic spacing clusters variance nodes where the field bends most
        let mut variances: Vec<f64> = (0..spec.n_v)
            .map(|c| {
                let x = c as f64 / (spec.n_v - 1) as f64;
                spec.v_min + (spec.v_max - spec.v_min) * x * x
            })
            .collect();
        if let Some(v0) = spec.v_anchor.filter(|&v| v > spec.v_min && v < spec.v_max) {
            let (c, w) = bracket(&variances, v0);
            let c = if w < 0.5 { c } else { c + 1 };
            if c > 0 && c + 1 < spec.n_v {
                variances[c] = v0;
            }
        }
        let ages = if spec.n_y == 1 { vec![0.0] } else { uniform(0.0, spec.y_max, spec.n_y) };
        Ok(Self {
            times: uniform(0.0, spec.horizon, spec.n_t),
            spots,
            variances,
            ages,
            regimes: spec.regimes,
            log_s_min,
            log_step,
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty time grid")
    }

    pub fn time_step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn log_step(&self) -> f64 {
        self.log_step
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.times.len(), self.regimes, self.ages.len(), self.variances.len(), self.spots.len()]
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index with `s` fastest, then `v`, `y`, regime and `t`.
    #[inline]
    pub fn index(&self, n: usize, i: usize, y: usize, c: usize, a: usize) -> usize {
        let [_, k, ny, nv, ns] = self.dims();
        (((n * k + i) * ny + y) * nv + c) * ns + a
    }

    /// Spot of the (possibly virtual) node `node`.
    #[inline]
    pub fn virtual_spot(&self, node: isize) -> f64 {
        (self.log_s_min + node as f64 * self.log_step).exp()
    }

    /// Position of `s` in units of log-spot nodes.
    #[inline]
    pub fn spot_position(&self, s: f64) -> f64 {
        (s.ln() - self.log_s_min) / self.log_step
    }

    /// Cell `node` and the linear-in-`s` weight `w` of node `node + 1`.
    /// `node` may lie outside the grid.
    #[inline]
    pub fn spot_bracket(&self, s: f64) -> (isize, f64) {
        let x = self.spot_position(s);
        let node = x.floor();
        (node as isize, cell_weight(x - node, self.log_step))
    }

    pub fn variance_bracket(&self, v: f64) -> (usize, f64) {
        bracket(&self.variances, v)
    }

    pub fn time_bracket(&self, t: f64) -> (usize, f64) {
        bracket(&self.times, t)
    }

    pub fn age_bracket(&self, y: f64) -> (usize, f64) {
        bracket(&self.ages, y)
    }
}

/// Linear-in-`s` weight of the upper node for a point a fraction `f` of the
/// way through a log cell of width `h`.
#[inline]
pub fn cell_weight(f: f64, h: f64) -> f64 {
    f64::exp_m1(f * h) / f64::exp_m1(h)
}

/// Values of `φ(t, s, v, i, y)` at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceField {
    pub grid: FieldGrid,
    pub payoff: PayoffSpec,
    pub values: Vec<f64>,
}

impl PriceField {
    pub fn new(grid: FieldGrid, payoff: PayoffSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Internal(format!("field has {} values for {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, payoff, values })
    }

    /// Field equal to the payoff at every node.
    pub fn from_payoff(grid: FieldGrid, payoff: PayoffSpec) -> Self {
        let ns = grid.spots.len();
        let values = (0..grid.len()).map(|idx| payoff.value(grid.spots[idx % ns])).collect();
        Self { grid, payoff, values }
    }

    #[inline]
    pub fn node(&self, n: usize, i: usize, y: usize, c: usize, a: usize) -> f64 {
        self.values[self.grid.index(n, i, y, c, a)]
    }

    /// Spot slice at fixed `(t, i, y, v)` node indices.
    pub fn slice(&self, n: usize, i: usize, y: usize, c: usize) -> &[f64] {
        let start = self.grid.index(n, i, y, c, 0);
        &self.values[start..start + self.grid.spots.len()]
    }

    /// Value at a possibly virtual spot node of a slice.
    #[inline]
    pub fn extended_node(&self, slice: &[f64], node: isize) -> f64 {
        extend(slice, node, &self.grid, self.payoff.c1())
    }

    /// Interpolated value with the linear continuation outside the spot
    /// range and clamping in `t`, `v` and `y`.
    pub fn value_extended(&self, t: f64, s: f64, v: f64, i: usize, y: f64) -> f64 {
        let (n, wt) = self.grid.time_bracket(t);
        let (c, wv) = self.grid.variance_bracket(v);
        let (yy, wy) = self.grid.age_bracket(y);
        let (node, ws) = self.grid.spot_bracket(s);
        let ny = self.grid.ages.len();
        let mut acc = 0.0;
        for (dn, wn) in [(0, 1.0 - wt), (1, wt)] {
            if wn == 0.0 {
                continue;
            }
            for (dy, wyy) in [(0, 1.0 - wy), (1, wy)] {
                if wyy == 0.0 || yy + dy >= ny {
                    continue;
                }
                for (dc, wc) in [(0, 1.0 - wv), (1, wv)] {
                    if wc == 0.0 {
                        continue;
                    }
                    let slice = self.slice(n + dn, i, yy + dy, c + dc);
                    let val = (1.0 - ws) * self.extended_node(slice, node) + ws * self.extended_node(slice, node + 1);
                    acc += wn * wyy * wc * val;
                }
            }
        }
        acc
    }

    /// Interpolated value; errors outside the grid.
    pub fn value_at(&self, t: f64, s: f64, v: f64, i: usize, y: f64) -> Result<f64> {
        self.check_inside(t, s, v, i, y)?;
        Ok(self.value_extended(t, s, v, i, y))
    }

    pub fn check_inside(&self, t: f64, s: f64, v: f64, i: usize, y: f64) -> Result<()> {
        let g = &self.grid;
        let tol = 1e-12;
        let inside = |x: f64, lo: f64, hi: f64| x >= lo - tol * lo.abs().max(1.0) && x <= hi + tol * hi.abs().max(1.0);
        if i >= g.regimes
            || !inside(t, 0.0, g.horizon())
            || !inside(s, g.spots[0], *g.spots.last().unwrap())
            || !inside(v, g.variances[0], *g.variances.last().unwrap())
            || !inside(y, 0.0, *g.ages.last().unwrap())
        {
            return Err(Error::OutOfRange(format!(
                "state (t={t}, s={s}, v={v}, regime={i}, y={y}) lies outside the field grid"
            )));
        }
        Ok(())
    }

    /// CSV with columns `t,s,v,regime,y,phi`.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::with_capacity(self.values.len() * 48);
        out.push_str("t,s,v,regime,y,phi\n");
        for (n, t) in g.times.iter().enumerate() {
            for i in 0..g.regimes {
                for (yy, y) in g.ages.iter().enumerate() {
                    for (c, v) in g.variances.iter().enumerate() {
                        for (a, s) in g.spots.iter().enumerate() {
                            out.push_str(&format!("{t},{s},{v},{i},{y},{}\n", self.node(n, i, yy, c, a)));
                        }
                    }
                }
            }
        }
        out
    }

    /// Binary cache: magic, key, JSON header (grid and payoff), then the
    /// values as little-endian `f64`.
    pub fn write_cache<W: Write>(&self, key: &str, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            grid: &'a FieldGrid,
            payoff: &'a PayoffSpec,
        }
        let header = serde_json::to_vec(&Header {
            grid: &self.grid,
            payoff: &self.payoff,
        })
        .map_err(|e| Error::Internal(e.to_string()))?;
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(key.len() as u64).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a cache written by [`PriceField::write_cache`]; returns `None`
    /// when the stored key differs from `key`.
    pub fn read_cache<R: Read>(key: &str, mut r: R) -> Result<Option<Self>> {
        #[derive(Deserialize)]
        struct Header {
            grid: FieldGrid,
            payoff: PayoffSpec,
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Parse("not a field cache".into()));
        }
        let stored_key = read_block(&mut r)?;
        if stored_key != key.as_bytes() {
            return Ok(None);
        }
        let header: Header = serde_json::from_slice(&read_block(&mut r)?).map_err(|e| Error::Parse(e.to_string()))?;
        let n = read_u64(&mut r)? as usize;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        Ok(Some(Self::new(header.grid, header.payoff, values)?))
    }
}

const CACHE_MAGIC: &[u8; 8] = b"SMHFLD01";

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_block<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 30 {
        return Err(Error::Parse("corrupt field cache".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Slice value at a possibly virtual node.
#[inline]
pub fn extend(slice: &[f64], node: isize, grid: &FieldGrid, c1: f64) -> f64 {
    let last = slice.len() as isize - 1;
    if node < 0 {
        let (s0, s1) = (grid.spots[0], grid.spots[1]);
        slice[0] + (slice[1] - slice[0]) * (grid.virtual_spot(node) - s0) / (s1 - s0)
    } else if node > last {
        slice[last as usize] + c1 * (grid.virtual_spot(node) - grid.spots[last as usize])
    } else {
        slice[node as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec {
            horizon: 1.0,
            s_center: 100.0,
            s_ratio: 5.0,
            v_min: 1e-4,
            v_max: 0.32,
            v_anchor: None,
            y_max: 1.0,
            n_t: 5,
            n_s: 21,
            n_v: 6,
            n_y: 3,
            regimes: 2,
        }
    }

    #[test]
    fn grid_geometry() {
        let g = FieldGrid::new(&spec()).unwrap();
        assert!((g.spots[0] - 20.0).abs() < 1e-12 && (g.spots[20] - 500.0).abs() < 1e-9);
        assert!((g.spots[10] - 100.0).abs() < 1e-10);
        assert_eq!(g.variances[0], 1e-4);
        assert_eq!(*g.variances.last().unwrap(), 0.32);
        assert_eq!(g.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.len(), 5 * 2 * 3 * 6 * 21);
        assert!(g.variances.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn variance_anchor_lands_on_a_node() {
        let plain = FieldGrid::new(&spec()).unwrap();
        let g = FieldGrid::new(&GridSpec {
            v_anchor: Some(0.04),
            ..spec()
        })
        .unwrap();
        assert!(g.variances.contains(&0.04));
        assert!(g.variances.windows(2).all(|w| w[0] < w[1]));
        let moved = g.variances.iter().zip(&plain.variances).filter(|(a, b)| a != b).count();
        assert_eq!(moved, 1);
        // the end nodes never move
        let edge = FieldGrid::new(&GridSpec {
            v_anchor: Some(2e-4),
            ..spec()
        })
        .unwrap();
        assert_eq!(edge.variances, plain.variances);
    }

    #[test]
    fn interpolation_reproduces_affine_functions_of_spot() {
        let g = FieldGrid::new(&spec()).unwrap();
        let payoff = PayoffSpec::Call { strike: 100.0 };
        let ns = g.spots.len();
        let values = (0..g.len()).map(|k| 3.0 + 0.7 * g.spots[k % ns]).collect();
        // c1 of a call is 1, so use an affine field with slope 1 to test both ends
        let field = PriceField::new(g.clone(), payoff, values).unwrap();
        for &s in &[5.0, 20.0, 33.3, 100.0, 499.0, 900.0] {
            let got = field.value_extended(0.3, s, 0.05, 1, 0.4);
            let expect = if s > 500.0 { 3.0 + 0.7 * 500.0 + (s - 500.0) } else { 3.0 + 0.7 * s };
            assert!((got - expect).abs() < 1e-9 * expect, "{s}: {got} vs {expect}");
        }
    }

    #[test]
    fn nodes_are_reproduced_and_range_checked() {
        let g = FieldGrid::new(&spec()).unwrap();
        let values = (0..g.len()).map(|k| k as f64).collect();
        let field = PriceField::new(g.clone(), PayoffSpec::Unit, values).unwrap();
        let (n, i, y, c, a) = (2, 1, 1, 3, 7);
        let got = field.value_at(g.times[n], g.spots[a], g.variances[c], i, g.ages[y]).unwrap();
        assert!((got - field.node(n, i, y, c, a)).abs() < 1e-9);
        assert!(field.value_at(0.5, 10.0, 0.04, 0, 0.0).is_err());
        assert!(field.value_at(0.5, 100.0, 0.5, 0, 0.0).is_err());
        assert!(field.value_at(0.5, 100.0, 0.04, 2, 0.0).is_err());
    }

    #[test]
    fn cache_round_trip_and_key_mismatch() {
        let g = FieldGrid::new(&spec()).unwrap();
        let field = PriceField::from_payoff(g, PayoffSpec::Put { strike: 90.0 });
        let mut buf = Vec::new();
        field.write_cache("abc", &mut buf).unwrap();
        let back = PriceField::read_cache("abc", buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, field);
        assert!(PriceField::read_cache("other", buf.as_slice()).unwrap().is_none());
        assert!(PriceField::read_cache("abc", &b"garbage!"[..]).is_err());
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let g = FieldGrid::new(&spec()).unwrap();
        let field = PriceField::from_payoff(g.clone(), PayoffSpec::Unit);
        assert_eq!(field.to_csv().lines().count(), g.len() + 1);
    }
}
