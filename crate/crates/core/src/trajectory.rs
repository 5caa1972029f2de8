//! Per-node, per-step marginal state probabilities.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marginals `P_S`, `P_I`, `P_R` indexed `[t][node]` for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalTrajectory {
    pub ps: Vec<Vec<f64>>,
    pub pi: Vec<Vec<f64>>,
    pub pr: Vec<Vec<f64>>,
}

impl MarginalTrajectory {
    pub fn zeros(horizon: usize, n: usize) -> Self {
        let z = vec![vec![0.0; n]; horizon + 1];
        MarginalTrajectory {
            ps: z.clone(),
            pi: z.clone(),
            pr: z,
        }
    }

    /// Exact initial condition repeated over every step.
    pub fn initial(horizon: usize, n: usize, seeds: &[usize]) -> Self {
        let mut out = MarginalTrajectory::zeros(horizon, n);
        for t in 0..=horizon {
            out.ps[t].fill(1.0);
            for &s in seeds {
                out.ps[t][s] = 0.0;
                out.pi[t][s] = 1.0;
            }
        }
        out
    }

    pub fn horizon(&self) -> usize {
        self.ps.len().saturating_sub(1)
    }

    pub fn num_nodes(&self) -> usize {
        self.ps.first().map_or(0, Vec::len)
    }

    pub fn triple(&self, t: usize, node: usize) -> [f64; 3] {
        [self.ps[t][node], self.pi[t][node], self.pr[t][node]]
    }

    pub fn set_triple(&mut self, t: usize, node: usize, v: [f64; 3]) {
        self.ps[t][node] = v[0];
        self.pi[t][node] = v[1];
        self.pr[t][node] = v[2];
    }

    pub fn check_shape(&self, field: &'static str, horizon: usize, n: usize) -> Result<()> {
        for (name, arr) in [("ps", &self.ps), ("pi", &self.pi), ("pr", &self.pr)] {
            if arr.len() != horizon + 1 {
                return Err(Error::invalid(
                    field,
                    format!("{name} has {} rows, expected T+1 = {}", arr.len(), horizon + 1),
                ));
            }
            if let Some((t, row)) = arr.iter().enumerate().find(|(_, r)| r.len() != n) {
                return Err(Error::invalid(
                    field,
                    format!("{name}[{t}] has {} entries, expected {n}", row.len()),
                ));
            }
        }
        Ok(())
    }

    /// Largest `|ps + pi + pr - 1|` over all entries.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.ps.len() {
            for i in 0..self.ps[t].len() {
                let s = self.ps[t][i] + self.pi[t][i] + self.pr[t][i];
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &MarginalTrajectory) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in [(&self.ps, &other.ps), (&self.pi, &other.pi), (&self.pr, &other.pr)] {
            for (ra, rb) in a.iter().zip(b) {
                for (x, y) in ra.iter().zip(rb) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        [&self.ps, &self.pi, &self.pr]
            .iter()
            .all(|a| a.iter().flatten().all(|x| x.is_finite()))
    }

    /// Node order changes so that old node `i` lands on `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let remap = |a: &Vec<Vec<f64>>| {
            a.iter()
                .map(|row| {
                    let mut out = vec![0.0; row.len()];
                    for (i, &v) in row.iter().enumerate() {
                        out[perm[i]] = v;
                    }
                    out
                })
                .collect()
        };
        MarginalTrajectory {
            ps: remap(&self.ps),
            pi: remap(&self.pi),
            pr: remap(&self.pr),
        }
    }

    /// CSV with header `t,node,ps,pi,pr`, six decimals, one row per
    /// `(t, node)`. `comment` lines are emitted first, prefixed by `# `.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        out.push_str("t,node,ps,pi,pr\n");
        for t in 0..self.ps.len() {
            for i in 0..self.ps[t].len() {
                let _ = writeln!(
                    out,
                    "{t},{i},{:.6},{:.6},{:.6}",
                    self.ps[t][i], self.pi[t][i], self.pr[t][i]
                );
            }
        }
        out
    }

    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows: Vec<(usize, usize, [f64; 3])> = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "t,node,ps,pi,pr" {
                    return Err(Error::Parse(format!("line {}: unexpected header {line:?}", lineno + 1)));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("line {}: expected 5 fields", lineno + 1)));
            }
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 1));
            let t = fields[0].parse().map_err(|_| bad("t"))?;
            let node = fields[1].parse().map_err(|_| bad("node"))?;
            let mut v = [0.0; 3];
            for k in 0..3 {
                v[k] = fields[2 + k].parse().map_err(|_| bad("probability"))?;
            }
            rows.push((t, node, v));
        }
        let horizon = rows
            .iter()
            .map(|r| r.0)
            .max()
            .ok_or_else(|| Error::Parse("no rows".into()))?;
        let n = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
        if rows.len() != (horizon + 1) * n {
            return Err(Error::Parse(format!(
                "expected {} rows for T={horizon}, n={n}, got {}",
                (horizon + 1) * n,
                rows.len()
            )));
        }
        let mut out = MarginalTrajectory::zeros(horizon, n);
        for (t, node, v) in rows {
            out.set_triple(t, node, v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_condition() {
        let m = MarginalTrajectory::initial(2, 3, &[1]);
        assert_eq!(m.triple(0, 1), [0.0, 1.0, 0.0]);
        assert_eq!(m.triple(2, 0), [1.0, 0.0, 0.0]);
        assert_eq!(m.max_normalization_error(), 0.0);
    }

    #[test]
    fn csv_layout_and_reparse() {
        let mut m = MarginalTrajectory::initial(1, 2, &[0]);
        m.set_triple(1, 1, [0.25, 0.5, 0.25]);
        let csv = m.to_csv(Some("nedmp simulate"));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# nedmp simulate"));
        assert_eq!(lines.next(), Some("t,node,ps,pi,pr"));
        assert_eq!(lines.next(), Some("0,0,0.000000,1.000000,0.000000"));
        assert_eq!(csv.lines().last(), Some("1,1,0.250000,0.500000,0.250000"));
        let back = MarginalTrajectory::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_rejects_missing_rows() {
        let text = "t,node,ps,pi,pr\n0,0,1,0,0\n0,1,1,0,0\n1,0,1,0,0\n";
        assert!(MarginalTrajectory::from_csv(text.as_bytes()).is_err());
    }
}
