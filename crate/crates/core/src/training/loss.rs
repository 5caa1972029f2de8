use crate::error::{Error, Result};
use crate::models::Trace;
use crate::neural::{Matrix, Tape, Var};
use crate::trajectory::MarginalTrajectory;

/// Probabilities are floored here inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_pair(pred: &MarginalTrajectory, labels: &MarginalTrajectory) -> Result<(usize, usize)> {
    let (t, n) = (pred.horizon(), pred.num_nodes());
    labels.check_shape("labels", t, n)?;
    if t == 0 || n == 0 {
        return Err(Error::invalid("labels", "loss needs at least one node and one step"));
    }
    Ok((t, n))
}

/// Mean cross-entropy of the predicted (S, I, R) triples against the
/// labels over nodes and steps `1..=T`.
pub fn loss_ce(pred: &MarginalTrajectory, labels: &MarginalTrajectory) -> Result<f64> {
    let (horizon, n) = check_pair(pred, labels)?;
    let mut total = 0.0;
    for t in 1..=horizon {
        for i in 0..n {
            let (p, q) = (pred.triple(t, i), labels.triple(t, i));
            total -= (0..3).map(|s| q[s] * p[s].max(LOG_FLOOR).ln()).sum::<f64>();
        }
    }
    Ok(total / (n * horizon) as f64)
}

/// Total increase of `P_S` plus total decrease of `P_R` between
/// consecutive steps; zero for any monotone trajectory.
pub fn loss_monotone(pred: &MarginalTrajectory) -> f64 {
    let mut total = 0.0;
    for t in 0..pred.horizon() {
        for i in 0..pred.num_nodes() {
            total += (pred.ps[t + 1][i] - pred.ps[t][i]).max(0.0);
            total += (pred.pr[t][i] - pred.pr[t + 1][i]).max(0.0);
        }
    }
    total
}

pub fn loss_total(pred: &MarginalTrajectory, labels: &MarginalTrajectory, lambda: f64) -> Result<f64> {
    Ok(loss_ce(pred, labels)? + lambda * loss_monotone(pred))
}

/// Mean L1 distance between predicted and label triples over nodes and
/// steps `1..=T`; lies in `[0, 2]` for normalized inputs.
pub fn l1_metric(pred: &MarginalTrajectory, labels: &MarginalTrajectory) -> Result<f64> {
    let (horizon, n) = check_pair(pred, labels)?;
    let mut total = 0.0;
    for t in 1..=horizon {
        for i in 0..n {
            let (p, q) = (pred.triple(t, i), labels.triple(t, i));
            total += (0..3).map(|s| (p[s] - q[s]).abs()).sum::<f64>();
        }
    }
    Ok(total / (n * horizon) as f64)
}

/// [`loss_ce`] recorded on the tape.
pub fn ce_on_tape(tape: &mut Tape, trace: &Trace, labels: &MarginalTrajectory) -> Result<Var> {
    let (horizon, n) = (trace.horizon(), labels.num_nodes());
    labels.check_shape("labels", horizon, n)?;
    if horizon == 0 || n == 0 {
        return Err(Error::invalid("labels", "loss needs at least one node and one step"));
    }
    let mut acc: Option<Var> = None;
    for t in 1..=horizon {
        let p = tape.concat(&[trace.ps[t], trace.pi[t], trace.pr[t]]);
        let logp = tape.log_floor(p, LOG_FLOOR);
        let q = Matrix::from_rows(&(0..n).map(|i| labels.triple(t, i).to_vec()).collect::<Vec<_>>())?;
        let q = tape.constant(q);
        let weighted = tape.mul(logp, q);
        let s = tape.sum(weighted);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    let acc = acc.expect("horizon is positive");
    Ok(tape.affine(acc, -1.0 / (n * horizon) as f64, 0.0))
}

/// [`loss_monotone`] recorded on the tape.
pub fn monotone_on_tape(tape: &mut Tape, trace: &Trace) -> Var {
    let mut acc = tape.constant(Matrix::zeros(1, 1));
    for t in 0..trace.horizon() {
        let rise = tape.sub(trace.ps[t + 1], trace.ps[t]);
        let rise = tape.relu(rise);
        let fall = tape.sub(trace.pr[t], trace.pr[t + 1]);
        let fall = tape.relu(fall);
        let both = tape.add(rise, fall);
        let s = tape.sum(both);
        acc = tape.add(acc, s);
    }
    acc
}

/// Cross-entropy plus `lambda` times the monotonicity penalty, on the tape.
pub fn total_on_tape(tape: &mut Tape, trace: &Trace, labels: &MarginalTrajectory, lambda: f64) -> Result<Var> {
    let ce = ce_on_tape(tape, trace, labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let mono = monotone_on_tape(tape, trace);
    let mono = tape.affine(mono, lambda, 0.0);
    Ok(tape.add(ce, mono))
}
