use super::loss::total_on_tape;
use crate::error::{Error, Result};
use crate::graph::Instance;
use crate::models::{GraphIndex, Model};
use crate::neural::Tape;

/// Reverse-mode and central-difference derivative of one weight.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientSample {
    pub fn within(&self, rtol: f64, atol: f64) -> bool {
        (self.analytic - self.numeric).abs() <= atol + rtol * self.numeric.abs()
    }
}

fn loss_value(model: &Model, inst: &Instance, index: &GraphIndex, lambda: f64) -> Result<f64> {
    let labels = inst
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("labels", "missing"))?;
    let mut tape = Tape::new();
    let trace = model.forward(&mut tape, inst, index)?;
    let loss = total_on_tape(&mut tape, &trace, labels, lambda)?;
    Ok(tape.scalar(loss))
}

/// Compares the gradient of the total loss on `inst` with central
/// differences of step `h`, for every scalar weight of `model`.
pub fn check_gradients(model: &mut Model, inst: &Instance, lambda: f64, h: f64) -> Result<Vec<GradientSample>> {
    let labels = inst
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("labels", "missing"))?;
    let index = GraphIndex::new(&inst.graph);
    let mut tape = Tape::new();
    let trace = model.forward(&mut tape, inst, &index)?;
    let loss = total_on_tape(&mut tape, &trace, labels, lambda)?;
    model.store_mut().zero_grads();
    tape.backward(loss, model.store_mut())?;
    drop(tape);

    let mut samples = Vec::new();
    for id in model.store().ids().collect::<Vec<_>>() {
        let name = model.store().name(id).to_string();
        let grad = model.store().grad(id).clone();
        for k in 0..grad.data().len() {
            let original = model.store().value(id).data()[k];
            model.store_mut().value_mut(id).data_mut()[k] = original + h;
            let up = loss_value(model, inst, &index, lambda)?;
            model.store_mut().value_mut(id).data_mut()[k] = original - h;
            let down = loss_value(model, inst, &index, lambda)?;
            model.store_mut().value_mut(id).data_mut()[k] = original;
            samples.push(GradientSample {
                param: name.clone(),
                index: k,
                analytic: grad.data()[k],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    Ok(samples)
}
