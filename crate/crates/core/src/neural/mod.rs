//! Minimal dense reverse-mode autodiff: matrices, a recording tape, MLP and
//! GRU layers, and the Adam optimizer with its learning-rate schedule.

mod layers;
mod matrix;
mod optim;
mod params;
mod tape;

pub use layers::{Gru, GruSpec, Mlp, MlpSpec, OutputActivation};
pub use matrix::Matrix;
pub use optim::{early_stop, plateau_schedule, Adam, AdamConfig, Plateau, PlateauConfig};
pub use params::{Checkpoint, ParamEntry, ParamId, ParamStore};
pub use tape::{sigmoid, softmax_rows, Segments, Tape, Var};
