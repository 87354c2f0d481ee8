//! Pipeline expressions: grammar, feasibility rules and training.

mod expr;
mod fit;
mod parse;
mod validate;

pub use expr::{Expr, VoteMode};
pub use fit::{
    fit_arrays, fit_pipeline, output, predict_pipeline, Fitted, MinMaxScaler, Output, TrainedPipeline, TrainingData,
    CALIBRATION_FRACTION, STACK_FOLDS,
};
pub use parse::parse;
pub use validate::{validate, FeasibilityError, Rule};
