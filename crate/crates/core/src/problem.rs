use crate::cost::CostSpec;
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::sde::TimeGrid;

/// Dynamics, cost and time grid of one control task.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: DynamicsModel,
    pub cost: CostSpec,
    pub grid: TimeGrid,
}

impl Problem {
    pub fn new(model: DynamicsModel, cost: CostSpec, grid: TimeGrid) -> Result<Self> {
        if cost.n_x() != model.n_x() || cost.n_u() != model.n_u() {
            return Err(Error::Dimension(format!(
                "cost is for n_x={}, n_u={}; model has n_x={}, n_u={}",
                cost.n_x(),
                cost.n_u(),
                model.n_x(),
                model.n_u()
            )));
        }
        Ok(Self { model, cost, grid })
    }
}
