//! Named strategies for the inner effort search and the outer contract
//! search, selectable at runtime.

use std::sync::Arc;

use crate::best_response::{DenseGrid, EffortSolver, GridPolish};
use crate::error::{Error, Result};
use crate::optimizer::{ContractOptimizer, MultistartPattern, SmcAnnealer};

pub const DEFAULT_OPTIMIZER: &str = "smc";
pub const DEFAULT_EFFORT_SOLVER: &str = "grid-polish";

#[derive(Debug, Clone)]
pub struct Registry {
    optimizers: Vec<Arc<dyn ContractOptimizer>>,
    effort_solvers: Vec<Arc<dyn EffortSolver>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register_optimizer(Arc::new(SmcAnnealer));
        r.register_optimizer(Arc::new(MultistartPattern::default()));
        r.register_effort_solver(Arc::new(GridPolish::default()));
        r.register_effort_solver(Arc::new(DenseGrid::default()));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            optimizers: Vec::new(),
            effort_solvers: Vec::new(),
        }
    }

    /// Registers an optimizer, replacing any existing one with the same name.
    pub fn register_optimizer(&mut self, optimizer: Arc<dyn ContractOptimizer>) {
        self.optimizers.retain(|o| o.name() != optimizer.name());
        self.optimizers.push(optimizer);
    }

    pub fn register_effort_solver(&mut self, solver: Arc<dyn EffortSolver>) {
        self.effort_solvers.retain(|s| s.name() != solver.name());
        self.effort_solvers.push(solver);
    }

    pub fn optimizer(&self, name: &str) -> Result<Arc<dyn ContractOptimizer>> {
        self.optimizers
            .iter()
            .find(|o| o.name() == name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                name: name.to_string(),
                available: self.optimizer_names().join(", "),
            })
    }

    pub fn effort_solver(&self, name: &str) -> Result<Arc<dyn EffortSolver>> {
        self.effort_solvers
            .iter()
            .find(|s| s.name() == name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                name: name.to_string(),
                available: self.effort_solver_names().join(", "),
            })
    }

    pub fn optimizer_names(&self) -> Vec<&'static str> {
        self.optimizers.iter().map(|o| o.name()).collect()
    }

    pub fn effort_solver_names(&self) -> Vec<&'static str> {
        self.effort_solvers.iter().map(|s| s.name()).collect()
    }
}
