use thiserror::Error;

use super::{AgentContext, StandaloneContext};
use crate::agent::Agent;

/// Failure reported by a behavior or operation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct OpError(pub String);

impl From<String> for OpError {
    fn from(s: String) -> Self {
        OpError(s)
    }
}

impl From<&str> for OpError {
    fn from(s: &str) -> Self {
        OpError(s.to_owned())
    }
}

/// Operation applied to every agent in the parallel loop.
pub trait AgentOperation: Send + Sync {
    fn run(&self, agent: &mut Agent, ctx: &mut AgentContext<'_>) -> Result<(), OpError>;
}

impl<F> AgentOperation for F
where
    F: Fn(&mut Agent, &mut AgentContext<'_>) -> Result<(), OpError> + Send + Sync,
{
    fn run(&self, agent: &mut Agent, ctx: &mut AgentContext<'_>) -> Result<(), OpError> {
        self(agent, ctx)
    }
}

/// Operation that runs once per iteration on the control thread.
pub trait StandaloneOperation: Send {
    fn run(&mut self, ctx: &mut StandaloneContext<'_>) -> Result<(), OpError>;
}

impl<F> StandaloneOperation for F
where
    F: FnMut(&mut StandaloneContext<'_>) -> Result<(), OpError> + Send,
{
    fn run(&mut self, ctx: &mut StandaloneContext<'_>) -> Result<(), OpError> {
        self(ctx)
    }
}

/// When a standalone operation runs within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StandalonePhase {
    /// Before the environment update; may change agents.
    Pre,
    /// After the agent loop, before the commit; read-only.
    Mid,
    /// After the commit; may change agents.
    Post,
}

pub(crate) enum AgentOpKind {
    Behaviors,
    Mechanics,
    User(Box<dyn AgentOperation>),
}

pub(crate) struct Scheduled<T> {
    pub(crate) name: String,
    pub(crate) frequency: u64,
    pub(crate) op: T,
}

impl<T> Scheduled<T> {
    #[inline]
    pub(crate) fn is_due(&self, iteration: u64) -> bool {
        iteration % self.frequency == 0
    }
}
