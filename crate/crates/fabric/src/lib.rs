//! Task distribution: a lease-based broker, the evaluator subprocess
//! protocol, deployment probes, reward scalarization and the worker loop.

pub mod broker;
pub mod clock;
pub mod evaluator;
pub mod objective;
pub mod task;
pub mod worker;

pub use broker::{Broker, BrokerConfig, BrokerError, BrokerEvent, ReportAck, TaskBroker};
pub use clock::{Clock, RealClock, SimClock};
pub use evaluator::{deploy_probe, evaluate, EvalError, EvalInput, EvalOutput};
pub use objective::{combine_reward, pareto_front, Constraint, Direction, ObjectiveError, ObjectiveSpec, RewardMode};
pub use task::{Lease, RewardRecord, Task, TaskKey, TaskOutcome, TaskState, TaskView};
pub use worker::{worker_loop, Evaluator, FnEvaluator, SubprocessEvaluator, WorkerConfig, WorkerControl, WorkerStats};
