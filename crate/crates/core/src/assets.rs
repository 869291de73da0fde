//! Bundled graph, utterance pool and task assets, plus loaders for
//! replacements on disk.

use std::path::Path;
use std::sync::OnceLock;

use crate::corpus::{CorpusError, TransitionGraph, UtterancePool};
use crate::scorers::Scorers;
use crate::types::Task;

pub const GRAPH_JSON: &str = include_str!("../assets/graph.json");
pub const UTTERANCES_JSON: &str = include_str!("../assets/utterances.json");
pub const TASKS_COOKING_JSON: &str = include_str!("../assets/tasks_cooking.json");
pub const TASKS_DIY_JSON: &str = include_str!("../assets/tasks_diy.json");

/// Parses a task list and checks that every task has an id and steps.
pub fn parse_tasks(text: &str) -> Result<Vec<Task>, CorpusError> {
    let tasks: Vec<Task> = serde_json::from_str(text)?;
    if tasks.is_empty() {
        return Err(CorpusError::NoTasks);
    }
    if let Some(bad) = tasks.iter().find(|t| !t.is_valid()) {
        return Err(CorpusError::InvalidConfig(format!(
            "task `{}` has no id or no steps",
            bad.task_id
        )));
    }
    Ok(tasks)
}

pub fn load_tasks(path: &Path) -> Result<Vec<Task>, CorpusError> {
    parse_tasks(&std::fs::read_to_string(path)?)
}

pub fn load_graph(path: &Path) -> Result<TransitionGraph, CorpusError> {
    TransitionGraph::from_json_str(&std::fs::read_to_string(path)?)
}

pub fn load_pool(path: &Path, scorers: &Scorers) -> Result<UtterancePool, CorpusError> {
    UtterancePool::from_json_str(&std::fs::read_to_string(path)?, scorers)
}

/// Graph, utterance pool and cooking tasks used for generation, plus the
/// out-of-domain DIY tasks.
#[derive(Debug, Clone)]
pub struct Assets {
    pub graph: TransitionGraph,
    pub pool: UtterancePool,
    pub tasks: Vec<Task>,
    pub diy_tasks: Vec<Task>,
}

impl Assets {
    /// The assets compiled into the crate, parsed once.
    pub fn bundled() -> &'static Assets {
        static ASSETS: OnceLock<Assets> = OnceLock::new();
        ASSETS.get_or_init(|| {
            Assets::from_strs(GRAPH_JSON, UTTERANCES_JSON, TASKS_COOKING_JSON, TASKS_DIY_JSON)
                .expect("bundled assets are valid")
        })
    }

    pub fn from_strs(
        graph: &str,
        utterances: &str,
        tasks: &str,
        diy_tasks: &str,
    ) -> Result<Assets, CorpusError> {
        Ok(Assets {
            graph: TransitionGraph::from_json_str(graph)?,
            pool: UtterancePool::from_json_str(utterances, Scorers::bundled())?,
            tasks: parse_tasks(tasks)?,
            diy_tasks: parse_tasks(diy_tasks)?,
        })
    }
}

/// Task-disjoint partition of a task list.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplits {
    pub train: Vec<Task>,
    pub valid: Vec<Task>,
    pub test: Vec<Task>,
    /// Held back from corpus generation entirely; used for simulation.
    pub simulation: Vec<Task>,
}

impl TaskSplits {
    /// Splits by position in the list: 60% train, 10% valid, 10% test and
    /// the remaining 20% for simulation. Every part gets at least one task
    /// when the list has four or more.
    pub fn partition(tasks: &[Task]) -> TaskSplits {
        let n = tasks.len();
        let part = |share: usize| (n * share / 100).max(usize::from(n >= 4));
        let (n_valid, n_test, n_sim) = (part(10), part(10), part(20));
        let n_train = n.saturating_sub(n_valid + n_test + n_sim);
        let mut it = tasks.iter().cloned();
        let train = it.by_ref().take(n_train).collect();
        let valid = it.by_ref().take(n_valid).collect();
        let test = it.by_ref().take(n_test).collect();
        let simulation = it.collect();
        TaskSplits {
            train,
            valid,
            test,
            simulation,
        }
    }
}
