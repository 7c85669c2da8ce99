use super::{AggregateState, AggregationError};
use serde::{Deserialize, Serialize};

/// How often a label shows up in tasks of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRarity {
    pub task_type: String,
    pub label: String,
    /// Total occurrences, repeats within one task included.
    pub occurrence_count: u64,
    /// Task instances containing the label at least once.
    pub presence_count: u64,
    /// All ingested instances of `task_type`.
    pub instance_count: u64,
    /// `presence_count / instance_count`, in `(0, 1]`.
    pub frequency: f64,
}

/// How often instances of one type invoke a child of another type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFrequency {
    pub parent_type: String,
    pub child_type: String,
    /// Parent instances with at least one such invocation.
    pub count: u64,
    /// Total invocation edges, repeats included.
    pub invocation_count: u64,
    pub parent_instance_count: u64,
    /// `count / parent_instance_count`, in `(0, 1]`.
    pub frequency: f64,
}

pub fn event_rarity(
    state: &impl AggregateState,
    task_type: &str,
    label: &str,
) -> Result<EventRarity, AggregationError> {
    let instances = state
        .type_instance_count(task_type)
        .filter(|n| *n > 0)
        .ok_or_else(|| AggregationError::UnknownType(task_type.to_string()))?;
    let counts = state
        .event_counts(task_type, label)
        .filter(|c| c.instances > 0)
        .ok_or_else(|| AggregationError::UnknownLabel {
            task_type: task_type.to_string(),
            label: label.to_string(),
        })?;
    Ok(EventRarity {
        task_type: task_type.to_string(),
        label: label.to_string(),
        occurrence_count: counts.occurrences,
        presence_count: counts.instances,
        instance_count: instances,
        frequency: counts.instances as f64 / instances as f64,
    })
}

pub fn edge_frequency(
    state: &impl AggregateState,
    parent_type: &str,
    child_type: &str,
) -> Result<EdgeFrequency, AggregationError> {
    let instances = state
        .type_instance_count(parent_type)
        .filter(|n| *n > 0)
        .ok_or_else(|| AggregationError::UnknownType(parent_type.to_string()))?;
    let counts = state
        .invocation_counts(parent_type, child_type)
        .filter(|c| c.instances > 0)
        .ok_or_else(|| AggregationError::UnknownEdge {
            parent: parent_type.to_string(),
            child: child_type.to_string(),
        })?;
    Ok(EdgeFrequency {
        parent_type: parent_type.to_string(),
        child_type: child_type.to_string(),
        count: counts.instances,
        invocation_count: counts.occurrences,
        parent_instance_count: instances,
        frequency: counts.instances as f64 / instances as f64,
    })
}
