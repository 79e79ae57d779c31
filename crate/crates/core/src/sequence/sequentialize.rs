use std::collections::HashMap;

use super::events::{Event, EventKind};

/// Merges one user's events into a single time series.
///
/// Events are stably ordered by timestamp with contextual events ahead of
/// engagements at equal timestamps. Each contextual feature keeps only the
/// first event of every run of equal values.
pub fn sequentialize(events: &[Event]) -> Vec<Event> {
    let mut sorted: Vec<Event> = events.to_vec();
    sorted.sort_by_key(|e| (e.ts, !e.is_contextual()));
    let mut last: HashMap<u32, u64> = HashMap::new();
    sorted
        .into_iter()
        .filter(|e| match e.kind {
            EventKind::Engagement => true,
            EventKind::Contextual(c) => last.insert(c.feature_id, c.value_id) != Some(c.value_id),
        })
        .collect()
}

/// Groups events by user (ascending user id) and sequentializes each history.
pub fn sequentialize_users(events: &[Event]) -> Vec<(u64, Vec<Event>)> {
    let mut by_user: std::collections::BTreeMap<u64, Vec<Event>> = Default::default();
    for e in events {
        by_user.entry(e.user_id).or_default().push(*e);
    }
    by_user
        .into_iter()
        .map(|(u, evs)| (u, sequentialize(&evs)))
        .collect()
}
