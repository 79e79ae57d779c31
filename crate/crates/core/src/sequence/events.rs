use serde::{Deserialize, Serialize};

/// A contextual (non-engagement) feature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    pub feature_id: u32,
    pub value_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Engagement,
    Contextual(Context),
}

/// One logged interaction or feature change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub user_id: u64,
    pub item_id: u64,
    /// Bit `e` set when atomic event `e` fired.
    pub actions: u32,
    pub ts: i64,
    pub kind: EventKind,
}

impl Event {
    pub fn engagement(user_id: u64, item_id: u64, actions: u32, ts: i64) -> Self {
        Self {
            user_id,
            item_id,
            actions,
            ts,
            kind: EventKind::Engagement,
        }
    }

    pub fn contextual(user_id: u64, feature_id: u32, value_id: u64, ts: i64) -> Self {
        Self {
            user_id,
            item_id: 0,
            actions: 0,
            ts,
            kind: EventKind::Contextual(Context {
                feature_id,
                value_id,
            }),
        }
    }

    pub fn is_contextual(&self) -> bool {
        matches!(self.kind, EventKind::Contextual(_))
    }
}

/// Wire format of one JSON-lines record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct EventRecord {
    pub user_id: u64,
    #[serde(default)]
    pub item_id: u64,
    #[serde(default)]
    pub actions: u32,
    pub ts: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx: Option<Context>,
}

impl From<EventRecord> for Event {
    fn from(r: EventRecord) -> Self {
        Event {
            user_id: r.user_id,
            item_id: r.item_id,
            actions: r.actions,
            ts: r.ts,
            kind: match r.ctx {
                Some(c) => EventKind::Contextual(c),
                None => EventKind::Engagement,
            },
        }
    }
}

impl From<&Event> for EventRecord {
    fn from(e: &Event) -> Self {
        EventRecord {
            user_id: e.user_id,
            item_id: e.item_id,
            actions: e.actions,
            ts: e.ts,
            ctx: match e.kind {
                EventKind::Contextual(c) => Some(c),
                EventKind::Engagement => None,
            },
        }
    }
}
