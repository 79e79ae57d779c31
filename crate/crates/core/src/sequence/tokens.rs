//! Transduction instances: input tokens with per-position supervision.

use serde::{Deserialize, Serialize};

use super::events::{Context, Event, EventKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Content { item: u64, ts: i64 },
    Action { actions: u32, ts: i64 },
    /// An item together with the actions taken on it.
    Combined { item: u64, actions: u32, ts: i64 },
    Contextual { ctx: Context, ts: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Content,
    Action,
    Combined,
    Contextual,
}

impl Token {
    pub fn ts(&self) -> i64 {
        match *self {
            Token::Content { ts, .. }
            | Token::Action { ts, .. }
            | Token::Combined { ts, .. }
            | Token::Contextual { ts, .. } => ts,
        }
    }

    pub fn kind(&self) -> TokenKind {
        match self {
            Token::Content { .. } => TokenKind::Content,
            Token::Action { .. } => TokenKind::Action,
            Token::Combined { .. } => TokenKind::Combined,
            Token::Contextual { .. } => TokenKind::Contextual,
        }
    }

    pub fn item(&self) -> Option<u64> {
        match *self {
            Token::Content { item, .. } | Token::Combined { item, .. } => Some(item),
            _ => None,
        }
    }

    pub fn actions(&self) -> u32 {
        match *self {
            Token::Action { actions, .. } | Token::Combined { actions, .. } => actions,
            _ => 0,
        }
    }
}

/// Supervision at one position; `None` means the target is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    None,
    Actions(u32),
    Item(u64),
}

impl Target {
    pub fn is_defined(&self) -> bool {
        !matches!(self, Target::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Ranking,
    #[default]
    Retrieval,
    NextContent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub task: Task,
    pub tokens: Vec<Token>,
    pub targets: Vec<Target>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.tokens.iter().map(Token::ts).collect()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.iter().filter(|t| t.is_defined()).count()
    }

    /// Number of content-bearing tokens (content or combined).
    pub fn content_len(&self) -> usize {
        self.tokens.iter().filter(|t| t.item().is_some()).count()
    }
}

/// A contextual token to be placed among the engagement tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextToken {
    pub ctx: Context,
    pub ts: i64,
}

fn check_lengths(contents: &[u64], actions: &[u32], timestamps: &[i64]) -> Result<()> {
    if contents.len() != actions.len() || contents.len() != timestamps.len() {
        return Err(Error::Invalid(format!(
            "{} contents, {} actions and {} timestamps",
            contents.len(),
            actions.len(),
            timestamps.len()
        )));
    }
    Ok(())
}

/// Inserts contextual tokens ahead of the first group whose timestamp is not
/// earlier than theirs. `groups` are runs of (token, target) that share one
/// timestamp and must stay together.
fn merge_context(
    task: Task,
    groups: Vec<Vec<(Token, Target)>>,
    context: &[ContextToken],
) -> TokenSequence {
    let mut ctx: Vec<ContextToken> = context.to_vec();
    ctx.sort_by_key(|c| c.ts);
    let mut tokens = Vec::new();
    let mut targets = Vec::new();
    let mut ci = 0;
    for g in groups {
        let ts = g[0].0.ts();
        while ci < ctx.len() && ctx[ci].ts <= ts {
            tokens.push(Token::Contextual {
                ctx: ctx[ci].ctx,
                ts: ctx[ci].ts,
            });
            targets.push(Target::None);
            ci += 1;
        }
        for (tok, tgt) in g {
            tokens.push(tok);
            targets.push(tgt);
        }
    }
    for c in &ctx[ci..] {
        tokens.push(Token::Contextual { ctx: c.ctx, ts: c.ts });
        targets.push(Target::None);
    }
    TokenSequence {
        task,
        tokens,
        targets,
    }
}

/// `Φ0, a0, Φ1, a1, …` with the action as the target at each content position.
pub fn build_ranking_sequence(
    contents: &[u64],
    actions: &[u32],
    timestamps: &[i64],
    context: &[ContextToken],
) -> Result<TokenSequence> {
    check_lengths(contents, actions, timestamps)?;
    let groups = (0..contents.len())
        .map(|i| {
            let ts = timestamps[i];
            vec![
                (
                    Token::Content {
                        item: contents[i],
                        ts,
                    },
                    Target::Actions(actions[i]),
                ),
                (
                    Token::Action {
                        actions: actions[i],
                        ts,
                    },
                    Target::None,
                ),
            ]
        })
        .collect();
    Ok(merge_context(Task::Ranking, groups, context))
}

/// Combined `(Φi, ai)` tokens; position `i` targets `Φ(i+1)` when its
/// actions intersect `positive` and the next token is an engagement.
pub fn build_retrieval_sequence(
    contents: &[u64],
    actions: &[u32],
    timestamps: &[i64],
    positive: u32,
    context: &[ContextToken],
) -> Result<TokenSequence> {
    check_lengths(contents, actions, timestamps)?;
    let groups = (0..contents.len())
        .map(|i| {
            let target = match contents.get(i + 1) {
                Some(&next) if actions[i + 1] & positive != 0 => Target::Item(next),
                _ => Target::None,
            };
            vec![(
                Token::Combined {
                    item: contents[i],
                    actions: actions[i],
                    ts: timestamps[i],
                },
                target,
            )]
        })
        .collect();
    let mut seq = merge_context(Task::Retrieval, groups, context);
    clear_before_context(&mut seq);
    Ok(seq)
}

/// Interleaved like ranking; the action token `ai` targets `Φ(i+1)`.
pub fn build_next_content_sequence(
    contents: &[u64],
    actions: &[u32],
    timestamps: &[i64],
    context: &[ContextToken],
) -> Result<TokenSequence> {
    check_lengths(contents, actions, timestamps)?;
    let groups = (0..contents.len())
        .map(|i| {
            let ts = timestamps[i];
            let next = contents.get(i + 1).map_or(Target::None, |&n| Target::Item(n));
            vec![
                (
                    Token::Content {
                        item: contents[i],
                        ts,
                    },
                    Target::None,
                ),
                (
                    Token::Action {
                        actions: actions[i],
                        ts,
                    },
                    next,
                ),
            ]
        })
        .collect();
    let mut seq = merge_context(Task::NextContent, groups, context);
    clear_before_context(&mut seq);
    Ok(seq)
}

/// A position whose next token is contextual has no next-item target.
fn clear_before_context(seq: &mut TokenSequence) {
    for i in 0..seq.len().saturating_sub(1) {
        if seq.tokens[i + 1].kind() == TokenKind::Contextual {
            seq.targets[i] = Target::None;
        }
    }
}

/// Splits a sequentialized history into engagement columns and contextual tokens.
pub fn split_history(events: &[Event]) -> (Vec<u64>, Vec<u32>, Vec<i64>, Vec<ContextToken>) {
    let mut contents = Vec::new();
    let mut actions = Vec::new();
    let mut ts = Vec::new();
    let mut ctx = Vec::new();
    for e in events {
        match e.kind {
            EventKind::Engagement => {
                contents.push(e.item_id);
                actions.push(e.actions);
                ts.push(e.ts);
            }
            EventKind::Contextual(c) => ctx.push(ContextToken { ctx: c, ts: e.ts }),
        }
    }
    (contents, actions, ts, ctx)
}

/// Builds the instance for `task` from a sequentialized history.
pub fn build_sequence(events: &[Event], task: Task, positive: u32) -> TokenSequence {
    let (c, a, t, ctx) = split_history(events);
    match task {
        Task::Ranking => build_ranking_sequence(&c, &a, &t, &ctx),
        Task::Retrieval => build_retrieval_sequence(&c, &a, &t, positive, &ctx),
        Task::NextContent => build_next_content_sequence(&c, &a, &t, &ctx),
    }
    .expect("columns come from one event list")
}

/// Recovers `(Φ, a, t)` from an interleaved ranking sequence.
pub fn deinterleave_ranking(seq: &TokenSequence) -> (Vec<u64>, Vec<u32>, Vec<i64>) {
    let mut contents = Vec::new();
    let mut actions = Vec::new();
    let mut ts = Vec::new();
    for t in &seq.tokens {
        match *t {
            Token::Content { item, ts: s } => {
                contents.push(item);
                ts.push(s);
            }
            Token::Action { actions: a, .. } => actions.push(a),
            _ => {}
        }
    }
    (contents, actions, ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(seq: &TokenSequence) -> Vec<TokenKind> {
        seq.tokens.iter().map(Token::kind).collect()
    }

    #[test]
    fn ranking_two_items() {
        let s = build_ranking_sequence(&[10, 11], &[1, 2], &[5, 6], &[]).unwrap();
        assert_eq!(
            ids(&s),
            vec![TokenKind::Content, TokenKind::Action, TokenKind::Content, TokenKind::Action]
        );
        assert_eq!(
            s.targets,
            vec![Target::Actions(1), Target::None, Target::Actions(2), Target::None]
        );
        assert_eq!(s.tokens[1].ts(), 5);
    }

    #[test]
    fn ranking_empty_and_mismatch() {
        assert!(build_ranking_sequence(&[], &[], &[], &[]).unwrap().is_empty());
        assert!(build_ranking_sequence(&[1], &[], &[1], &[]).is_err());
    }

    #[test]
    fn ranking_with_leading_context() {
        let g = ContextToken {
            ctx: Context {
                feature_id: 0,
                value_id: 3,
            },
            ts: 1,
        };
        let s = build_ranking_sequence(&[10], &[4], &[2], &[g]).unwrap();
        assert_eq!(
            ids(&s),
            vec![TokenKind::Contextual, TokenKind::Content, TokenKind::Action]
        );
        assert_eq!(s.targets, vec![Target::None, Target::Actions(4), Target::None]);
    }

    #[test]
    fn retrieval_targets() {
        let s = build_retrieval_sequence(&[1, 2, 3], &[1, 1, 1], &[0, 1, 2], 1, &[]).unwrap();
        assert_eq!(s.targets, vec![Target::Item(2), Target::Item(3), Target::None]);
        let s = build_retrieval_sequence(&[1, 2, 3], &[0, 0, 0], &[0, 1, 2], 1, &[]).unwrap();
        assert!(s.targets.iter().all(|t| !t.is_defined()));
        let s = build_retrieval_sequence(&[1, 2, 3], &[1, 0, 1], &[0, 1, 2], 1, &[]).unwrap();
        assert_eq!(s.targets, vec![Target::None, Target::Item(3), Target::None]);
    }

    #[test]
    fn next_content_targets() {
        let s = build_next_content_sequence(&[1, 2], &[0, 0], &[0, 1], &[]).unwrap();
        assert_eq!(
            s.targets,
            vec![Target::None, Target::Item(2), Target::None, Target::None]
        );
        let s = build_next_content_sequence(&[1], &[0], &[0], &[]).unwrap();
        assert_eq!(s.targets, vec![Target::None, Target::None]);
        // the action token of item i targets item i + 1
        let items = [5u64, 6, 7, 8];
        let s = build_next_content_sequence(&items, &[0; 4], &[0, 1, 2, 3], &[]).unwrap();
        for i in 0..3 {
            assert_eq!(s.targets[2 * i + 1], Target::Item(items[i + 1]));
        }
    }

    #[test]
    fn context_breaks_next_item_target() {
        let g = ContextToken {
            ctx: Context {
                feature_id: 0,
                value_id: 3,
            },
            ts: 5,
        };
        let s = build_retrieval_sequence(&[1, 2], &[1, 1], &[0, 10], 1, &[g]).unwrap();
        assert_eq!(
            ids(&s),
            vec![TokenKind::Combined, TokenKind::Contextual, TokenKind::Combined]
        );
        assert_eq!(s.targets, vec![Target::None; 3]);
    }

    proptest! {
        #[test]
        fn ranking_round_trip(
            rows in proptest::collection::vec((0u64..1000, 0u32..16, 0i64..5), 0..30),
            ctx_ts in proptest::collection::vec(0i64..200, 0..5),
        ) {
            let mut t = 0;
            let contents: Vec<u64> = rows.iter().map(|r| r.0).collect();
            let actions: Vec<u32> = rows.iter().map(|r| r.1).collect();
            let ts: Vec<i64> = rows.iter().map(|r| { t += r.2; t }).collect();
            let ctx: Vec<ContextToken> = ctx_ts
                .iter()
                .map(|&ts| ContextToken { ctx: Context { feature_id: 1, value_id: 2 }, ts })
                .collect();
            let s = build_ranking_sequence(&contents, &actions, &ts, &ctx).unwrap();
            prop_assert_eq!(deinterleave_ranking(&s), (contents.clone(), actions.clone(), ts.clone()));
            for (tok, tgt) in s.tokens.iter().zip(&s.targets) {
                prop_assert_eq!(tok.kind() == TokenKind::Content, tgt.is_defined());
            }
            prop_assert!(s.tokens.windows(2).all(|w| w[0].ts() <= w[1].ts()));

            let r = build_retrieval_sequence(&contents, &actions, &ts, 1, &ctx).unwrap();
            if let Some(last) = r.targets.last() {
                prop_assert!(!last.is_defined());
            }
        }
    }
}
