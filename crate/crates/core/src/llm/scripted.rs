//! Deterministic provider for tests: an ordered list of (matcher, reply)
//! rules consulted top to bottom.

use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;
use regex::Regex;

use super::{render_messages, ChatMessage, ChatProvider, LlmError};

/// Selects which prompts a rule answers. Matched against the rendered
/// prompt (all messages).
#[derive(Debug, Clone)]
pub enum Matcher {
    Any,
    Contains(String),
    Regex(Regex),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Regex(re) => re.is_match(prompt),
        }
    }
}

type DynReply = dyn Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync;

#[derive(Clone)]
pub enum Reply {
    Text(String),
    Fail { status: Option<u16>, message: String },
    With(Arc<DynReply>),
}

impl Reply {
    pub fn with(f: impl Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        Reply::With(Arc::new(f))
    }
}

struct Rule {
    matcher: Matcher,
    reply: Reply,
    /// `None` means unlimited.
    remaining: Option<usize>,
}

#[derive(Default)]
pub struct ScriptedProvider {
    rules: Mutex<Vec<Rule>>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
    fallback: Option<Arc<dyn ChatProvider>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unmatched prompts go to `fallback` instead of failing.
    pub fn with_fallback(fallback: Arc<dyn ChatProvider>) -> Self {
        Self {
            fallback: Some(fallback),
            ..Self::default()
        }
    }

    /// Queues a one-shot reply for the next prompt, whatever it is.
    pub fn push(&self, text: impl Into<String>) -> &Self {
        self.rule(Matcher::Any, Reply::Text(text.into()), Some(1))
    }

    /// Answers prompts containing `needle` once.
    pub fn once(&self, needle: impl Into<String>, reply: Reply) -> &Self {
        self.rule(Matcher::Contains(needle.into()), reply, Some(1))
    }

    /// Answers prompts containing `needle` every time.
    pub fn always(&self, needle: impl Into<String>, reply: Reply) -> &Self {
        self.rule(Matcher::Contains(needle.into()), reply, None)
    }

    pub fn rule(&self, matcher: Matcher, reply: Reply, times: Option<usize>) -> &Self {
        self.rules.lock().push(Rule {
            matcher,
            reply,
            remaining: times,
        });
        self
    }

    /// One-shot rules not yet consumed.
    pub fn pending(&self) -> usize {
        self.rules.lock().iter().filter(|r| r.remaining.is_some()).count()
    }

    /// Every prompt received, in order.
    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().clone()
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        self.calls.lock().push(messages.to_vec());
        let prompt = render_messages(messages);
        let reply = {
            let mut rules = self.rules.lock();
            let pos = rules.iter().position(|r| r.matcher.matches(&prompt));
            pos.map(|i| {
                let reply = rules[i].reply.clone();
                if let Some(n) = rules[i].remaining.as_mut() {
                    *n -= 1;
                    if *n == 0 {
                        rules.remove(i);
                    }
                }
                reply
            })
        };
        match reply {
            Some(Reply::Text(t)) => Ok(t),
            Some(Reply::Fail { status, message }) => Err(LlmError::Unavailable { status, message }),
            Some(Reply::With(f)) => f(messages),
            None => match &self.fallback {
                Some(fb) => fb.complete(messages).await,
                None => {
                    let head: String = prompt.chars().take(120).collect();
                    Err(LlmError::UnmatchedPrompt(head))
                }
            },
        }
    }
}
