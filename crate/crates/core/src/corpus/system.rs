//! Scripted task assistant that answers user turns with templates.

use rand::Rng;

use crate::types::{Intent, Task};

/// Response used whenever a system mistake is injected.
pub const WRONG_RESPONSE: &str = "Sorry, something went wrong and I could not find that information.";
pub const FAREWELL: &str = "Happy to help! See you again soon!";

const FUN_FACTS: [&str; 4] = [
    "Here is a fun fact: honey never spoils if it is stored properly.",
    "Here is a fun fact: the first cookbook was written thousands of years ago.",
    "Here is a fun fact: carrots were originally purple.",
    "Here is a fun fact: a sharp tool is safer than a dull one.",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemReply {
    pub text: String,
    pub cursor: usize,
    pub error: bool,
}

fn read_step(task: &Task, cursor: usize, lead: &str) -> String {
    format!("{lead}Step {}: {}", cursor + 1, task.steps[cursor])
}

/// Produces the system's answer to a user turn. `cursor` is the index of the
/// current step and is clamped to the task bounds. With probability
/// `error_rate` the answer is replaced by [`WRONG_RESPONSE`], leaving the
/// cursor where it was; the farewell after `Stop` is never replaced.
pub fn system_respond<R: Rng + ?Sized>(
    intent: Intent,
    _utterance: &str,
    task: &Task,
    cursor: usize,
    error_rate: f64,
    rng: &mut R,
) -> SystemReply {
    let last = task.steps.len().saturating_sub(1);
    let cursor = cursor.min(last);
    // Both draws happen on every call so the stream position does not depend
    // on the intent.
    let error_draw: f64 = rng.gen();
    let variant: usize = rng.gen_range(0..FUN_FACTS.len());

    if intent != Intent::Stop && error_draw < error_rate {
        return SystemReply {
            text: WRONG_RESPONSE.to_string(),
            cursor,
            error: true,
        };
    }

    let (text, cursor) = match intent {
        Intent::Start => (read_step(task, 0, "Let's start! "), 0),
        Intent::NextStep if cursor < last => (read_step(task, cursor + 1, ""), cursor + 1),
        Intent::NextStep => (
            format!("That was the last step. You have finished {}!", task.title),
            cursor,
        ),
        Intent::PreviousStep => {
            let back = cursor.saturating_sub(1);
            (read_step(task, back, "Going back. "), back)
        }
        Intent::Repeat => (read_step(task, cursor, "Sure. "), cursor),
        Intent::Resume => (read_step(task, cursor, "Let's continue. "), cursor),
        Intent::Stop => (FAREWELL.to_string(), cursor),
        Intent::Question => (
            "Good question. Use the amount listed for this step and adjust it to your taste.".to_string(),
            cursor,
        ),
        Intent::Definition => (
            "Here is a short explanation: it is a common technique or tool used in tasks like this one."
                .to_string(),
            cursor,
        ),
        Intent::Replacement => (
            "You can usually replace it with something similar that you have at hand.".to_string(),
            cursor,
        ),
        Intent::GetFunFact => (FUN_FACTS[variant].to_string(), cursor),
        Intent::NewTask => (
            format!("I can only help with {} right now. Shall we continue?", task.title),
            cursor,
        ),
        Intent::ChitChat => (
            "I am doing well, thanks for asking! Let's keep going.".to_string(),
            cursor,
        ),
        Intent::Sensitive => ("Sorry, I cannot help with that.".to_string(), cursor),
        Intent::Fallback => (
            "Sorry, I did not understand that. You can say next to continue.".to_string(),
            cursor,
        ),
    };
    SystemReply {
        text,
        cursor,
        error: false,
    }
}
