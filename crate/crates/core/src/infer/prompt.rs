use serde::{Deserialize, Serialize};

use crate::error::{Result, StagError};
use crate::tagdata::FewShotTask;

/// A rendered classification prompt. `system_text` holds everything up to
/// the test input; the user turn is the `Input:` line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub support_examples: Vec<(Vec<String>, String)>,
    pub test_tokens: Vec<String>,
    pub candidate_classes: Vec<String>,
}

impl PromptBundle {
    pub fn user_text(&self) -> String {
        format!("Input: {}", bracketed(&self.test_tokens))
    }

    /// The complete prompt as a single string.
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system_text, self.user_text())
    }
}

fn bracketed<S: AsRef<str>>(items: &[S]) -> String {
    let parts: Vec<&str> = items.iter().map(|s| s.as_ref()).collect();
    format!("[{}]", parts.join(", "))
}

fn check_candidates(candidates: &[String]) -> Result<()> {
    if candidates.is_empty() {
        return Err(StagError::invalid("no candidate classes"));
    }
    Ok(())
}

fn check_tokens(tokens: &[String], what: &str) -> Result<()> {
    if tokens.is_empty() {
        return Err(StagError::invalid(format!("{what} has no tokens")));
    }
    Ok(())
}

fn header(candidates: &[String]) -> String {
    format!(
        "You are an AI assistant tasked with classifying input word sequences into one of the following categories: {}.\n\n\
         You must choose strictly from these categories and no others.",
        bracketed(candidates)
    )
}

const CLOSING: &str = "**IMPORTANT:** Output only the category name and nothing else.";

/// Few-shot bundle from explicit `(tokens, class name)` examples.
pub fn fewshot_bundle(
    candidates: &[String],
    examples: Vec<(Vec<String>, String)>,
    test_tokens: &[String],
) -> Result<PromptBundle> {
    check_candidates(candidates)?;
    check_tokens(test_tokens, "test node")?;
    if examples.is_empty() {
        return Err(StagError::invalid(
            "few-shot prompt needs support examples; use the zero-shot renderer",
        ));
    }
    let mut blocks = Vec::with_capacity(examples.len());
    for (tokens, class) in &examples {
        check_tokens(tokens, "support example")?;
        if !candidates.contains(class) {
            return Err(StagError::invalid(format!("support class {class} is not a candidate")));
        }
        blocks.push(format!("Input: {}\nCategory: {class}", bracketed(tokens)));
    }
    let system_text = format!(
        "{}\n\n\
         Each category has characteristic patterns shown in its examples.\n\n\
         Here are examples of input sequences and their corresponding categories to guide you:\n\n\
         {}\n\n\
         When given a new input sequence, identify its key patterns and match them to the most similar category from the examples.\n\n\
         If no category is a clear match, choose the closest one.\n\n\
         {CLOSING}",
        header(candidates),
        blocks.join("\n\n"),
    );
    Ok(PromptBundle {
        system_text,
        support_examples: examples,
        test_tokens: test_tokens.to_vec(),
        candidate_classes: candidates.to_vec(),
    })
}

/// Few-shot bundle for `task`; `support_tokens[i]` belongs to
/// `task.support[i]`.
pub fn render_fewshot_prompt(
    task: &FewShotTask,
    support_tokens: &[Vec<String>],
    test_tokens: &[String],
) -> Result<PromptBundle> {
    if support_tokens.len() != task.support.len() {
        return Err(StagError::dims(
            "support token lists",
            task.support.len(),
            support_tokens.len(),
        ));
    }
    let examples = task
        .support
        .iter()
        .zip(support_tokens)
        .map(|(&(_, pos), tokens)| {
            let class = task.class_names.get(pos).ok_or_else(|| StagError::OutOfRange {
                context: "support class".into(),
                index: pos,
                bound: task.class_names.len(),
            })?;
            Ok((tokens.clone(), class.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    fewshot_bundle(&task.class_names, examples, test_tokens)
}

pub fn render_zeroshot_prompt(candidates: &[String], test_tokens: &[String]) -> Result<PromptBundle> {
    check_candidates(candidates)?;
    check_tokens(test_tokens, "test node")?;
    let system_text = format!(
        "{}\n\n\
         When given a new input sequence, classify it into one of the categories.\n\n\
         {CLOSING}",
        header(candidates)
    );
    Ok(PromptBundle {
        system_text,
        support_examples: Vec::new(),
        test_tokens: test_tokens.to_vec(),
        candidate_classes: candidates.to_vec(),
    })
}

/// Yes/no link prompt over the token lists of two nodes. Its candidates are
/// `Yes` and `No`.
pub fn render_link_prompt(tokens_u: &[String], tokens_v: &[String]) -> Result<PromptBundle> {
    check_tokens(tokens_u, "first node")?;
    check_tokens(tokens_v, "second node")?;
    let candidates = vec!["Yes".to_string(), "No".to_string()];
    let system_text = format!(
        "You are an AI assistant that decides whether two nodes of a graph are connected. \
         Each node is described by a list of words.\n\n\
         Node A: {}\n\
         Node B: {}\n\n\
         Answer Yes if the two nodes are likely linked and No otherwise.\n\n\
         **IMPORTANT:** Output only Yes or No and nothing else.",
        bracketed(tokens_u),
        bracketed(tokens_v)
    );
    Ok(PromptBundle {
        system_text,
        support_examples: Vec::new(),
        test_tokens: Vec::new(),
        candidate_classes: candidates,
    })
}
