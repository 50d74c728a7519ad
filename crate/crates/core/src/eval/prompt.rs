//! Prompt construction and response parsing for multiple-choice scoring.
//!
//! The template is versioned so accuracies are comparable across runs of
//! this harness. Parsing is deliberately conservative: anything ambiguous is
//! unparseable and scores as incorrect.

use crate::qa::QaPair;

/// Bump when the template text changes.
pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

/// Deterministic question/choices template. Vision prompts instruct the
/// model to use the attached image; blind prompts carry no image directive.
pub fn build_prompt(qa: &QaPair, blind: bool) -> String {
    let mut out = String::new();
    if blind {
        out.push_str("Answer the following question.\n");
    } else {
        out.push_str(
            "You are shown an image of an indoor scene. Answer the following question using the image.\n",
        );
    }
    out.push_str("Question: ");
    out.push_str(&qa.question);
    out.push_str("\nChoices:\n");
    for (i, choice) in qa.choices.iter().enumerate() {
        out.push((b'A' + i as u8) as char);
        out.push_str(". ");
        out.push_str(choice);
        out.push('\n');
    }
    out.push_str("Respond with exactly one of the choices, and nothing else.");
    out
}

/// Lowercase, keep alphanumerics, collapse whitespace.
fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Maps a raw model response onto a choice index, or `None` when
/// unparseable. Rules, in order: normalized exact match; unique prefix;
/// single-letter fallback; unique whole-word mention. Multiple mentions are
/// ambiguous and unparseable.
pub fn parse_response(raw: &str, choices: &[String]) -> Option<usize> {
    let norm = normalize(raw);
    if norm.is_empty() {
        return None;
    }
    let normalized_choices: Vec<String> = choices.iter().map(|c| normalize(c)).collect();

    // Exact match.
    if let Some(i) = normalized_choices.iter().position(|c| *c == norm) {
        return Some(i);
    }

    // Unique prefix of exactly one choice.
    let prefix_hits: Vec<usize> = normalized_choices
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with(&norm))
        .map(|(i, _)| i)
        .collect();
    if prefix_hits.len() == 1 {
        return Some(prefix_hits[0]);
    }

    // Choice-letter fallback: "B", "b", "(c)" after normalization.
    if norm.len() == 1 {
        let ch = norm.bytes().next().unwrap();
        if ch.is_ascii_lowercase() {
            let idx = (ch - b'a') as usize;
            if idx < choices.len() {
                return Some(idx);
            }
        }
    }

    // Unique whole-word mention of a choice inside a longer response.
    let padded = format!(" {norm} ");
    let mention_hits: Vec<usize> = normalized_choices
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty() && padded.contains(&format!(" {c} ")))
        .map(|(i, _)| i)
        .collect();
    if mention_hits.len() == 1 {
        return Some(mention_hits[0]);
    }

    None
}
