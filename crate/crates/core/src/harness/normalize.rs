use std::fmt;

use serde::{Deserialize, Serialize};

/// A model reply mapped onto the binary answer space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Yes,
    No,
    Unparseable,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Yes => "Yes",
            Label::No => "No",
            Label::Unparseable => "Unparseable",
        })
    }
}

/// Number of leading tokens searched for a yes/no.
pub const SCAN_WINDOW: usize = 5;

/// Lowercased alphanumeric runs of `raw`; punctuation and whitespace separate.
pub fn tokens(raw: &str) -> impl Iterator<Item = String> + '_ {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn first_token(raw: &str) -> Option<String> {
    tokens(raw).next()
}

/// Maps free text to Yes / No / Unparseable by the first exact `yes` or `no`
/// token among the first [`SCAN_WINDOW`] tokens.
pub fn normalize_answer(raw: &str) -> Label {
    for token in tokens(raw).take(SCAN_WINDOW) {
        match token.as_str() {
            "yes" => return Label::Yes,
            "no" => return Label::No,
            _ => {}
        }
    }
    Label::Unparseable
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_examples() {
        assert_eq!(normalize_answer("Yes, there is a dog in the image."), Label::Yes);
        assert_eq!(normalize_answer("No."), Label::No);
        assert_eq!(normalize_answer("There is a cat sitting in a basket"), Label::Unparseable);
    }

    #[test]
    fn window_and_ordering() {
        assert_eq!(normalize_answer("Sure, yes, it is"), Label::Yes);
        assert_eq!(normalize_answer("I think not... no, yes"), Label::No);
        assert_eq!(normalize_answer("one two three four five yes"), Label::Unparseable);
        assert_eq!(normalize_answer("one two three four yes"), Label::Yes);
        assert_eq!(normalize_answer("Nope, nothing"), Label::Unparseable);
        assert_eq!(normalize_answer("YES!!!"), Label::Yes);
        assert_eq!(normalize_answer(""), Label::Unparseable);
        assert_eq!(normalize_answer("«transport-error»"), Label::Unparseable);
    }

    #[test]
    fn first_token_examples() {
        assert_eq!(first_token("  No, there is no dog").as_deref(), Some("no"));
        assert_eq!(first_token("...").as_deref(), None);
    }

    proptest! {
        #[test]
        fn idempotent(raw in "(?s).{0,80}") {
            let label = normalize_answer(&raw);
            prop_assert_eq!(normalize_answer(&label.to_string()), label);
        }

        #[test]
        fn case_insensitive(raw in "[ -~\n]{0,80}") {
            prop_assert_eq!(normalize_answer(&raw.to_uppercase()), normalize_answer(&raw.to_lowercase()));
        }

        #[test]
        fn punctuation_insensitive(words in proptest::collection::vec("[a-zA-Z]{1,6}", 0..8), punct in "[.,!?;:]{1,3}") {
            let plain = words.join(" ");
            let noisy = words.join(&format!("{punct} "));
            prop_assert_eq!(normalize_answer(&plain), normalize_answer(&noisy));
        }
    }
}
