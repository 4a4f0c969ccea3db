//! Offline rule-based generator.
//!
//! Caption words are matched against a lexicon of objects, attributes and
//! actions. Factual items ask about matched terms; contrastive items ask
//! about terms listed as confusable with a matched term (and absent from the
//! caption). Output follows the same line protocol a real generator is asked
//! to produce.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationParams, TextBackend};
use crate::io::{self, IoError};
use crate::promptgen::{Category, PromptKind, PromptRequest};

const BUNDLED_LEXICON: &str = include_str!("../../assets/stub_lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub objects: Vec<String>,
    pub attributes: Vec<String>,
    pub actions: Vec<String>,
    pub confusions: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_LEXICON).expect("bundled lexicon is valid JSON")
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        io::read_json(path)
    }

    fn category_of(&self, word: &str) -> Option<Category> {
        let has = |list: &[String]| list.iter().any(|w| w == word);
        if has(&self.objects) {
            Some(Category::Object)
        } else if has(&self.attributes) {
            Some(Category::Attribute)
        } else if has(&self.actions) {
            Some(Category::Action)
        } else {
            None
        }
    }

    /// Lexicon terms of `caption`, in order of first appearance. Plural
    /// object nouns ("dogs") match their singular entry.
    pub fn match_terms(&self, caption: &str) -> Vec<(String, Category)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for word in words(caption) {
            let hit = self.category_of(&word).map(|c| (word.clone(), c)).or_else(|| {
                let singular = word.strip_suffix('s')?;
                match self.category_of(singular) {
                    Some(Category::Object) => Some((singular.to_string(), Category::Object)),
                    _ => None,
                }
            });
            if let Some((term, cat)) = hit {
                if seen.insert(term.clone()) {
                    out.push((term, cat));
                }
            }
        }
        out
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn article(noun: &str) -> &'static str {
    match noun.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn question(term: &str, category: Category, variant: u64) -> String {
    let a = article(term);
    match (category, variant % 2) {
        (Category::Action, 0) => format!("Is the action \"{term}\" shown in the image?"),
        (Category::Action, _) => format!("Can you see the action \"{term}\" in the image?"),
        (Category::Attribute, 0) => format!("Is anything {term} in the image?"),
        (Category::Attribute, _) => format!("Can you see anything {term} in the image?"),
        (_, 0) => format!("Is there {a} {term} in the image?"),
        (_, _) => format!("Can you see {a} {term} in the image?"),
    }
}

fn factual_explanation(term: &str, category: Category) -> String {
    match category {
        Category::Action => format!("Yes, the image shows the action \"{term}\" taking place in the scene."),
        Category::Attribute => {
            format!("Yes, the image shows something {term}; that detail is clearly visible in the scene.")
        }
        _ => format!("Yes, the image shows {} {term}; it is clearly visible in the scene.", article(term)),
    }
}

fn contrastive_explanation(absent: &str, present: &str, category: Category) -> String {
    match category {
        Category::Action => {
            format!("No, the action \"{absent}\" is not happening; the image shows \"{present}\" instead.")
        }
        Category::Attribute => {
            format!("No, nothing in the image is {absent}; the image shows something {present} instead.")
        }
        _ => format!(
            "No, there is no {absent}; the image shows {} {present} instead.",
            article(present)
        ),
    }
}

struct Item {
    question: String,
    answer: String,
    category: Category,
}

/// Deterministic reply to a `kind` prompt about `caption`.
///
/// `seed` selects the question phrasing. A caption without lexicon matches
/// yields an empty reply.
pub fn stub_generate(lexicon: &Lexicon, kind: PromptKind, caption: &str, seed: u64) -> String {
    let terms = lexicon.match_terms(caption);
    let present: HashSet<String> = words(caption).collect();
    let cot = kind == PromptKind::Cit;

    let mut items = Vec::new();
    if matches!(kind, PromptKind::Factual | PromptKind::Cit) {
        for (term, cat) in &terms {
            items.push(Item {
                question: question(term, *cat, seed),
                answer: if cot { factual_explanation(term, *cat) } else { "Yes".into() },
                category: *cat,
            });
        }
    }
    if matches!(kind, PromptKind::Contrastive | PromptKind::Cit) {
        let mut asked = HashSet::new();
        for (term, cat) in &terms {
            for confusable in lexicon.confusions.get(term).into_iter().flatten() {
                let confusable = confusable.to_lowercase();
                if present.contains(&confusable) || terms.iter().any(|(t, _)| *t == confusable) {
                    continue;
                }
                if !asked.insert(confusable.clone()) {
                    continue;
                }
                items.push(Item {
                    question: question(&confusable, *cat, seed),
                    answer: if cot {
                        contrastive_explanation(&confusable, term, *cat)
                    } else {
                        "No".into()
                    },
                    category: *cat,
                });
            }
        }
    }

    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        out.push_str(&format!(
            "{}. Q: {}\nA: {}\nC: {}\n",
            i + 1,
            item.question,
            item.answer,
            item.category.as_str()
        ));
    }
    out
}

/// [`TextBackend`] that answers with [`stub_generate`].
#[derive(Debug, Clone)]
pub struct StubBackend {
    lexicon: Lexicon,
    delay: Option<Duration>,
}

impl StubBackend {
    pub fn new(lexicon: Lexicon) -> Self {
        StubBackend { lexicon, delay: None }
    }

    /// Sleeps this long per call, to make runs observable mid-flight.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay).filter(|d| !d.is_zero());
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl Default for StubBackend {
    fn default() -> Self {
        StubBackend::new(Lexicon::bundled())
    }
}

#[async_trait]
impl TextBackend for StubBackend {
    fn id(&self) -> &str {
        "stub"
    }

    async fn generate(&self, request: &PromptRequest, params: &GenerationParams) -> Result<String, BackendError> {
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        }
        Ok(stub_generate(&self.lexicon, request.kind, &request.caption, params.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAPTION: &str = "A grey cat sits in a basket.";

    #[test]
    fn bundled_lexicon_has_confusions_for_core_terms() {
        let lex = Lexicon::bundled();
        for term in ["cat", "grey", "sits", "basket"] {
            assert!(lex.confusions.contains_key(term), "{term}");
        }
    }

    #[test]
    fn matches_in_caption_order() {
        let lex = Lexicon::bundled();
        let terms = lex.match_terms(CAPTION);
        assert_eq!(
            terms,
            vec![
                ("grey".to_string(), Category::Attribute),
                ("cat".to_string(), Category::Object),
                ("sits".to_string(), Category::Action),
                ("basket".to_string(), Category::Object),
            ]
        );
        let plural = lex.match_terms("Two dogs running on the beach.");
        assert_eq!(plural[0], ("dog".to_string(), Category::Object));
    }

    #[test]
    fn factual_golden() {
        let text = stub_generate(&Lexicon::bundled(), PromptKind::Factual, CAPTION, 0);
        let expected = "\
1. Q: Is anything grey in the image?
A: Yes
C: attribute
2. Q: Is there a cat in the image?
A: Yes
C: object
3. Q: Is the action \"sits\" shown in the image?
A: Yes
C: action
4. Q: Is there a basket in the image?
A: Yes
C: object
";
        assert_eq!(text, expected);
    }

    #[test]
    fn contrastive_skips_terms_present_in_caption() {
        let text = stub_generate(&Lexicon::bundled(), PromptKind::Contrastive, "A man and a woman on a bench.", 0);
        assert!(!text.contains("Is there a woman"), "{text}");
        assert!(!text.contains("Is there a man"), "{text}");
        let text = stub_generate(&Lexicon::bundled(), PromptKind::Contrastive, CAPTION, 0);
        assert!(text.contains("Is there a dog in the image?\nA: No"));
        assert!(text.contains("Is anything black in the image?"));
        assert!(text.lines().filter(|l| l.starts_with("A: ")).all(|l| l == "A: No"));
    }

    #[test]
    fn cit_has_both_polarities_with_explanations() {
        let text = stub_generate(&Lexicon::bundled(), PromptKind::Cit, CAPTION, 0);
        assert!(text.contains("A: Yes, the image shows a cat; it is clearly visible in the scene."));
        assert!(text.contains("A: No, there is no dog; the image shows a cat instead."));
    }

    #[test]
    fn no_match_gives_empty_reply() {
        assert_eq!(stub_generate(&Lexicon::bundled(), PromptKind::Factual, "xyzzy", 0), "");
        assert_eq!(stub_generate(&Lexicon::bundled(), PromptKind::Cit, "xyzzy", 3), "");
    }

    #[test]
    fn seed_selects_phrasing_deterministically() {
        let lex = Lexicon::bundled();
        let a = stub_generate(&lex, PromptKind::Factual, CAPTION, 1);
        assert_eq!(a, stub_generate(&lex, PromptKind::Factual, CAPTION, 1));
        assert!(a.contains("Can you see a cat in the image?"));
        assert_eq!(
            stub_generate(&lex, PromptKind::Factual, CAPTION, 0),
            stub_generate(&lex, PromptKind::Factual, CAPTION, 2)
        );
    }
}
