//! Class vocabulary: ordered class names with seen/unseen flags.
//!
//! Class order defines channel order everywhere downstream: prompts, logits,
//! and confusion matrices all index by this order. Seen classes come first,
//! novel classes after, so training-time tensors are prefixes of test-time
//! tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_INDEX: usize = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub seen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassVocabulary {
    pub classes: Vec<ClassEntry>,
    /// Prompt with a single `{}` placeholder for the class name.
    pub prompt_template: String,
    /// Label value excluded from loss and metrics; never a valid class index.
    pub ignore_index: usize,
}

impl ClassVocabulary {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_seen(&self) -> usize {
        self.classes.iter().filter(|c| c.seen).count()
    }

    pub fn seen_names(&self) -> Vec<&str> {
        self.classes.iter().filter(|c| c.seen).map(|c| c.name.as_str()).collect()
    }

    /// Render the prompt for class index `idx`.
    pub fn prompt(&self, idx: usize) -> String {
        self.prompt_template.replacen("{}", &self.classes[idx].name, 1)
    }

    pub fn is_valid_label(&self, value: usize) -> bool {
        value == self.ignore_index || value < self.classes.len()
    }

    /// Restrict to the seen prefix (the train-time vocabulary).
    pub fn seen_only(&self) -> ClassVocabulary {
        ClassVocabulary {
            classes: self.classes.iter().filter(|c| c.seen).cloned().collect(),
            prompt_template: self.prompt_template.clone(),
            ignore_index: self.ignore_index,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("vocabulary has no classes".into()));
        }
        if !self.classes.iter().any(|c| c.seen) {
            return Err(Error::Config("vocabulary needs at least one seen class".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.name.is_empty() {
                return Err(Error::Config(format!("class {i} has an empty name")));
            }
            for other in &self.classes[i + 1..] {
                if other.name == c.name {
                    return Err(Error::Config(format!("duplicate class name \"{}\"", c.name)));
                }
            }
        }
        if self.ignore_index < self.classes.len() {
            return Err(Error::Config(format!(
                "ignore_index {} collides with a valid class index",
                self.ignore_index
            )));
        }
        if !self.prompt_template.contains("{}") {
            return Err(Error::Config("prompt_template needs a {} placeholder".into()));
        }
        Ok(())
    }
}

/// Build the vocabulary from disjoint seen and novel class lists. The
/// train-time class set is exactly `seen`; the test-time set is seen + novel.
pub fn resolve_vocabulary(
    seen: &[String],
    novel: &[String],
    prompt_template: &str,
    ignore_index: usize,
) -> Result<ClassVocabulary> {
    let mut classes = Vec::with_capacity(seen.len() + novel.len());
    for name in seen {
        classes.push(ClassEntry { name: name.clone(), seen: true });
    }
    for name in novel {
        classes.push(ClassEntry { name: name.clone(), seen: false });
    }
    let vocab = ClassVocabulary {
        classes,
        prompt_template: prompt_template.to_string(),
        ignore_index,
    };
    vocab.validate()?;
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn five_class_vocabulary_with_three_seen() {
        let vocab = resolve_vocabulary(
            &names(&["Forest", "City", "Farmland"]),
            &names(&["Road", "Water"]),
            "a photo of {}",
            255,
        )
        .unwrap();
        assert_eq!(vocab.len(), 5);
        assert_eq!(vocab.num_seen(), 3);
        assert_eq!(vocab.prompt(3), "a photo of Road");
    }

    #[test]
    fn single_seen_class_is_legal() {
        let vocab = resolve_vocabulary(&names(&["a"]), &[], "a photo of {}", 255).unwrap();
        assert_eq!(vocab.len(), 1);
        assert_eq!(vocab.num_seen(), 1);
    }

    #[test]
    fn duplicate_across_lists_is_rejected() {
        let err = resolve_vocabulary(&names(&["a", "b"]), &names(&["b"]), "a photo of {}", 255)
            .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn empty_name_is_rejected() {
        let err =
            resolve_vocabulary(&names(&["a", ""]), &[], "a photo of {}", 255).unwrap_err();
        assert!(err.to_string().contains("empty name"));
    }

    #[test]
    fn ignore_index_must_not_be_a_class_index() {
        let err = resolve_vocabulary(&names(&["a", "b"]), &[], "a photo of {}", 1).unwrap_err();
        assert!(err.to_string().contains("ignore_index"));
    }

    #[test]
    fn seen_filter_reproduces_seen_list_in_order() {
        let seen = names(&["Forest", "City", "Farmland"]);
        let vocab =
            resolve_vocabulary(&seen, &names(&["Road"]), "a photo of {}", 255).unwrap();
        let filtered: Vec<String> =
            vocab.classes.iter().filter(|c| c.seen).map(|c| c.name.clone()).collect();
        assert_eq!(filtered, seen);
    }
}
