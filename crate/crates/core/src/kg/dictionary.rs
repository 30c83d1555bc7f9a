use std::collections::HashMap;

/// Bijection between string labels and contiguous handles `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handles_are_contiguous_and_stable() {
        let mut d = Dictionary::new();
        assert_eq!(d.get_or_insert("a"), 0);
        assert_eq!(d.get_or_insert("b"), 1);
        assert_eq!(d.get_or_insert("a"), 0);
        assert_eq!(d.len(), 2);
        assert_eq!(d.label(1), Some("b"));
        assert_eq!(d.id("c"), None);
    }
}
