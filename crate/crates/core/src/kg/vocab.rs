use std::collections::HashMap;

use crate::error::{Error, Result};

/// Dense name ↔ id mapping in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for name in names {
            let name = name.into();
            if v.index.contains_key(&name) {
                return Err(Error::Contract(format!(
                    "duplicate vocabulary entry `{name}`"
                )));
            }
            v.insert(name);
        }
        Ok(v)
    }

    fn insert(&mut self, name: String) -> usize {
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn get_or_insert(&mut self, name: &str) -> usize {
        match self.index.get(name) {
            Some(&id) => id,
            None => self.insert(name.to_string()),
        }
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
