use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsField {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Observation vector layout, written as a JSON manifest at run start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub task: String,
    pub robots: Vec<String>,
    pub action_dim: usize,
    pub dim: usize,
    pub fields: Vec<ObsField>,
}

impl ObsLayout {
    pub fn new(task: impl Into<String>, robots: Vec<String>, action_dim: usize) -> Self {
        ObsLayout {
            task: task.into(),
            robots,
            action_dim,
            dim: 0,
            fields: vec![],
        }
    }

    pub fn push(&mut self, name: impl Into<String>, len: usize) {
        self.fields.push(ObsField {
            name: name.into(),
            offset: self.dim,
            len,
        });
        self.dim += len;
    }

    pub fn field(&self, name: &str) -> Option<&ObsField> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Slices of `obs` per field, in layout order.
    pub fn decode<'a, T>(&'a self, obs: &'a [T]) -> Vec<(&'a str, &'a [T])> {
        assert_eq!(obs.len(), self.dim, "observation length");
        self.fields
            .iter()
            .map(|f| (f.name.as_str(), &obs[f.offset..f.offset + f.len]))
            .collect()
    }

    /// Inverse of [`decode`](Self::decode). Every field must be given once
    /// with the right length; order does not matter.
    pub fn encode<T: Copy + Default>(&self, parts: &[(&str, &[T])]) -> Result<Vec<T>, String> {
        if parts.len() != self.fields.len() {
            return Err(format!("expected {} fields, got {}", self.fields.len(), parts.len()));
        }
        let mut out = vec![T::default(); self.dim];
        let mut seen = vec![false; self.fields.len()];
        for (name, data) in parts {
            let i = self
                .fields
                .iter()
                .position(|f| f.name == *name)
                .ok_or_else(|| format!("unknown field `{name}`"))?;
            let f = &self.fields[i];
            if data.len() != f.len {
                return Err(format!("field `{name}` needs {} values, got {}", f.len, data.len()));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("field `{name}` given twice"));
            }
            out[f.offset..f.offset + f.len].copy_from_slice(data);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }
}
