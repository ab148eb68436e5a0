//! The `key = value` configuration format shared by every module.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("{0}")]
    Io(String),
}

/// Ordered entries; keys may repeat (e.g. several `inject` lines).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvFile {
    pub entries: Vec<(String, String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            entries.push((k.to_string(), v.trim().to_string(), i + 1));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|e| KvError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Last value bound to `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|e| e.0 == key).map(|e| e.1.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries.iter().filter(|e| e.0 == key).map(|e| e.1.as_str()).collect()
    }

    /// Entries whose key starts with `prefix`, in file order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter_map(move |e| e.0.strip_prefix(prefix).map(|rest| (rest, e.1.as_str())))
    }

    fn bad(key: &str, value: &str) -> KvError {
        KvError::Value { key: key.to_string(), value: value.to_string() }
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| Self::bad(key, v)),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse_number(v).map(Some).ok_or_else(|| Self::bad(key, v)),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, KvError> {
        self.get_parsed(key)
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, KvError> {
        self.get_parsed(key)
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, KvError> {
        self.get_parsed(key)
    }

    /// `lo,hi`
    pub fn get_pair(&self, key: &str) -> Result<Option<(f64, f64)>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                match parts.as_slice() {
                    [a, b] => match (parse_number(a), parse_number(b)) {
                        (Some(a), Some(b)) => Ok(Some((a, b))),
                        _ => Err(Self::bad(key, v)),
                    },
                    _ => Err(Self::bad(key, v)),
                }
            }
        }
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }
}

/// Decimal number or fraction `p/q`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let (p, q): (f64, f64) = (p.trim().parse().ok()?, q.trim().parse().ok()?);
        return (q != 0.0).then_some(p / q);
    }
    s.parse().ok()
}
