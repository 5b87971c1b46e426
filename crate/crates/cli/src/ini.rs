//! Minimal sectioned key-value reader: `[section]` headers, `key = value`
//! lines, `#` or `;` comments. Keys before the first header belong to the
//! root section `""`.

use std::collections::BTreeMap;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ini {
    pub sections: BTreeMap<String, BTreeMap<String, Value>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Value {
    pub text: String,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub message: String,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini, Vec<SyntaxError>> {
        let mut ini = Ini::default();
        ini.sections.insert(String::new(), BTreeMap::new());
        let mut errors = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                match rest.strip_suffix(']') {
                    Some(name) if !name.trim().is_empty() => {
                        section = name.trim().to_string();
                        if ini.sections.contains_key(&section) && !section.is_empty() {
                            errors.push(SyntaxError {
                                line,
                                message: format!("section [{section}] appears twice"),
                            });
                        }
                        ini.sections.entry(section.clone()).or_default();
                    }
                    _ => errors.push(SyntaxError {
                        line,
                        message: format!("malformed section header '{s}'"),
                    }),
                }
                continue;
            }
            let Some((k, v)) = s.split_once('=') else {
                errors.push(SyntaxError {
                    line,
                    message: format!("expected key = value, found '{s}'"),
                });
                continue;
            };
            let key = k.trim().to_string();
            let entries = ini.sections.get_mut(&section).expect("section inserted");
            if entries.contains_key(&key) {
                errors.push(SyntaxError {
                    line,
                    message: format!("key '{key}' repeated in [{section}]"),
                });
                continue;
            }
            entries.insert(
                key,
                Value {
                    text: v.trim().to_string(),
                    line,
                },
            );
        }
        if errors.is_empty() {
            Ok(ini)
        } else {
            Err(errors)
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.sections.get(section).and_then(|s| s.get(key))
    }
}
