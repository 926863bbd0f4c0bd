//! Texts that cannot have been in the target's training data.
//!
//! Two generators: random symbol strings, and covert pseudo-names built by
//! pairing an initial and a final syllable, filtered against a list of real
//! names so they read like names without belonging to anyone.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

const DEFAULT_LEXICON: &str = include_str!("../data/syllables.txt");
const DEFAULT_NAMES: &str = include_str!("../data/real_names.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct GibberishConfig {
    pub count: usize,
    pub length: usize,
    pub charset: Vec<char>,
    pub seed: u64,
}

impl Default for GibberishConfig {
    fn default() -> Self {
        Self {
            count: 50,
            length: 10,
            charset: (33u8..=126).map(char::from).collect(),
            seed: 0,
        }
    }
}

impl GibberishConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.length == 0 {
            return Err(Error::invalid(
                "gibberish count and length must be at least 1",
            ));
        }
        if self.charset.is_empty() {
            return Err(Error::invalid("gibberish charset is empty"));
        }
        if self
            .charset
            .iter()
            .any(|c| c.is_whitespace() || c.is_control())
        {
            return Err(Error::invalid(
                "gibberish charset must not contain whitespace",
            ));
        }
        Ok(())
    }

    fn distinct_charset(&self) -> Vec<char> {
        let set: BTreeSet<char> = self.charset.iter().copied().collect();
        set.into_iter().collect()
    }
}

/// `count` distinct strings of `length` characters drawn uniformly from the charset.
pub fn generate_random_gibberish(config: &GibberishConfig) -> Result<Vec<String>> {
    config.validate()?;
    let charset = config.distinct_charset();
    let possible = (charset.len() as u128)
        .checked_pow(config.length.min(u32::MAX as usize) as u32)
        .unwrap_or(u128::MAX);
    if possible < config.count as u128 {
        return Err(Error::invalid(format!(
            "only {possible} distinct strings of length {} exist over {} characters, {} requested",
            config.length,
            charset.len(),
            config.count
        )));
    }
    let mut rng = seed::derived_rng(config.seed, &["random-gibberish".into()]);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(config.count);
    while out.len() < config.count {
        let s: String = (0..config.length)
            .map(|_| charset[rng.random_range(0..charset.len())])
            .collect();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyllableLexicon {
    initial: Vec<String>,
    finals: Vec<String>,
    /// Lowercased real names that generated names must avoid.
    blocklist: HashSet<String>,
}

fn dedup(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|s| seen.insert(s.clone()))
        .collect()
}

impl SyllableLexicon {
    pub fn new(
        initial: Vec<String>,
        finals: Vec<String>,
        blocklist: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let initial = dedup(initial.into_iter().map(|s| s.trim().to_owned()));
        let finals = dedup(finals.into_iter().map(|s| s.trim().to_owned()));
        if initial.is_empty() || finals.is_empty() {
            return Err(Error::invalid("syllable lists must be non-empty"));
        }
        if initial
            .iter()
            .chain(&finals)
            .any(|s| s.is_empty() || s.contains(char::is_whitespace))
        {
            return Err(Error::invalid("syllables must be non-empty single words"));
        }
        Ok(Self {
            initial,
            finals,
            blocklist: blocklist
                .into_iter()
                .map(|n| n.trim().to_lowercase())
                .collect(),
        })
    }

    /// Parses the `[initial]` / `[final]` lexicon format. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str, blocklist: impl IntoIterator<Item = String>) -> Result<Self> {
        let (mut initial, mut finals) = (Vec::new(), Vec::new());
        let mut section: Option<&mut Vec<String>> = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[initial]" => section = Some(&mut initial),
                "[final]" => section = Some(&mut finals),
                _ => match section.as_deref_mut() {
                    Some(list) => list.push(line.to_owned()),
                    None => {
                        return Err(Error::format(format!(
                            "lexicon line {} appears before any section",
                            no + 1
                        )))
                    }
                },
            }
        }
        Self::new(initial, finals, blocklist)
    }

    pub fn load(
        path: impl AsRef<Path>,
        blocklist: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, blocklist)
    }

    pub fn initial(&self) -> &[String] {
        &self.initial
    }

    pub fn finals(&self) -> &[String] {
        &self.finals
    }

    pub fn is_blocked(&self, name: &str) -> bool {
        self.blocklist.contains(&name.to_lowercase())
    }
}

impl Default for SyllableLexicon {
    /// The embedded lexicon, blocked against [`real_names`].
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON, real_names()).expect("embedded lexicon is valid")
    }
}

/// The shipped list of common real first names.
pub fn real_names() -> Vec<String> {
    parse_name_list(DEFAULT_NAMES)
}

/// One name per line; blank lines and `#` comments skipped.
pub fn parse_name_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

pub fn load_name_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(parse_name_list(&fs::read_to_string(path)?))
}

fn capitalized(initial: &str, fin: &str) -> String {
    let mut chars = initial.chars();
    let mut name: String = chars
        .next()
        .map(|c| c.to_uppercase().collect())
        .unwrap_or_default();
    name.push_str(&chars.as_str().to_lowercase());
    name.push_str(&fin.to_lowercase());
    name
}

/// `count` distinct pseudo-names `Initial + final`, none on the blocklist.
pub fn generate_covert_names(
    count: usize,
    lexicon: &SyllableLexicon,
    seed: u64,
) -> Result<Vec<String>> {
    let max_attempts = 100 * count.max(1) + 1000;
    let mut rng = seed::derived_rng(seed, &["covert-names".into()]);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == max_attempts {
            return Err(Error::Exhausted {
                attempts,
                what: format!("{} of {count} covert names", out.len()),
            });
        }
        attempts += 1;
        let a = lexicon.initial.choose(&mut rng).expect("non-empty");
        let b = lexicon.finals.choose(&mut rng).expect("non-empty");
        let name = capitalized(a, b);
        if !lexicon.is_blocked(&name) && seen.insert(name.to_lowercase()) {
            out.push(name);
        }
    }
    Ok(out)
}

/// Candidates not present in `name_db` (case-insensitive exact match), in order.
pub fn check_collisions(candidates: &[String], name_db: &[String]) -> Vec<String> {
    let db: HashSet<String> = name_db.iter().map(|n| n.trim().to_lowercase()).collect();
    candidates
        .iter()
        .filter(|c| !db.contains(&c.to_lowercase()))
        .cloned()
        .collect()
}

/// Writes one string per line.
pub fn export(path: impl AsRef<Path>, items: &[String]) -> Result<()> {
    if let Some(bad) = items.iter().find(|s| s.contains(['\n', '\r'])) {
        return Err(Error::invalid(format!("{bad:?} contains a line break")));
    }
    let mut text = items.join("\n");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
