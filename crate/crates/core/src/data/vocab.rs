use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Printable names of the special ids, in id order.
pub const SPECIALS: [&str; 4] = ["PAD", "SOS", "EOS", "UNK"];

/// Bijection between event tokens (`sensor:value`) and ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Sorts the distinct tokens and numbers them after the specials.
    pub fn build<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let distinct: BTreeSet<&str> = tokens
            .into_iter()
            .filter(|t| !SPECIALS.contains(t))
            .collect();
        let all: Vec<String> = SPECIALS
            .iter()
            .copied()
            .chain(distinct)
            .map(String::from)
            .collect();
        Self::from_tokens(all)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`; unseen tokens map to `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::OutOfVocabulary {
                id,
                vocab: self.len(),
            })
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sidecar format: one `token<TAB>id` line per entry, in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{t}\t{i}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str, file: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            file: file.to_string(),
            msg: format!("line {line}: {msg}"),
        };
        let mut tokens = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(n + 1, "expected token<TAB>id".into()))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| parse_err(n + 1, format!("bad id `{id}`")))?;
            if id != tokens.len() {
                return Err(parse_err(n + 1, format!("id {id} out of sequence")));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(parse_err(1, "special tokens missing or reordered".into()));
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::File::create(path)?.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_tsv(&fs::read_to_string(path)?, &path.display().to_string())
    }
}
