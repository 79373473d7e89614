use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::House;
use crate::util::squeeze_whitespace;

/// The six parties covered by the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    #[serde(rename = "LDP")]
    Ldp,
    #[serde(rename = "NDP")]
    Ndp,
    #[serde(rename = "CDP")]
    Cdp,
    #[serde(rename = "JCP")]
    Jcp,
    Komeito,
    #[serde(rename = "JRP")]
    Jrp,
}

impl Party {
    pub const ALL: [Party; 6] = [
        Party::Ldp,
        Party::Ndp,
        Party::Cdp,
        Party::Jcp,
        Party::Komeito,
        Party::Jrp,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Party::Ldp => "LDP",
            Party::Ndp => "NDP",
            Party::Cdp => "CDP",
            Party::Jcp => "JCP",
            Party::Komeito => "Komeito",
            Party::Jrp => "JRP",
        }
    }

    pub fn japanese_name(self) -> &'static str {
        match self {
            Party::Ldp => "自由民主党",
            Party::Ndp => "国民民主党",
            Party::Cdp => "立憲民主党",
            Party::Jcp => "日本共産党",
            Party::Komeito => "公明党",
            Party::Jrp => "日本維新の会",
        }
    }

    /// Maps a parliamentary group label from the minutes (e.g.
    /// `自由民主党・無所属の会`) to a party by prefix.
    pub fn from_group_label(label: &str) -> Option<Party> {
        Party::ALL
            .into_iter()
            .find(|p| label.starts_with(p.japanese_name()))
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Party {
    type Err = RosterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Party::ALL
            .into_iter()
            .find(|p| p.code() == s)
            .ok_or_else(|| RosterError::UnknownParty(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub speaker_name: String,
    pub party: Party,
    pub house: House,
    pub active: bool,
}

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("reading roster {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing roster: {0}")]
    Parse(String),
    #[error("unknown party code {0:?}; expected one of LDP, NDP, CDP, JCP, Komeito, JRP")]
    UnknownParty(String),
    #[error("duplicate roster entry for {0:?}")]
    DuplicateSpeaker(String),
    #[error("alias {alias:?} points at {target:?}, which is not in the roster")]
    DanglingAlias { alias: String, target: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RosterFile {
    #[serde(default)]
    member: Vec<MemberRow>,
    /// variant spelling -> canonical roster name
    #[serde(default)]
    aliases: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberRow {
    name: String,
    party: String,
    #[serde(default)]
    house: House,
    #[serde(default = "default_true")]
    active: bool,
}

fn default_true() -> bool {
    true
}

/// Target legislators, keyed by whitespace-squeezed name.
#[derive(Debug, Clone, Default)]
pub struct SpeakerRoster {
    entries: Vec<RosterEntry>,
    by_name: HashMap<String, usize>,
    aliases: HashMap<String, usize>,
}

impl SpeakerRoster {
    pub fn new(
        entries: Vec<RosterEntry>,
        aliases: BTreeMap<String, String>,
    ) -> Result<Self, RosterError> {
        let mut by_name = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_name.insert(squeeze_whitespace(&e.speaker_name), i).is_some() {
                return Err(RosterError::DuplicateSpeaker(e.speaker_name.clone()));
            }
        }
        let mut alias_map = HashMap::new();
        for (alias, target) in aliases {
            let idx = *by_name
                .get(&squeeze_whitespace(&target))
                .ok_or_else(|| RosterError::DanglingAlias {
                    alias: alias.clone(),
                    target: target.clone(),
                })?;
            alias_map.insert(squeeze_whitespace(&alias), idx);
        }
        Ok(Self {
            entries,
            by_name,
            aliases: alias_map,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RosterError> {
        let file: RosterFile = toml::from_str(text).map_err(|e| RosterError::Parse(e.to_string()))?;
        let entries = file
            .member
            .into_iter()
            .map(|m| {
                Ok(RosterEntry {
                    speaker_name: m.name,
                    party: m.party.parse()?,
                    house: m.house,
                    active: m.active,
                })
            })
            .collect::<Result<Vec<_>, RosterError>>()?;
        Self::new(entries, file.aliases)
    }

    pub fn load(path: &Path) -> Result<Self, RosterError> {
        let text = std::fs::read_to_string(path).map_err(|source| RosterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn entries(&self) -> &[RosterEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact match after whitespace squeezing, then the alias table.
    pub fn resolve(&self, name: &str) -> Option<&RosterEntry> {
        let key = squeeze_whitespace(name);
        self.by_name
            .get(&key)
            .or_else(|| self.aliases.get(&key))
            .map(|&i| &self.entries[i])
    }

    pub fn resolve_active(&self, name: &str) -> Option<&RosterEntry> {
        self.resolve(name).filter(|e| e.active)
    }
}
