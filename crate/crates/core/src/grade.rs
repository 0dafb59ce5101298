use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural damage grade, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageGrade {
    NoDamage,
    Heavy,
    Extreme,
    Destruction,
}

impl DamageGrade {
    pub const ALL: [DamageGrade; 4] = [
        DamageGrade::NoDamage,
        DamageGrade::Heavy,
        DamageGrade::Extreme,
        DamageGrade::Destruction,
    ];

    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<DamageGrade> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DamageGrade::NoDamage => "no_damage",
            DamageGrade::Heavy => "heavy",
            DamageGrade::Extreme => "extreme",
            DamageGrade::Destruction => "destruction",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DamageGrade::NoDamage => "No damage",
            DamageGrade::Heavy => "Heavy damage",
            DamageGrade::Extreme => "Extreme damage",
            DamageGrade::Destruction => "Destruction",
        }
    }

    pub fn is_damaged(self) -> bool {
        self != DamageGrade::NoDamage
    }
}

impl fmt::Display for DamageGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DamageGrade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DamageGrade::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown damage grade `{s}`")))
    }
}
