use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Attentional state of the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Drowsy,
    Wakeful,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Drowsy, Class::Wakeful];

    /// Index of the class in probability vectors: Drowsy = 0, Wakeful = 1.
    pub fn index(self) -> usize {
        match self {
            Class::Drowsy => 0,
            Class::Wakeful => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Class> {
        match i {
            0 => Some(Class::Drowsy),
            1 => Some(Class::Wakeful),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Drowsy => "drowsy",
            Class::Wakeful => "wakeful",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drowsy" | "0" => Ok(Class::Drowsy),
            "wakeful" | "1" => Ok(Class::Wakeful),
            other => Err(Error::invalid(format!("unknown class `{other}`"))),
        }
    }
}
