//! Structured prompts.
//!
//! The toy world has no text encoder, so a prompt is the structured content
//! a real prompt would carry: which class to count, how many, and the
//! difficulty attributes of its level.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest count the layout prior can represent.
pub const MAX_COUNT: u32 = 12;

/// Count range used by benchmark prompts and by the count-agnostic prior.
pub const BENCH_MIN_COUNT: u32 = 2;
pub const BENCH_MAX_COUNT: u32 = 10;

/// Difficulty level of a benchmark prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Level {
    /// Target objects alone.
    L1,
    /// Target objects over a textured scene.
    L2,
    /// Scene plus an uncounted distractor class.
    L3,
    /// Target objects in a row arrangement.
    L4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L1, Level::L2, Level::L3, Level::L4];

    pub fn number(self) -> u8 {
        match self {
            Level::L1 => 1,
            Level::L2 => 2,
            Level::L3 => 3,
            Level::L4 => 4,
        }
    }
}

impl TryFrom<u8> for Level {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Level::L1),
            2 => Ok(Level::L2),
            3 => Ok(Level::L3),
            4 => Ok(Level::L4),
            other => Err(Error::Parse(format!("unknown level {other}"))),
        }
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l.number()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.number())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches(['L', 'l']);
        let n: u8 = digits
            .parse()
            .map_err(|_| Error::Parse(format!("unknown level `{s}`")))?;
        Level::try_from(n)
    }
}

/// Rendering condition of a group of layout components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Plain,
    Scene,
    Distractor,
    Arrangement,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Plain,
        Condition::Scene,
        Condition::Distractor,
        Condition::Arrangement,
    ];

    pub fn has_scene(self) -> bool {
        matches!(self, Condition::Scene | Condition::Distractor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    /// Channel index of the counted class.
    pub target_class: usize,
    /// `None` is the count-agnostic prompt.
    pub count: Option<u32>,
    pub level: Level,
    pub scene: bool,
    pub distractor: bool,
    pub arrangement: bool,
}

impl PromptSpec {
    /// Prompt for `count` objects of class 0 at `level`, flags set from the level.
    pub fn new(level: Level, count: u32) -> Self {
        let (scene, distractor, arrangement) = match level {
            Level::L1 => (false, false, false),
            Level::L2 => (true, false, false),
            Level::L3 => (true, true, false),
            Level::L4 => (false, false, true),
        };
        Self {
            target_class: 0,
            count: Some(count),
            level,
            scene,
            distractor,
            arrangement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.count {
            if k > MAX_COUNT {
                return Err(Error::CountOutOfRange {
                    count: k,
                    min: 0,
                    max: MAX_COUNT,
                });
            }
        }
        let expected = PromptSpec::new(self.level, 0);
        if (self.scene, self.distractor, self.arrangement)
            != (expected.scene, expected.distractor, expected.arrangement)
        {
            return Err(Error::invalid(format!(
                "attribute flags inconsistent with level {}",
                self.level
            )));
        }
        Ok(())
    }

    pub fn condition(&self) -> Condition {
        if self.arrangement {
            Condition::Arrangement
        } else if self.distractor {
            Condition::Distractor
        } else if self.scene {
            Condition::Scene
        } else {
            Condition::Plain
        }
    }

    /// Target count; errors on a count-agnostic prompt.
    pub fn target(&self) -> Result<u32> {
        self.count
            .ok_or_else(|| Error::invalid("prompt has no target count"))
    }
}
