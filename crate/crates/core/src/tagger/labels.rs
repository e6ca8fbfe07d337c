use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The four TIMEX3 types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TimexType {
    Date,
    Time,
    Duration,
    Set,
}

impl TimexType {
    pub const ALL: [TimexType; 4] = [TimexType::Date, TimexType::Time, TimexType::Duration, TimexType::Set];

    pub fn as_str(self) -> &'static str {
        match self {
            TimexType::Date => "DATE",
            TimexType::Time => "TIME",
            TimexType::Duration => "DURATION",
            TimexType::Set => "SET",
        }
    }

    fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TimexType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimexType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "DATE" => Ok(TimexType::Date),
            "TIME" => Ok(TimexType::Time),
            "DURATION" => Ok(TimexType::Duration),
            "SET" => Ok(TimexType::Set),
            other => Err(Error::Data(format!("unknown temporal type '{other}'"))),
        }
    }
}

/// One IOB2 label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    O,
    B(TimexType),
    I(TimexType),
}

impl Label {
    pub const COUNT: usize = 9;

    /// Fixed index: O=0, then B/I pairs in DATE, TIME, DURATION, SET order.
    pub fn index(self) -> usize {
        match self {
            Label::O => 0,
            Label::B(t) => 1 + 2 * t.ordinal(),
            Label::I(t) => 2 + 2 * t.ordinal(),
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::O),
            1..=8 => {
                let t = TimexType::ALL[(i - 1) / 2];
                Some(if i % 2 == 1 { Label::B(t) } else { Label::I(t) })
            }
            _ => None,
        }
    }

    pub fn timex_type(self) -> Option<TimexType> {
        match self {
            Label::O => None,
            Label::B(t) | Label::I(t) => Some(t),
        }
    }

    /// Whether `self` may directly follow `prev` (`None` = sentence start) in IOB2.
    pub fn may_follow(self, prev: Option<Label>) -> bool {
        match self {
            Label::I(t) => matches!(prev, Some(Label::B(p)) | Some(Label::I(p)) if p == t),
            _ => true,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::O => f.write_str("O"),
            Label::B(t) => write!(f, "B-{t}"),
            Label::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "O" {
            return Ok(Label::O);
        }
        let parsed = match s.split_once('-') {
            Some(("B", t)) => t.parse().map(Label::B),
            Some(("I", t)) => t.parse().map(Label::I),
            _ => Err(Error::Data(String::new())),
        };
        parsed.map_err(|_| Error::Data(format!("label '{s}' is not in the IOB2 temporal scheme")))
    }
}

/// The nine-label IOB2 scheme over DATE, TIME, DURATION and SET.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelScheme;

impl LabelScheme {
    pub fn len(&self) -> usize {
        Label::COUNT
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> {
        (0..Label::COUNT).filter_map(Label::from_index)
    }

    pub fn names(&self) -> Vec<String> {
        self.labels().map(|l| l.to_string()).collect()
    }

    /// True iff every I-X directly follows B-X or I-X.
    pub fn is_valid_sequence(&self, labels: &[Label]) -> bool {
        let mut prev = None;
        labels.iter().all(|&l| {
            let ok = l.may_follow(prev);
            prev = Some(l);
            ok
        })
    }

    /// Transition mask for constrained decoding: `allowed[from * 9 + to]`.
    pub fn transition_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; Label::COUNT * Label::COUNT];
        for from in self.labels() {
            for to in self.labels() {
                mask[from.index() * Label::COUNT + to.index()] = to.may_follow(Some(from));
            }
        }
        mask
    }
}
