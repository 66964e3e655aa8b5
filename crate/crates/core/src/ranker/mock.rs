use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComparatorError, Comparator, ComparisonContext, ComparisonOutcome, Contender};
use crate::error::{Error, Result};

/// Rule applied when neither the decision table nor the priority list decides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockDefault {
    #[default]
    Tie,
    LongerBody,
    ShorterBody,
    /// Lexicographically smaller qualified name wins.
    Name,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockDecision {
    pub first: String,
    pub second: String,
    pub outcome: ComparisonOutcome,
}

/// Decision table for [`MockComparator`].
///
/// `priority` lists functions by id, qualified name, or a qualified name without
/// parameters (matching every overload). Listed functions beat unlisted ones and
/// earlier entries beat later ones, which makes a ground-truth list a perfect oracle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSpec {
    pub default: MockDefault,
    pub priority: Vec<String>,
    pub decisions: Vec<MockDecision>,
}

/// Offline comparator driven by a [`MockSpec`].
#[derive(Debug, Clone, Default)]
pub struct MockComparator {
    spec: MockSpec,
}

fn matches(entry: &str, c: &Contender) -> bool {
    entry == c.id
        || entry == c.qualified_name
        || (!entry.contains('(') && c.qualified_name.split('(').next() == Some(entry))
}

impl MockComparator {
    pub fn new(spec: MockSpec) -> Self {
        MockComparator { spec }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))?;
        Ok(MockComparator::new(spec))
    }

    fn priority(&self, c: &Contender) -> Option<usize> {
        self.spec.priority.iter().position(|e| matches(e, c))
    }

    fn decide(&self, a: &Contender, b: &Contender) -> ComparisonOutcome {
        use ComparisonOutcome::*;
        for d in &self.spec.decisions {
            if matches(&d.first, a) && matches(&d.second, b) {
                return d.outcome;
            }
            if matches(&d.first, b) && matches(&d.second, a) {
                return d.outcome.swap();
            }
        }
        match (self.priority(a), self.priority(b)) {
            (Some(x), Some(y)) if x < y => return FirstWins,
            (Some(x), Some(y)) if x > y => return SecondWins,
            (Some(_), None) => return FirstWins,
            (None, Some(_)) => return SecondWins,
            _ => {}
        }
        let by = |o: std::cmp::Ordering| match o {
            std::cmp::Ordering::Greater => FirstWins,
            std::cmp::Ordering::Less => SecondWins,
            std::cmp::Ordering::Equal => Tie,
        };
        match self.spec.default {
            MockDefault::Tie => Tie,
            MockDefault::LongerBody => by(a.body.lines().count().cmp(&b.body.lines().count())),
            MockDefault::ShorterBody => by(b.body.lines().count().cmp(&a.body.lines().count())),
            MockDefault::Name => by(b.qualified_name.cmp(&a.qualified_name)),
        }
    }
}

impl Comparator for MockComparator {
    fn compare(
        &self,
        _ctx: &ComparisonContext,
        first: &Contender,
        second: &Contender,
    ) -> std::result::Result<ComparisonOutcome, ComparatorError> {
        Ok(self.decide(first, second))
    }
}
