use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    NoAdaptation,
    Supervised,
    ClassicUda,
    OneShotUda,
    TestTimeUda,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::NoAdaptation,
        Protocol::Supervised,
        Protocol::ClassicUda,
        Protocol::OneShotUda,
        Protocol::TestTimeUda,
    ];

    pub fn is_uda(self) -> bool {
        matches!(
            self,
            Protocol::ClassicUda | Protocol::OneShotUda | Protocol::TestTimeUda
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::NoAdaptation => "no_adaptation",
            Protocol::Supervised => "supervised",
            Protocol::ClassicUda => "classic_uda",
            Protocol::OneShotUda => "one_shot_uda",
            Protocol::TestTimeUda => "test_time_uda",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))
    }
}

/// Which target subjects a training regime may see, and how.
///
/// Source images and labels are always visible; this only governs the target domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSplit {
    pub protocol: Protocol,
    /// Target subjects whose labels training may read.
    pub supervised_pool: BTreeSet<String>,
    /// Target subjects whose images (never labels) training may read.
    pub unlabeled_pool: BTreeSet<String>,
    pub test_subject: String,
    /// Held-out labelled subject for model selection (supervised only).
    pub validation_subject: Option<String>,
    pub seed: u64,
}

impl ProtocolSplit {
    /// Check every visibility invariant of the protocol.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Contract(format!("{} split: {msg}", self.protocol)));
        if self.supervised_pool.contains(&self.test_subject) {
            return fail("test subject is in the supervised pool");
        }
        if self
            .supervised_pool
            .intersection(&self.unlabeled_pool)
            .next()
            .is_some()
        {
            return fail("pools overlap");
        }
        match self.protocol {
            Protocol::NoAdaptation
                if !self.unlabeled_pool.is_empty() || !self.supervised_pool.is_empty() =>
            {
                fail("no-adaptation sees target data")
            }
            Protocol::OneShotUda
                if self.unlabeled_pool != BTreeSet::from([self.test_subject.clone()]) =>
            {
                fail("unlabeled pool must be exactly the test subject")
            }
            Protocol::TestTimeUda
                if !self.unlabeled_pool.contains(&self.test_subject)
                    || self.unlabeled_pool.len() != 3 =>
            {
                fail("unlabeled pool must be the test subject plus two others")
            }
            Protocol::ClassicUda
                if self.unlabeled_pool.contains(&self.test_subject)
                    || self.unlabeled_pool.is_empty() =>
            {
                fail("unlabeled pool must exclude the test subject")
            }
            Protocol::Supervised => match &self.validation_subject {
                None => fail("missing validation subject"),
                Some(v) if v == &self.test_subject || self.supervised_pool.contains(v) => {
                    fail("validation subject overlaps training or test")
                }
                _ if self.supervised_pool.is_empty() => fail("empty supervised pool"),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Label of a target subject, refused unless the split makes it readable.
    pub fn target_label<'a>(&self, target: &'a Dataset, subject: &str) -> Result<&'a LabelMap> {
        let readable = self.supervised_pool.contains(subject)
            || self.validation_subject.as_deref() == Some(subject);
        if !readable {
            return Err(Error::Leakage(format!(
                "{} split forbids reading the label of {subject}",
                self.protocol
            )));
        }
        target
            .get(subject)
            .and_then(|s| s.label.as_ref())
            .ok_or_else(|| Error::Contract(format!("target subject {subject} has no label")))
    }
}

pub fn build_split(
    target: &Dataset,
    protocol: Protocol,
    test_subject: &str,
    seed: u64,
) -> Result<ProtocolSplit> {
    let ids = target.subject_ids();
    if !ids.iter().any(|id| id == test_subject) {
        return Err(Error::Parameter(format!(
            "test subject {test_subject} not in target dataset"
        )));
    }
    let others: Vec<String> = ids.into_iter().filter(|id| id != test_subject).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test = test_subject.to_owned();
    let mut split = ProtocolSplit {
        protocol,
        supervised_pool: BTreeSet::new(),
        unlabeled_pool: BTreeSet::new(),
        test_subject: test.clone(),
        validation_subject: None,
        seed,
    };
    match protocol {
        Protocol::NoAdaptation => {}
        Protocol::OneShotUda => {
            split.unlabeled_pool.insert(test);
        }
        Protocol::ClassicUda => {
            if others.is_empty() {
                return Err(Error::InsufficientData(
                    "classic UDA needs a second target subject".into(),
                ));
            }
            split.unlabeled_pool = others.into_iter().collect();
        }
        Protocol::TestTimeUda => {
            if others.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "test-time UDA needs 3 target subjects, have {}",
                    others.len() + 1
                )));
            }
            split.unlabeled_pool = others.choose_multiple(&mut rng, 2).cloned().collect();
            split.unlabeled_pool.insert(test);
        }
        Protocol::Supervised => {
            if others.len() < 2 {
                return Err(Error::InsufficientData(
                    "supervised training needs a training and a validation subject besides the test subject".into(),
                ));
            }
            let validation = others.choose(&mut rng).expect("nonempty").clone();
            split.supervised_pool = others.into_iter().filter(|id| *id != validation).collect();
            split.validation_subject = Some(validation);
        }
    }
    split.validate()?;
    Ok(split)
}
