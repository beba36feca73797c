//! Categorical features: tweet language, user language, timezone and the
//! 10-minute UTC posting-time slot, assembled into a sparse one-hot block.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ingest::Record;

pub const SLOTS_PER_DAY: usize = 144;
const SECONDS_PER_SLOT: i64 = 600;
const SECONDS_PER_DAY: i64 = 86_400;

pub const UNK_CATEGORY: &str = "<unk-cat>";

/// Index of the 10-minute UTC window containing `posted_at`.
pub fn time_slot(posted_at: i64) -> usize {
    (posted_at.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_SLOT) as usize
}

/// Value → index map with `<unk-cat>` at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryMap {
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for CategoryMap {
    fn from(values: Vec<String>) -> Self {
        let index = values
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, v)| (v.clone(), i))
            .collect();
        CategoryMap { values, index }
    }
}

impl From<CategoryMap> for Vec<String> {
    fn from(m: CategoryMap) -> Self {
        m.values
    }
}

impl CategoryMap {
    /// Observed values ordered by descending frequency, then lexicographically.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(observed: I) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for v in observed {
            *counts.entry(v).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut values = vec![UNK_CATEGORY.to_string()];
        values.extend(ranked.into_iter().map(|(v, _)| v.to_string()));
        values.into()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 1
    }

    pub fn encode(&self, value: &str) -> usize {
        self.index.get(value).copied().unwrap_or(0)
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMaps {
    pub tweet_lang: CategoryMap,
    pub user_lang: CategoryMap,
    pub timezone: CategoryMap,
}

impl CategoryMaps {
    pub fn build(train: &[Record]) -> Self {
        CategoryMaps {
            tweet_lang: CategoryMap::build(train.iter().map(|r| r.tweet_lang.as_str())),
            user_lang: CategoryMap::build(train.iter().map(|r| r.user_lang.as_str())),
            timezone: CategoryMap::build(train.iter().map(|r| r.timezone.as_str())),
        }
    }

    /// Width of the one-hot block: |TL| + |UL| + |TZ| + 144.
    pub fn onehot_dim(&self) -> usize {
        self.tweet_lang.len() + self.user_lang.len() + self.timezone.len() + SLOTS_PER_DAY
    }

    /// Active positions of the one-hot block, in TL, UL, TZ, PT order.
    pub fn onehot_block(&self, r: &Record) -> [usize; 4] {
        let ul_off = self.tweet_lang.len();
        let tz_off = ul_off + self.user_lang.len();
        let pt_off = tz_off + self.timezone.len();
        [
            self.tweet_lang.encode(&r.tweet_lang),
            ul_off + self.user_lang.encode(&r.user_lang),
            tz_off + self.timezone.encode(&r.timezone),
            pt_off + time_slot(r.posted_at),
        ]
    }
}
