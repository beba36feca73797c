//! Prediction targets: country codes or city ids mapped to dense indices.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geo::CityTable;
use crate::ingest::Record;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Country,
    City,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Country => "country",
            Task::City => "city",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "country" => Ok(Task::Country),
            "city" => Ok(Task::City),
            other => Err(Error::invalid(format!("unknown task `{other}` (country|city)"))),
        }
    }
}

/// Ordered label names; for the city task each label also carries the
/// city's representative coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    task: Task,
    names: Vec<String>,
    coords: Option<Vec<(f64, f64)>>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    fn from_parts(task: Task, names: Vec<String>, coords: Option<Vec<(f64, f64)>>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::data("label space is empty"));
        }
        let index: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        if index.len() != names.len() {
            return Err(Error::data("duplicate label names"));
        }
        Ok(LabelSpace {
            task,
            names,
            coords,
            index,
        })
    }

    /// Sorted distinct country codes from the records and (optionally) a city table.
    pub fn countries(records: &[Record], cities: Option<&CityTable>) -> Result<Self> {
        let mut codes: BTreeSet<String> = records.iter().map(|r| r.country_code.clone()).collect();
        if let Some(t) = cities {
            codes.extend(t.countries().into_iter().map(String::from));
        }
        LabelSpace::from_parts(Task::Country, codes.into_iter().collect(), None)
    }

    /// One label per city, in city-id order.
    pub fn cities(table: &CityTable) -> Result<Self> {
        let names = table.cities().iter().map(|c| c.city_id.to_string()).collect();
        let coords = table.cities().iter().map(|c| c.coords()).collect();
        LabelSpace::from_parts(Task::City, names, Some(coords))
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, label: usize) -> &str {
        &self.names[label]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Representative coordinates of a city label.
    pub fn coords(&self, label: usize) -> Option<(f64, f64)> {
        self.coords.as_ref().map(|c| c[label])
    }

    pub fn has_coords(&self) -> bool {
        self.coords.is_some()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Label index of a record under this task.
    pub fn label_of(&self, r: &Record) -> Result<usize> {
        let name = match self.task {
            Task::Country => r.country_code.clone(),
            Task::City => r
                .city_id
                .ok_or_else(|| Error::data(format!("record of user {} has no city_id", r.user_id)))?
                .to_string(),
        };
        self.index_of(&name)
            .ok_or_else(|| Error::data(format!("label `{name}` not in the {} label space", self.task)))
    }

    /// Text form: first line `task <name>`, then one label per line, with
    /// `\t<lat>\t<lon>` appended for city labels.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "task {}", self.task)?;
        for (i, n) in self.names.iter().enumerate() {
            match self.coords(i) {
                Some((lat, lon)) => writeln!(w, "{n}\t{lat}\t{lon}")?,
                None => writeln!(w, "{n}")?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let task: Task = header
            .strip_prefix("task ")
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: "expected `task <country|city>` header".into(),
            })?
            .parse()?;
        let mut names = Vec::new();
        let mut coords = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let mut parts = line.split('\t');
            names.push(parts.next().unwrap_or_default().to_string());
            if task == Task::City {
                let bad = || Error::Parse {
                    line: i + 2,
                    msg: "city label needs `<id>\\t<lat>\\t<lon>`".into(),
                };
                let lat: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                let lon: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                coords.push((lat, lon));
            }
        }
        LabelSpace::from_parts(task, names, (task == Task::City).then_some(coords))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::City;
    use crate::ingest::test_support::record;

    fn table() -> CityTable {
        CityTable::new(vec![
            City {
                city_id: 7,
                name: "b".into(),
                lat: 1.25,
                lon: -3.5,
                country_code: "GB".into(),
                population: 1,
            },
            City {
                city_id: 3,
                name: "a".into(),
                lat: 40.0,
                lon: -80.0,
                country_code: "US".into(),
                population: 1,
            },
        ])
        .unwrap()
    }

    #[test]
    fn country_and_city_spaces() {
        let recs = vec![record("u", "JP", Some(3)), record("v", "US", Some(7))];
        let c = LabelSpace::countries(&recs, Some(&table())).unwrap();
        assert_eq!(c.names(), &["GB", "JP", "US"]);
        assert_eq!(c.label_of(&recs[0]).unwrap(), 1);

        let s = LabelSpace::cities(&table()).unwrap();
        assert_eq!(s.names(), &["3", "7"]);
        assert_eq!(s.coords(1), Some((1.25, -3.5)));
        assert_eq!(s.label_of(&recs[1]).unwrap(), 1);
        assert!(s.label_of(&record("w", "US", None)).is_err());
        assert!(s.label_of(&record("w", "US", Some(99))).is_err());
    }

    #[test]
    fn text_round_trip() {
        for space in [
            LabelSpace::cities(&table()).unwrap(),
            LabelSpace::countries(&[record("u", "JP", None)], None).unwrap(),
        ] {
            let mut buf = Vec::new();
            space.write_to(&mut buf).unwrap();
            assert_eq!(LabelSpace::read_from(buf.as_slice()).unwrap(), space);
        }
        assert!(LabelSpace::read_from("task city\n3\n".as_bytes()).is_err());
        assert!(LabelSpace::read_from("nope\n".as_bytes()).is_err());
    }
}
