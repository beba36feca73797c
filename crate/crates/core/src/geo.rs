//! Great-circle distance and the city-based label space.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Default radius for folding small cities into a larger neighbour.
pub const DEFAULT_AGGREGATION_RADIUS_KM: f64 = 50.0;

fn check_point((lat, lon): (f64, f64)) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::invalid(format!("coordinate ({lat}, {lon}) out of range")));
    }
    Ok(())
}

/// Haversine distance in kilometres on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    check_point(a)?;
    check_point(b)?;
    Ok(haversine_unchecked(a, b))
}

pub(crate) fn haversine_unchecked((lat1, lon1): (f64, f64), (lat2, lon2): (f64, f64)) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub city_id: u32,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub country_code: String,
    #[serde(default)]
    pub population: u64,
}

impl City {
    pub fn coords(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

/// Immutable set of cities, kept sorted by `city_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct CityTable {
    cities: Vec<City>,
}

impl CityTable {
    pub fn new(mut cities: Vec<City>) -> Result<Self> {
        if cities.is_empty() {
            return Err(Error::data("city table is empty"));
        }
        for c in &cities {
            check_point(c.coords())
                .map_err(|_| Error::data(format!("city {} has out-of-range coordinates", c.city_id)))?;
        }
        cities.sort_by_key(|c| c.city_id);
        if let Some(w) = cities.windows(2).find(|w| w[0].city_id == w[1].city_id) {
            return Err(Error::data(format!("duplicate city_id {}", w[0].city_id)));
        }
        Ok(CityTable { cities })
    }

    pub fn cities(&self) -> &[City] {
        &self.cities
    }

    pub fn len(&self) -> usize {
        self.cities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cities.is_empty()
    }

    pub fn get(&self, city_id: u32) -> Option<&City> {
        self.cities
            .binary_search_by_key(&city_id, |c| c.city_id)
            .ok()
            .map(|i| &self.cities[i])
    }

    pub fn countries(&self) -> BTreeSet<&str> {
        self.cities.iter().map(|c| c.country_code.as_str()).collect()
    }

    /// Closest city by great-circle distance; ties go to the smallest id.
    pub fn nearest_city(&self, point: (f64, f64)) -> Result<u32> {
        check_point(point)?;
        Ok(self.nearest_unchecked(point))
    }

    fn nearest_unchecked(&self, point: (f64, f64)) -> u32 {
        // cities are id-sorted, so a strict `<` keeps the smallest id on ties
        let mut best = (f64::INFINITY, self.cities[0].city_id);
        for c in &self.cities {
            let d = haversine_unchecked(point, c.coords());
            if d < best.0 {
                best = (d, c.city_id);
            }
        }
        best.1
    }

    /// [`nearest_city`](Self::nearest_city) over a batch, in parallel.
    pub fn nearest_cities(&self, points: &[(f64, f64)]) -> Result<Vec<u32>> {
        points.iter().try_for_each(|&p| check_point(p))?;
        Ok(points.par_iter().map(|&p| self.nearest_unchecked(p)).collect())
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let cities = rdr.deserialize().collect::<std::result::Result<Vec<City>, _>>()?;
        CityTable::new(cities)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot open city table {}: {e}", path.display())))?;
        CityTable::from_csv(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cities {
            out.serialize(c)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fold smaller cities into the most populous already-kept city within
/// `radius_km`. Cities are visited by decreasing population (ties by id).
pub fn aggregate_cities(raw: Vec<City>, radius_km: f64) -> Result<CityTable> {
    if !(radius_km >= 0.0) {
        return Err(Error::invalid(format!("aggregation radius must be >= 0, got {radius_km}")));
    }
    let mut order = raw;
    order.sort_by(|a, b| match b.population.cmp(&a.population) {
        Ordering::Equal => a.city_id.cmp(&b.city_id),
        o => o,
    });
    let mut kept: Vec<City> = Vec::new();
    for city in order {
        check_point(city.coords())?;
        // kept is already in decreasing-population order
        let absorbed = kept
            .iter()
            .any(|k| haversine_unchecked(k.coords(), city.coords()) <= radius_km);
        if !absorbed {
            kept.push(city);
        }
    }
    CityTable::new(kept)
}
