//! Great-circle distances, city aggregation and nearest-city lookup.

use tweetgeo::geo::{aggregate_cities, haversine_km, City};

fn city(city_id: u32, name: &str, lat: f64, lon: f64, population: u64) -> City {
    City {
        city_id,
        name: name.into(),
        lat,
        lon,
        country_code: "US".into(),
        population,
    }
}

fn main() -> tweetgeo::Result<()> {
    let raw = vec![
        city(1, "Pittsburgh", 40.4406, -79.9959, 300_000),
        city(2, "Mount Lebanon", 40.3554, -80.0500, 33_000),
        city(3, "Philadelphia", 39.9526, -75.1652, 1_580_000),
        city(4, "Cleveland", 41.4993, -81.6944, 370_000),
    ];
    let d = haversine_km(raw[0].coords(), raw[2].coords())?;
    println!("Pittsburgh -> Philadelphia: {d:.1} km");

    // Mount Lebanon is ~10 km from Pittsburgh and is absorbed by it.
    let table = aggregate_cities(raw, 50.0)?;
    let names: Vec<&str> = table.cities().iter().map(|c| c.name.as_str()).collect();
    println!("after 50 km aggregation: {names:?}");

    for point in [(40.45, -80.0), (40.0, -75.5), (41.0, -81.0)] {
        let id = table.nearest_city(point)?;
        println!("{point:?} -> {}", table.get(id).map(|c| c.name.as_str()).unwrap_or("?"));
    }
    Ok(())
}
