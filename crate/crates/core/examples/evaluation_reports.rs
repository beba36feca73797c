//! Metrics, per-class precision/recall and calibration bins on a handful
//! of hand-made predictions.

use tweetgeo::eval::{calibration_bins, per_class_pr, write_calibration_csv, write_per_class_csv, Metrics, Prediction};
use tweetgeo::geo::{City, CityTable};
use tweetgeo::labels::LabelSpace;

fn main() -> tweetgeo::Result<()> {
    let cities = CityTable::new(vec![
        City {
            city_id: 1,
            name: "A".into(),
            lat: 40.0,
            lon: -80.0,
            country_code: "US".into(),
            population: 1,
        },
        City {
            city_id: 2,
            name: "B".into(),
            lat: 41.0,
            lon: -80.0,
            country_code: "US".into(),
            population: 1,
        },
        City {
            city_id: 3,
            name: "C".into(),
            lat: 34.0,
            lon: -118.0,
            country_code: "US".into(),
            population: 1,
        },
    ])?;
    let labels = LabelSpace::cities(&cities)?;

    // (probabilities, true label, true coordinates)
    let rows: [([f64; 3], usize, (f64, f64)); 5] = [
        ([0.95, 0.04, 0.01], 0, (40.01, -80.0)),
        ([0.30, 0.60, 0.10], 0, (40.2, -80.0)),
        ([0.10, 0.05, 0.85], 2, (34.1, -118.2)),
        ([0.50, 0.45, 0.05], 1, (41.0, -80.1)),
        ([0.02, 0.97, 0.01], 1, (40.9, -80.0)),
    ];
    let preds: Vec<Prediction> = rows.iter().map(|(p, y, c)| Prediction::from_probs(p, *y, *c)).collect();

    let m = Metrics::compute(&preds, &labels)?;
    let mut out = std::io::stdout();
    m.write_csv(&mut out)?;
    println!();
    write_per_class_csv(&mut out, &per_class_pr(&preds, labels.len()), &labels)?;
    println!();
    write_calibration_csv(&mut out, &calibration_bins(&preds))?;
    Ok(())
}
