//! Acc, Acc@Top5, Acc@161, median error distance, per-class
//! precision/recall and output-probability calibration bins.

use std::io::Write;

use serde::Serialize;

use crate::geo::haversine_km;
use crate::labels::LabelSpace;
use crate::nncore::Real;
use crate::{Error, Result};

pub const TOP_K: usize = 5;
/// 100 miles.
pub const NEAR_MISS_KM: f64 = 161.0;
// Keeps a computed distance of 161.000000000001 km inside the inclusive boundary.
const DISTANCE_SLACK_KM: f64 = 1e-9;
pub const CALIBRATION_BINS: usize = 10;

/// Index of the largest value; ties go to the smallest index.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest values, descending; ties by smaller index.
pub fn top_k<T: Real>(probs: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub true_label: usize,
    pub true_coords: (f64, f64),
    /// Top labels by probability, best first.
    pub ranked_labels: Vec<usize>,
    pub top_prob: f64,
}

impl Prediction {
    pub fn from_probs<T: Real>(probs: &[T], true_label: usize, true_coords: (f64, f64)) -> Self {
        let ranked_labels = top_k(probs, TOP_K);
        let top_prob = probs[ranked_labels[0]].as_f64();
        Prediction {
            true_label,
            true_coords,
            ranked_labels,
            top_prob,
        }
    }

    pub fn predicted(&self) -> usize {
        self.ranked_labels[0]
    }

    pub fn correct(&self) -> bool {
        self.predicted() == self.true_label
    }
}

fn non_empty(preds: &[Prediction]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::data("no predictions to evaluate"));
    }
    Ok(())
}

fn fraction(preds: &[Prediction], hit: impl Fn(&Prediction) -> bool) -> f64 {
    preds.iter().filter(|p| hit(p)).count() as f64 / preds.len() as f64
}

pub fn accuracy(preds: &[Prediction]) -> Result<f64> {
    non_empty(preds)?;
    Ok(fraction(preds, Prediction::correct))
}

pub fn acc_top5(preds: &[Prediction]) -> Result<f64> {
    non_empty(preds)?;
    Ok(fraction(preds, |p| p.ranked_labels.iter().take(TOP_K).any(|&l| l == p.true_label)))
}

/// Distance from each predicted city's representative point to the tweet's
/// own coordinates.
pub fn error_distances_km(preds: &[Prediction], cities: &LabelSpace) -> Result<Vec<f64>> {
    if !cities.has_coords() {
        return Err(Error::invalid("distance metrics need a city label space"));
    }
    preds
        .iter()
        .map(|p| {
            let at = cities
                .coords(p.predicted())
                .ok_or_else(|| Error::invalid("label without coordinates"))?;
            haversine_km(at, p.true_coords)
        })
        .collect()
}

/// Share of predictions within 161 km (inclusive) of the true coordinates.
pub fn acc_at_161(preds: &[Prediction], cities: &LabelSpace) -> Result<f64> {
    non_empty(preds)?;
    let d = error_distances_km(preds, cities)?;
    Ok(d.iter().filter(|&&km| km <= NEAR_MISS_KM + DISTANCE_SLACK_KM).count() as f64 / d.len() as f64)
}

/// Median of `values`; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::data("median of nothing"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn median_error_km(preds: &[Prediction], cities: &LabelSpace) -> Result<f64> {
    non_empty(preds)?;
    median(&error_distances_km(preds, cities)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

/// One-vs-rest precision and recall for labels `0..n_labels`. A label that is
/// never predicted has precision 0; one that never occurs has recall 0.
pub fn per_class_pr(preds: &[Prediction], n_labels: usize) -> Vec<ClassRow> {
    let mut tp = vec![0usize; n_labels];
    let mut predicted = vec![0usize; n_labels];
    let mut support = vec![0usize; n_labels];
    for p in preds {
        predicted[p.predicted()] += 1;
        support[p.true_label] += 1;
        if p.correct() {
            tp[p.true_label] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (0..n_labels)
        .map(|l| ClassRow {
            label: l,
            precision: ratio(tp[l], predicted[l]),
            recall: ratio(tp[l], support[l]),
            support: support[l],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub bin_low: f64,
    pub bin_high: f64,
    /// Share of all predictions falling in this bin.
    pub count_fraction: f64,
    /// Share of all predictions that fall in this bin and are correct.
    pub correct_fraction: f64,
    /// Accuracy within the bin (0 when empty).
    pub accuracy: f64,
}

/// Ten bins of width 0.1 over the top probability; the last bin is closed.
pub fn calibration_bins(preds: &[Prediction]) -> Vec<CalibrationRow> {
    let mut count = [0usize; CALIBRATION_BINS];
    let mut correct = [0usize; CALIBRATION_BINS];
    for p in preds {
        let b = ((p.top_prob * CALIBRATION_BINS as f64).floor().max(0.0) as usize).min(CALIBRATION_BINS - 1);
        count[b] += 1;
        correct[b] += usize::from(p.correct());
    }
    let n = preds.len().max(1) as f64;
    (0..CALIBRATION_BINS)
        .map(|b| CalibrationRow {
            bin_low: b as f64 / CALIBRATION_BINS as f64,
            bin_high: (b + 1) as f64 / CALIBRATION_BINS as f64,
            count_fraction: count[b] as f64 / n,
            correct_fraction: correct[b] as f64 / n,
            accuracy: if count[b] == 0 {
                0.0
            } else {
                correct[b] as f64 / count[b] as f64
            },
        })
        .collect()
}

/// Headline metrics; the distance metrics only exist for the city task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub acc: f64,
    pub acc_top5: f64,
    pub acc_at_161: Option<f64>,
    pub median_km: Option<f64>,
}

impl Metrics {
    pub fn compute(preds: &[Prediction], labels: &LabelSpace) -> Result<Self> {
        let (acc_at_161, median_km) = if labels.has_coords() {
            (Some(acc_at_161(preds, labels)?), Some(median_error_km(preds, labels)?))
        } else {
            (None, None)
        };
        Ok(Metrics {
            n: preds.len(),
            acc: accuracy(preds)?,
            acc_top5: acc_top5(preds)?,
            acc_at_161,
            median_km,
        })
    }

    /// `metric,value` rows; absent metrics are omitted.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "value"])?;
        out.write_record(["n", &self.n.to_string()])?;
        out.write_record(["acc", &format!("{:.6}", self.acc)])?;
        out.write_record(["acc_top5", &format!("{:.6}", self.acc_top5)])?;
        if let Some(v) = self.acc_at_161 {
            out.write_record(["acc_at_161", &format!("{v:.6}")])?;
        }
        if let Some(v) = self.median_km {
            out.write_record(["median_km", &format!("{v:.3}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn write_per_class_csv<W: Write>(w: W, rows: &[ClassRow], labels: &LabelSpace) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label", "name", "precision", "recall", "support"])?;
    for r in rows {
        out.write_record([
            r.label.to_string(),
            labels.name(r.label).to_string(),
            format!("{:.6}", r.precision),
            format!("{:.6}", r.recall),
            r.support.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_calibration_csv<W: Write>(w: W, rows: &[CalibrationRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_low", "bin_high", "count_fraction", "correct_fraction", "accuracy"])?;
    for r in rows {
        out.write_record([
            format!("{:.1}", r.bin_low),
            format!("{:.1}", r.bin_high),
            format!("{:.6}", r.count_fraction),
            format!("{:.6}", r.correct_fraction),
            format!("{:.6}", r.accuracy),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{City, CityTable};

    fn pred(true_label: usize, ranked: &[usize], p: f64) -> Prediction {
        Prediction {
            true_label,
            true_coords: (0.0, 0.0),
            ranked_labels: ranked.to_vec(),
            top_prob: p,
        }
    }

    #[test]
    fn ranking_helpers() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(top_k(&[0.1f64, 0.4, 0.1, 0.4], 3), vec![1, 3, 0]);
        let p = Prediction::from_probs(&[0.2f32, 0.5, 0.3], 2, (1.0, 2.0));
        assert_eq!(p.ranked_labels, vec![1, 2, 0]);
        assert!((p.top_prob - 0.5).abs() < 1e-7);
    }

    #[test]
    fn accuracy_fixture() {
        let preds = vec![
            pred(0, &[0, 1], 0.9),
            pred(1, &[0, 2, 3, 4, 1], 0.5),
            pred(2, &[1, 0], 0.6),
            pred(3, &[3], 0.7),
        ];
        assert_eq!(accuracy(&preds).unwrap(), 0.5);
        assert_eq!(acc_top5(&preds).unwrap(), 0.75);
        assert!(accuracy(&[]).is_err());
        let all = vec![pred(1, &[1], 1.0); 3];
        assert_eq!(accuracy(&all).unwrap(), 1.0);
    }

    fn meridian_space(offsets_km: &[f64]) -> LabelSpace {
        let cities = offsets_km
            .iter()
            .enumerate()
            .map(|(i, km)| City {
                city_id: i as u32,
                name: format!("c{i}"),
                lat: (km / 6371.0).to_degrees(),
                lon: 0.0,
                country_code: "XX".into(),
                population: 0,
            })
            .collect();
        LabelSpace::cities(&CityTable::new(cities).unwrap()).unwrap()
    }

    #[test]
    fn distance_metrics() {
        let space = meridian_space(&[10.0, 200.0, 161.0, 0.0]);
        let preds: Vec<Prediction> = (0..3).map(|c| pred(3, &[c], 0.5)).collect();
        assert!((acc_at_161(&preds, &space).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((median_error_km(&preds, &space).unwrap() - 161.0).abs() < 1e-9);
        let at_home = vec![pred(3, &[3], 1.0)];
        assert_eq!(acc_at_161(&at_home, &space).unwrap(), 1.0);

        let countries = LabelSpace::countries(&[crate::ingest::test_support::record("u", "US", None)], None).unwrap();
        assert!(acc_at_161(&[pred(0, &[0], 1.0)], &countries).is_err());
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[1.0, 3.0]).unwrap(), 2.0);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn per_class_fixture() {
        // confusion (true -> predicted): 0->0 x2, 0->1, 1->1, 2->0 ; label 3 never seen
        let preds = vec![
            pred(0, &[0], 1.0),
            pred(0, &[0], 1.0),
            pred(0, &[1], 1.0),
            pred(1, &[1], 1.0),
            pred(2, &[0], 1.0),
        ];
        let rows = per_class_pr(&preds, 4);
        assert_eq!((rows[0].precision, rows[0].recall, rows[0].support), (2.0 / 3.0, 2.0 / 3.0, 3));
        assert_eq!((rows[1].precision, rows[1].recall, rows[1].support), (0.5, 1.0, 1));
        assert_eq!((rows[2].precision, rows[2].recall, rows[2].support), (0.0, 0.0, 1));
        assert_eq!((rows[3].precision, rows[3].recall, rows[3].support), (0.0, 0.0, 0));

        let perfect = vec![pred(0, &[0], 1.0), pred(1, &[1], 1.0)];
        assert!(per_class_pr(&perfect, 2).iter().all(|r| r.precision == 1.0 && r.recall == 1.0));
    }

    #[test]
    fn calibration_fixture() {
        let all = vec![pred(0, &[0], 0.95); 4];
        let rows = calibration_bins(&all);
        assert_eq!((rows[9].count_fraction, rows[9].accuracy), (1.0, 1.0));

        let preds = vec![
            pred(0, &[0], 0.05),
            pred(0, &[1], 0.35),
            pred(0, &[0], 0.30),
            pred(0, &[0], 1.0),
            pred(0, &[1], 0.9),
        ];
        let rows = calibration_bins(&preds);
        assert_eq!(rows[0].count_fraction, 0.2);
        assert_eq!(rows[3].count_fraction, 0.4);
        assert_eq!(rows[3].accuracy, 0.5);
        assert_eq!(rows[9].count_fraction, 0.4);
        assert_eq!(rows[9].accuracy, 0.5);
        assert_eq!(rows[5].accuracy, 0.0);
        assert!((rows.iter().map(|r| r.count_fraction).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_reports() {
        let space = meridian_space(&[0.0, 50.0]);
        let preds = vec![pred(0, &[0, 1], 0.8), pred(1, &[0, 1], 0.6)];
        let m = Metrics::compute(&preds, &space).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("acc_at_161,1.000000"));
        assert!(text.contains("median_km"));

        let countries = LabelSpace::countries(
            &[crate::ingest::test_support::record("u", "US", None), crate::ingest::test_support::record("v", "GB", None)],
            None,
        )
        .unwrap();
        let m = Metrics::compute(&preds, &countries).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("acc_at_161") && !text.contains("median_km"));
    }
}
