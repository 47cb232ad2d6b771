//! Data preparation: 5-minute detector records to hourly node series, the
//! degenerate-series filter, and a synthetic coherent generator with
//! injected surges for end-to-end checks.
//!
//! Missing-hour semantics: an hour with no source records at all is marked
//! missing (`NaN`) for every key; an hour that has records for some keys
//! stores an explicit zero for the keys without any. The distinction matters
//! because regression rows containing missing values are dropped, while
//! zeros are ordinary observations.

use crate::design;
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_summing_matrix, BottomKey, GroupAttribute, LevelSpec, StructureSpec, SummingMatrix,
};
use crate::par;
use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// One 5-minute detector record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// Start of the 5-minute bin.
    pub timestamp: NaiveDateTime,
    pub station: String,
    pub direction: String,
    pub highway: String,
    pub vehicle_type: String,
    pub count: u64,
}

impl RawRecord {
    /// Field order of the raw CSV schema:
    /// `timestamp,station,direction,highway,vehicle_type,count`.
    pub const CSV_HEADER: [&'static str; 6] = [
        "timestamp",
        "station",
        "direction",
        "highway",
        "vehicle_type",
        "count",
    ];

    /// Parses one data row (already split into fields). `line` is the
    /// 1-based source line for diagnostics.
    pub fn from_fields(fields: &[&str], line: usize) -> Result<Self> {
        if fields.len() != 6 {
            return Err(Error::MalformedRow {
                line,
                message: format!("expected 6 columns, got {}", fields.len()),
            });
        }
        let timestamp = NaiveDateTime::parse_from_str(fields[0].trim(), "%Y-%m-%d %H:%M")
            .map_err(|e| Error::MalformedRow {
                line,
                message: format!("bad timestamp {:?}: {e}", fields[0]),
            })?;
        let count: u64 = fields[5].trim().parse().map_err(|_| Error::MalformedRow {
            line,
            message: format!("bad count {:?}", fields[5]),
        })?;
        Ok(RawRecord {
            timestamp,
            station: fields[1].trim().to_string(),
            direction: fields[2].trim().to_string(),
            highway: fields[3].trim().to_string(),
            vehicle_type: fields[4].trim().to_string(),
            count,
        })
    }

    /// Bottom key in the canonical part order
    /// (station, highway, direction, vehicle type).
    pub fn bottom_key(&self) -> BottomKey {
        BottomKey::new([
            self.station.as_str(),
            self.highway.as_str(),
            self.direction.as_str(),
            self.vehicle_type.as_str(),
        ])
    }
}

/// Hourly bottom-level series on a contiguous hour grid.
#[derive(Debug, Clone)]
pub struct HourlyBottom {
    /// Timestamp of hour index 0.
    pub start: NaiveDateTime,
    pub hours: usize,
    /// Per-key hourly values; `NaN` marks hours with no source data at all.
    pub series: BTreeMap<BottomKey, Vec<f64>>,
}

fn hour_floor(ts: NaiveDateTime) -> NaiveDateTime {
    ts.date()
        .and_time(NaiveTime::from_hms_opt(ts.hour(), 0, 0).expect("valid hour"))
}

/// Sums 5-minute records into hourly values per bottom key.
pub fn aggregate_hourly(records: &[RawRecord]) -> Result<HourlyBottom> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to aggregate".into()));
    }
    let start = hour_floor(records.iter().map(|r| r.timestamp).min().unwrap());
    let end = hour_floor(records.iter().map(|r| r.timestamp).max().unwrap());
    let hours = ((end - start).num_hours() as usize) + 1;

    // An hour is "present" if any key has a record in it; keys without
    // records in a present hour observed zero vehicles.
    let mut present = vec![false; hours];
    let mut sums: BTreeMap<BottomKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        let h = (hour_floor(r.timestamp) - start).num_hours() as usize;
        present[h] = true;
        sums.entry(r.bottom_key())
            .or_insert_with(|| vec![0.0; hours])
            [h] += r.count as f64;
    }
    for series in sums.values_mut() {
        for (h, v) in series.iter_mut().enumerate() {
            if !present[h] {
                *v = f64::NAN;
            }
        }
    }
    Ok(HourlyBottom {
        start,
        hours,
        series: sums,
    })
}

/// Fraction of zeros (among observed values) at or above which a series is
/// dropped.
pub const ZERO_FRACTION_CUTOFF: f64 = 0.8;

/// Drops all-zero and mostly-zero series; returns the kept set and the
/// dropped keys for audit.
pub fn filter_degenerate(bottom: HourlyBottom) -> (HourlyBottom, Vec<BottomKey>) {
    let mut dropped = Vec::new();
    let mut kept = BTreeMap::new();
    for (key, series) in bottom.series {
        let observed = series.iter().filter(|v| v.is_finite()).count();
        let zeros = series.iter().filter(|v| **v == 0.0).count();
        if observed == 0 || zeros as f64 >= ZERO_FRACTION_CUTOFF * observed as f64 {
            dropped.push(key);
        } else {
            kept.insert(key, series);
        }
    }
    (
        HourlyBottom {
            start: bottom.start,
            hours: bottom.hours,
            series: kept,
        },
        dropped,
    )
}

/// Aligned hourly series for every node of a structure.
#[derive(Debug, Clone)]
pub struct SeriesCollection {
    /// Timestamp of hour index 0.
    pub start: NaiveDateTime,
    /// T x n node values, columns in summing-matrix node order; `NaN` marks
    /// missing observations (an aggregate is missing whenever any of its
    /// bottom series is).
    pub matrix: DMatrix<f64>,
    pub summing: SummingMatrix,
}

impl SeriesCollection {
    pub fn hours(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn timestamp(&self, hour: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(hour as i64)
    }

    /// Contiguous storage of one node's series.
    pub fn node_series(&self, node: usize) -> &[f64] {
        let t = self.hours();
        &self.matrix.as_slice()[node * t..(node + 1) * t]
    }

    /// Builds all node series from a bottom-level T x m matrix whose columns
    /// follow the summing-matrix bottom order.
    pub fn from_bottom(
        start: NaiveDateTime,
        summing: SummingMatrix,
        bottom: &DMatrix<f64>,
    ) -> Result<Self> {
        if bottom.ncols() != summing.m() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bottom columns", summing.m()),
                actual: format!("{}", bottom.ncols()),
            });
        }
        let t = bottom.nrows();
        let n = summing.n();
        let mut matrix = DMatrix::zeros(t, n);
        let mut row = vec![0.0; summing.m()];
        for hour in 0..t {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = bottom[(hour, j)];
            }
            let y = summing.aggregate(&row)?;
            for (i, v) in y.iter().enumerate() {
                matrix[(hour, i)] = *v;
            }
        }
        Ok(Self {
            start,
            matrix,
            summing,
        })
    }

    /// Assembles a collection from hourly bottom series, building the
    /// summing matrix over the (sorted) observed keys.
    pub fn assemble(spec: &StructureSpec, bottom: &HourlyBottom) -> Result<Self> {
        let keys: Vec<BottomKey> = bottom.series.keys().cloned().collect();
        let summing = build_summing_matrix(spec, &keys)?;
        let t = bottom.hours;
        let mut mat = DMatrix::zeros(t, keys.len());
        for (j, key) in keys.iter().enumerate() {
            let series = &bottom.series[key];
            for (hour, &v) in series.iter().enumerate() {
                mat[(hour, j)] = v;
            }
        }
        Self::from_bottom(bottom.start, summing, &mat)
    }
}

/// A surge injected into (and reported back from) the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedAnomaly {
    /// Bottom node label.
    pub node: String,
    /// Absolute hour index.
    pub hour: usize,
    /// Surge size in units of the series' noise standard deviation.
    pub sigmas: f64,
}

/// Generates a coherent synthetic collection: positive baseline x daily
/// profile x weekly profile plus autocorrelated noise, rounded to counts.
///
/// The noise mixes a global factor, a factor shared within each top-level
/// group, and an idiosyncratic term, so base-forecast errors are
/// cross-correlated the way traffic series are. Surges from `plan` are added
/// at the requested bottom cells before aggregation, and echoed back as the
/// ground truth. Same seed, same bytes.
pub fn generate_synthetic(
    spec: &StructureSpec,
    bottom_keys: &[BottomKey],
    days: usize,
    start_date: NaiveDate,
    seed: u64,
    plan: &[InjectedAnomaly],
) -> Result<(SeriesCollection, Vec<InjectedAnomaly>)> {
    use crate::bootstrap::split_seed;

    if days < 15 {
        return Err(Error::InvalidInput(format!(
            "need at least 15 days for one train/test split, got {days}"
        )));
    }
    let summing = build_summing_matrix(spec, bottom_keys)?;
    let t = days * 24;
    let m = summing.m();

    for inj in plan {
        if !summing
            .bottom_labels()
            .iter()
            .any(|l| l == &inj.node)
        {
            return Err(Error::UnknownNode(inj.node.clone()));
        }
        if inj.hour >= t {
            return Err(Error::InvalidInput(format!(
                "injection hour {} outside 0..{t}",
                inj.hour
            )));
        }
    }

    // Shared noise factors: one global, one per top-level group.
    let top_label = |key: &BottomKey| -> String {
        match spec.levels.first() {
            Some(level) => match &level.parents {
                Some(p) => p.get(key.finest()).cloned().unwrap_or_default(),
                None => key.finest().to_string(),
            },
            None => String::new(),
        }
    };
    let groups: Vec<String> = bottom_keys.iter().map(|k| top_label(k)).collect();
    let mut group_names: Vec<String> = groups.clone();
    group_names.sort();
    group_names.dedup();
    let group_idx: Vec<usize> = groups
        .iter()
        .map(|g| group_names.iter().position(|n| n == g).unwrap())
        .collect();

    let ar = |rng: &mut ChaCha8Rng, phi: f64| -> Vec<f64> {
        let scale = (1.0 - phi * phi).sqrt();
        let mut z = vec![0.0; t];
        let mut prev = rng.sample::<f64, _>(StandardNormal);
        z[0] = prev;
        for slot in z.iter_mut().skip(1) {
            prev = phi * prev + scale * rng.sample::<f64, _>(StandardNormal);
            *slot = prev;
        }
        z
    };
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, u64::MAX));
    let global = ar(&mut rng, 0.6);
    let group_factors: Vec<Vec<f64>> = (0..group_names.len())
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, (1 << 40) + g as u64));
            ar(&mut rng, 0.6)
        })
        .collect();

    // Daily bell peaking mid-afternoon and a mild weekend dip.
    let daily = |hour_of_day: usize| -> f64 {
        let x = (hour_of_day as f64 - 14.0) / 5.0;
        0.25 + 0.85 * (-0.5 * x * x).exp()
    };
    let weekly = |weekday: u32| -> f64 {
        match weekday {
            5 => 0.88,
            6 => 0.78,
            _ => 1.0,
        }
    };
    let start = start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let weekday0 = start_date.weekday().num_days_from_monday();

    struct KeySeries {
        values: Vec<f64>,
        noise_sd: f64,
    }
    let per_key: Vec<KeySeries> = par::map_indices(m, |j| {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, j as u64));
        let base = 30.0 * (rng.random_range(0.0..1.0f64) * 2.3f64).exp();
        let rel_sd = rng.random_range(0.06..0.14);
        let idio = ar(&mut rng, 0.6);
        let gf = &group_factors[group_idx[j]];
        let mut values = Vec::with_capacity(t);
        let mut sq_noise = 0.0;
        for hour in 0..t {
            let mean = base
                * daily(hour % 24)
                * weekly((weekday0 + (hour / 24) as u32) % 7);
            let z = 0.55 * global[hour] + 0.45 * gf[hour] + 0.70 * idio[hour];
            let noisy = (mean * (1.0 + rel_sd * z)).max(0.0);
            sq_noise += (noisy - mean) * (noisy - mean);
            values.push(noisy.round());
        }
        KeySeries {
            values,
            noise_sd: (sq_noise / t as f64).sqrt(),
        }
    });

    let mut bottom = DMatrix::zeros(t, m);
    for (j, ks) in per_key.iter().enumerate() {
        for (hour, &v) in ks.values.iter().enumerate() {
            bottom[(hour, j)] = v;
        }
    }

    let mut truth = Vec::with_capacity(plan.len());
    for inj in plan {
        let j = summing
            .bottom_labels()
            .iter()
            .position(|l| l == &inj.node)
            .expect("validated above");
        bottom[(inj.hour, j)] += (inj.sigmas * per_key[j].noise_sd).round().max(1.0);
        truth.push(inj.clone());
    }

    let collection = SeriesCollection::from_bottom(start, summing, &bottom)?;
    Ok((collection, truth))
}

/// Small two-region network used in tests and examples: each station carries
/// one direction, bottom keys are station x vehicle type.
pub fn demo_structure(stations_per_region: usize) -> (StructureSpec, Vec<BottomKey>) {
    let mut parents = BTreeMap::new();
    let mut keys = Vec::new();
    let vehicles = ["car", "truck"];
    for (r, region) in ["east", "west"].iter().enumerate() {
        for s in 0..stations_per_region {
            let station = format!("{}{:02}", region.to_uppercase().chars().next().unwrap(), s);
            parents.insert(station.clone(), region.to_string());
            let direction = if s % 2 == 0 { "north" } else { "south" };
            let highway = if (r + s) % 2 == 0 { "H1" } else { "H2" };
            for vehicle in vehicles {
                keys.push(BottomKey::new([
                    station.as_str(),
                    highway,
                    direction,
                    vehicle,
                ]));
            }
        }
    }
    let spec = StructureSpec {
        levels: vec![
            LevelSpec::mapped("region", parents),
            LevelSpec::identity("station"),
        ],
        attributes: vec![
            GroupAttribute {
                name: "highway".into(),
                categories: vec!["H1".into(), "H2".into()],
            },
            GroupAttribute {
                name: "direction".into(),
                categories: vec!["north".into(), "south".into()],
            },
            GroupAttribute {
                name: "vehicle_type".into(),
                categories: vehicles.iter().map(|v| v.to_string()).collect(),
            },
        ],
        crossings: vec![
            ("region".into(), "direction".into()),
            ("highway".into(), "direction".into()),
        ],
    };
    keys.sort();
    (spec, keys)
}

/// Full-scale structure shaped like the Taiwanese highway network: three
/// regions, 319 stations, three highways, four directions (east/west exist
/// only on the elevated highway in the north), five vehicle types, the six
/// two-way crossings, and 1590 bottom keys after dropping five.
pub fn taiwan_highway_structure() -> (StructureSpec, Vec<BottomKey>) {
    const VEHICLES: [&str; 5] = ["car", "small truck", "bus", "big truck", "tractor-trailer"];
    // (region, highway, direction, station count) cells; 319 stations total.
    let cells: [(&str, &str, &str, usize); 16] = [
        ("north", "No.1", "north", 15),
        ("north", "No.1", "south", 15),
        ("north", "No.3", "north", 15),
        ("north", "No.3", "south", 15),
        ("north", "elevated No.1", "north", 15),
        ("north", "elevated No.1", "south", 15),
        ("north", "elevated No.1", "east", 15),
        ("north", "elevated No.1", "west", 15),
        ("center", "No.1", "north", 25),
        ("center", "No.1", "south", 25),
        ("center", "No.3", "north", 25),
        ("center", "No.3", "south", 25),
        ("south", "No.1", "north", 24),
        ("south", "No.1", "south", 25),
        ("south", "No.3", "north", 25),
        ("south", "No.3", "south", 25),
    ];

    let mut parents = BTreeMap::new();
    let mut keys = Vec::new();
    let mut station_no = 0usize;
    for (region, highway, direction, count) in cells {
        for _ in 0..count {
            station_no += 1;
            let station = format!("T{station_no:03}");
            parents.insert(station.clone(), region.to_string());
            for vehicle in VEHICLES {
                keys.push(BottomKey::new([
                    station.as_str(),
                    highway,
                    direction,
                    vehicle,
                ]));
            }
        }
    }
    debug_assert_eq!(station_no, 319);

    // The zero filter removes a handful of series in the real data; mirror
    // that by dropping one sparse vehicle class at five stations.
    let drop: Vec<BottomKey> = (1..=5)
        .map(|i| {
            BottomKey::new([
                format!("T{i:03}"),
                "No.1".to_string(),
                "north".to_string(),
                "tractor-trailer".to_string(),
            ])
        })
        .collect();
    keys.retain(|k| !drop.contains(k));
    keys.sort();

    let spec = StructureSpec {
        levels: vec![
            LevelSpec::mapped("region", parents),
            LevelSpec::identity("station"),
        ],
        attributes: vec![
            GroupAttribute {
                name: "highway".into(),
                categories: vec!["No.1".into(), "elevated No.1".into(), "No.3".into()],
            },
            GroupAttribute {
                name: "direction".into(),
                categories: vec!["north".into(), "south".into(), "east".into(), "west".into()],
            },
            GroupAttribute {
                name: "vehicle_type".into(),
                categories: VEHICLES.iter().map(|v| v.to_string()).collect(),
            },
        ],
        crossings: vec![
            ("region".into(), "direction".into()),
            ("region".into(), "highway".into()),
            ("region".into(), "vehicle_type".into()),
            ("highway".into(), "direction".into()),
            ("highway".into(), "vehicle_type".into()),
            ("direction".into(), "vehicle_type".into()),
        ],
    };
    (spec, keys)
}
