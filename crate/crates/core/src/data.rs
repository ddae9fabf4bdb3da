//! Trip-record calibration and synthetic desk-scale scenarios.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufReader, Read};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::{ChargingCurve, NetworkConfig};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TripRecord {
    pub pickup_zone: u32,
    pub dropoff_zone: u32,
    #[serde(with = "timestamp")]
    pub pickup_timestamp: NaiveDateTime,
    pub base_fare: f64,
    /// Minutes.
    pub duration: f64,
    /// Miles.
    pub distance: f64,
}

mod timestamp {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer};

    pub const FORMAT: &str = "%Y-%m-%d %H:%M:%S";

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(s.trim(), FORMAT)
            .or_else(|_| NaiveDateTime::parse_from_str(s.trim(), "%Y-%m-%dT%H:%M:%S"))
            .map_err(serde::de::Error::custom)
    }
}

impl TripRecord {
    pub fn validate(&self) -> Result<()> {
        let ok = self.duration > 0.0
            && self.duration.is_finite()
            && self.distance >= 0.0
            && self.distance.is_finite()
            && self.base_fare >= 0.0
            && self.base_fare.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "trip record needs duration > 0, distance >= 0, fare >= 0: {self:?}"
            )))
        }
    }
}

const RECORD_COLUMNS: [&str; 6] = [
    "pickup_zone",
    "dropoff_zone",
    "pickup_timestamp",
    "base_fare",
    "duration",
    "distance",
];

/// Opens a file, transparently decompressing gzip.
fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let head = std::io::Cursor::new(magic[..n].to_vec());
    let chained = head.chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(flate2::read::MultiGzDecoder::new(chained)))
    } else {
        Ok(Box::new(chained))
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, msg: e.to_string() }
}

fn check_headers(headers: &csv::StringRecord, want: &[&str]) -> Result<()> {
    for col in want {
        if !headers.iter().any(|h| h.trim() == *col) {
            return Err(Error::MissingColumn((*col).to_string()));
        }
    }
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_headers(rdr.headers().map_err(csv_error)?, &RECORD_COLUMNS)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<TripRecord>() {
        let rec = row.map_err(csv_error)?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<TripRecord>> {
    read_records(BufReader::new(open_maybe_gz(path)?))
}

/// Zone to region assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionMap {
    zones: BTreeMap<u32, usize>,
    regions: usize,
}

impl RegionMap {
    pub fn new(zones: BTreeMap<u32, usize>) -> Result<Self> {
        let regions = zones.values().max().map_or(0, |m| m + 1);
        let used: BTreeSet<usize> = zones.values().copied().collect();
        if used.len() != regions {
            return Err(Error::InvalidArgument("region ids must be contiguous from 0".into()));
        }
        Ok(Self { zones, regions })
    }

    /// Reads a `zone,region` CSV.
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_headers(rdr.headers().map_err(csv_error)?, &["zone", "region"])?;
        #[derive(Deserialize)]
        struct Row {
            zone: u32,
            region: usize,
        }
        let mut zones = BTreeMap::new();
        for row in rdr.deserialize::<Row>() {
            let r = row.map_err(csv_error)?;
            zones.insert(r.zone, r.region);
        }
        Self::new(zones)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(open_maybe_gz(path)?))
    }

    pub fn num_regions(&self) -> usize {
        self.regions
    }

    pub fn region(&self, zone: u32) -> Result<usize> {
        self.zones
            .get(&zone)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("zone {zone} missing from region map")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayFilter {
    All,
    /// Monday through Friday.
    Weekdays,
    /// Monday through Thursday.
    MonThu,
}

impl DayFilter {
    pub fn keeps(self, day: NaiveDate) -> bool {
        match self {
            Self::All => true,
            Self::Weekdays => !matches!(day.weekday(), Weekday::Sat | Weekday::Sun),
            Self::MonThu => matches!(day.weekday(), Weekday::Mon | Weekday::Tue | Weekday::Wed | Weekday::Thu),
        }
    }
}

/// Vehicle, charger and cost constants not present in trip data.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationParams {
    pub fleet_size: u32,
    /// Battery units per full pack.
    pub battery_capacity: u32,
    pub pack_kwh: f64,
    pub range_miles: f64,
    /// Charger powers in kW.
    pub charger_kw: Vec<f64>,
    /// Chargers per region and power, row-major `(v, k)`; a single entry
    /// per power is broadcast to every region.
    pub chargers: Vec<u32>,
    /// Epochs per charging session.
    pub charge_period: u32,
    pub pickup_patience: u32,
    pub connection_patience: u32,
    /// Dollars per mile driven empty.
    pub reposition_cost_per_mile: f64,
    /// Dollars per kWh.
    pub energy_price: f64,
    pub curve: Option<ChargingCurve>,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            fleet_size: 300,
            battery_capacity: 20,
            pack_kwh: 65.0,
            range_miles: 130.0,
            charger_kw: vec![75.0],
            chargers: vec![30],
            charge_period: 1,
            pickup_patience: 0,
            connection_patience: 0,
            reposition_cost_per_mile: 0.2,
            energy_price: 0.15,
            curve: None,
        }
    }
}

impl CalibrationParams {
    pub fn kwh_per_mile(&self) -> f64 {
        self.pack_kwh / self.range_miles
    }

    pub fn kwh_per_unit(&self) -> f64 {
        self.pack_kwh / f64::from(self.battery_capacity)
    }
}

/// Per-cell sums; merges associatively so days can be processed apart.
#[derive(Debug, Clone, Default, PartialEq)]
struct Accumulator {
    cells: HashMap<(usize, usize, usize), Cell>,
    pairs: HashMap<(usize, usize), (f64, u64)>,
    days: BTreeSet<NaiveDate>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Cell {
    count: u64,
    fare: f64,
    minutes: f64,
}

impl Accumulator {
    fn merge(mut self, other: Accumulator) -> Self {
        for (k, c) in other.cells {
            let e = self.cells.entry(k).or_default();
            e.count += c.count;
            e.fare += c.fare;
            e.minutes += c.minutes;
        }
        for (k, (d, n)) in other.pairs {
            let e = self.pairs.entry(k).or_default();
            e.0 += d;
            e.1 += n;
        }
        self.days.extend(other.days);
        self
    }
}

fn neighbor_mean(values: &[Option<f64>], t: usize) -> Option<f64> {
    let n = values.len();
    let prev = (1..n).map(|d| values[(t + n - d) % n]).find_map(|x| x);
    let next = (1..n).map(|d| values[(t + d) % n]).find_map(|x| x);
    match (prev, next) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (a, b) => a.or(b),
    }
}

/// Builds a config from trip records. Arrival rates are mean counts per
/// `(u, v, t)` over the distinct filtered days; fares and durations are
/// means, durations rounded up to whole epochs. Cells without records get
/// zero demand and fares/durations averaged from the nearest populated
/// times of the same pair. Intra-region trips are dropped.
pub fn calibrate(
    records: &[TripRecord],
    map: &RegionMap,
    epoch_minutes: f64,
    filter: DayFilter,
    params: &CalibrationParams,
) -> Result<NetworkConfig> {
    let per_day = 1440.0 / epoch_minutes;
    if !(epoch_minutes > 0.0) || (per_day - per_day.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument("epoch length must divide a day".into()));
    }
    let horizon = per_day.round() as usize;
    let nv = map.num_regions();
    let mut by_day: BTreeMap<NaiveDate, Vec<&TripRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let day = r.pickup_timestamp.date();
        if filter.keeps(day) {
            by_day.entry(day).or_default().push(r);
        }
    }
    if by_day.is_empty() {
        return Err(Error::InvalidArgument("no trip records left after the day filter".into()));
    }
    let shards: Vec<(NaiveDate, Vec<&TripRecord>)> = by_day.into_iter().collect();
    let partial: Vec<Result<Accumulator>> = par::map_indexed(shards.len(), |i| {
        let (day, recs) = &shards[i];
        let mut acc = Accumulator::default();
        acc.days.insert(*day);
        for r in recs {
            let (u, v) = (map.region(r.pickup_zone)?, map.region(r.dropoff_zone)?);
            let e = acc.pairs.entry((u, v)).or_default();
            e.0 += r.distance;
            e.1 += 1;
            if u == v {
                continue;
            }
            let ts = r.pickup_timestamp;
            let minute = f64::from(ts.hour() * 60 + ts.minute()) + f64::from(ts.second()) / 60.0;
            let t = ((minute / epoch_minutes).floor() as usize).min(horizon - 1);
            let c = acc.cells.entry((u, v, t)).or_default();
            c.count += 1;
            c.fare += r.base_fare;
            c.minutes += r.duration;
        }
        Ok(acc)
    });
    let mut acc = Accumulator::default();
    for p in partial {
        acc = acc.merge(p?);
    }
    let days = acc.days.len() as f64;

    let unit_kwh = params.kwh_per_unit();
    let rates: Vec<u32> = params
        .charger_kw
        .iter()
        .map(|kw| ((kw * epoch_minutes / 60.0 / unit_kwh).round() as u32).max(1))
        .collect();
    let mut cfg = NetworkConfig::blank(nv, horizon, params.fleet_size, params.battery_capacity, rates);
    cfg.epoch_minutes = epoch_minutes;
    cfg.charge_period = params.charge_period;
    cfg.pickup_patience = params.pickup_patience;
    cfg.connection_patience = params.connection_patience;
    cfg.charging_curve = params.curve.clone();
    let nk = params.charger_kw.len();
    cfg.charger_counts = match params.chargers.len() {
        n if n == nk => (0..nv).flat_map(|_| params.chargers.iter().copied()).collect(),
        n if n == nv * nk => params.chargers.clone(),
        _ => return Err(Error::InvalidArgument("chargers must list one count per power or per (region, power)".into())),
    };
    let mean_distance_all = {
        let (d, n) = acc.pairs.values().fold((0.0, 0u64), |a, b| (a.0 + b.0, a.1 + b.1));
        if n > 0 { d / n as f64 } else { 0.0 }
    };
    let mean_minutes_all = {
        let (m, n) = acc.cells.values().fold((0.0, 0u64), |a, c| (a.0 + c.minutes, a.1 + c.count));
        if n > 0 { m / n as f64 } else { epoch_minutes }
    };
    let min_epochs = cfg.pickup_patience + 1;
    for u in 0..nv {
        for v in (0..nv).filter(|&v| v != u) {
            let miles = acc.pairs.get(&(u, v)).map_or(mean_distance_all, |&(d, n)| d / n as f64);
            let i = cfg.uv(u, v);
            cfg.battery_cost[i] = ((miles * params.kwh_per_mile() / unit_kwh).ceil() as u32).min(params.battery_capacity);
            let cells: Vec<Option<Cell>> = (0..horizon).map(|t| acc.cells.get(&(u, v, t)).copied()).collect();
            let fares: Vec<Option<f64>> = cells.iter().map(|c| c.map(|c| c.fare / c.count as f64)).collect();
            let mins: Vec<Option<f64>> = cells.iter().map(|c| c.map(|c| c.minutes / c.count as f64)).collect();
            for t in 0..horizon {
                let j = cfg.uvt(u, v, t);
                let (fare, minutes) = match cells[t] {
                    Some(c) => {
                        cfg.arrival_rate[j] = c.count as f64 / days;
                        (fares[t].unwrap_or(0.0), mins[t].unwrap_or(mean_minutes_all))
                    }
                    None => (
                        neighbor_mean(&fares, t).unwrap_or(0.0),
                        neighbor_mean(&mins, t).unwrap_or(mean_minutes_all),
                    ),
                };
                cfg.trip_reward[j] = fare;
                cfg.trip_duration[j] = ((minutes / epoch_minutes).ceil() as u32).max(min_epochs);
                cfg.reposition_reward[j] = -params.reposition_cost_per_mile * miles;
            }
        }
    }
    for (k, kw) in params.charger_kw.iter().enumerate() {
        for t in 0..horizon {
            cfg.charge_reward[k * horizon + t] = -params.energy_price * kw * epoch_minutes / 60.0 * f64::from(params.charge_period);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Multiplies every arrival rate by `target_fleet / reference_fleet` and
/// sets the fleet size to `target_fleet`.
pub fn scale_demand(cfg: &NetworkConfig, target_fleet: u32, reference_fleet: u32) -> Result<NetworkConfig> {
    if reference_fleet == 0 || target_fleet == 0 {
        return Err(Error::InvalidArgument("fleet sizes must be positive".into()));
    }
    let ratio = f64::from(target_fleet) / f64::from(reference_fleet);
    let mut out = cfg.clone();
    out.arrival_rate.iter_mut().for_each(|l| *l *= ratio);
    out.fleet_size = target_fleet;
    Ok(out)
}

/// Largest number of trips in progress at once. Trips occupy
/// `[pickup, pickup + duration)`, so one ending as another starts do not
/// overlap.
pub fn estimate_reference_fleet(records: &[TripRecord]) -> u32 {
    let mut events: Vec<(i64, i32)> = Vec::with_capacity(2 * records.len());
    for r in records {
        let start = r.pickup_timestamp.and_utc().timestamp_millis();
        let end = start + (r.duration * 60_000.0).round() as i64;
        events.push((start, 1));
        events.push((end, -1));
    }
    events.sort_unstable();
    let (mut live, mut best) = (0i32, 0i32);
    for (_, d) in events {
        live += d;
        best = best.max(live);
    }
    best as u32
}

pub const TEMPLATES: [&str; 3] = ["uniform", "two-region-commute", "hub-spoke-imbalanced"];

/// Small deterministic scenarios. The seed only jitters arrival rates by up
/// to 10%.
pub fn synth_scenario(template: &str, seed: u64) -> Result<NetworkConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = move || 1.0 + 0.1 * (2.0 * rng.gen::<f64>() - 1.0);
    let cfg = match template {
        "uniform" => {
            let (nv, horizon) = (3, 6);
            let mut c = NetworkConfig::blank(nv, horizon, 6, 6, vec![2]);
            c.charge_period = 1;
            c.charger_counts = vec![1; nv];
            c.connection_patience = 1;
            c.charge_reward = vec![-0.5; horizon];
            for u in 0..nv {
                for v in (0..nv).filter(|&v| v != u) {
                    let i = c.uv(u, v);
                    c.battery_cost[i] = 1;
                    for t in 0..horizon {
                        let i = c.uvt(u, v, t);
                        c.arrival_rate[i] = 0.6 * jitter();
                        c.trip_reward[i] = 10.0;
                        c.reposition_reward[i] = -1.0;
                    }
                }
            }
            c
        }
        "two-region-commute" => {
            // morning demand flows 0 -> 1, evening demand 1 -> 0; a weak
            // counterflow keeps both directions present all day
            let horizon = 8;
            let mut c = NetworkConfig::blank(2, horizon, 4, 4, vec![2]);
            c.charge_period = 1;
            c.charger_counts = vec![1, 1];
            c.connection_patience = 1;
            c.battery_cost = vec![0, 1, 1, 0];
            c.charge_reward = vec![-0.5; horizon];
            for t in 0..horizon {
                let am = t < horizon / 2;
                for (u, v, peak) in [(0, 1, am), (1, 0, !am)] {
                    let i = c.uvt(u, v, t);
                    c.arrival_rate[i] = if peak { 2.5 } else { 0.3 } * jitter();
                    c.trip_reward[i] = if peak { 10.0 } else { 6.0 };
                    c.reposition_reward[i] = -1.0;
                }
            }
            c
        }
        "hub-spoke-imbalanced" => {
            // region 0 is a hub with all the chargers; spokes send more
            // demand to the hub than they receive
            let (nv, horizon) = (3, 6);
            let mut c = NetworkConfig::blank(nv, horizon, 6, 6, vec![2]);
            c.charge_period = 1;
            c.charger_counts = vec![3, 0, 0];
            c.connection_patience = 1;
            c.charge_reward = vec![-0.5; horizon];
            for u in 0..nv {
                for v in (0..nv).filter(|&v| v != u) {
                    let i = c.uv(u, v);
                    c.battery_cost[i] = 1;
                    let base = match (u, v) {
                        (0, _) => 0.4,
                        (_, 0) => 1.2,
                        _ => 0.3,
                    };
                    for t in 0..horizon {
                        let i = c.uvt(u, v, t);
                        c.arrival_rate[i] = base * jitter();
                        c.trip_reward[i] = if u == 0 || v == 0 { 8.0 } else { 5.0 };
                        c.reposition_reward[i] = -1.0;
                        c.trip_duration[i] = if u == 0 || v == 0 { 1 } else { 2 };
                    }
                }
            }
            c
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown template `{other}`; expected one of {}",
                TEMPLATES.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
