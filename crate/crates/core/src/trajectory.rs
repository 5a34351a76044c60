//! Car-following trajectories: CSV ingestion, resampling, event extraction,
//! kinematics and train/validation/test splitting.
//!
//! The canonical CSV layout is `event_id,t,lv_id,v_lv,v_fv,spacing` with SI
//! units. Spacing is the bumper-to-bumper gap and is always read from the
//! data, never derived from positions.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used when comparing durations and grid times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub v_lv: f64,
    pub v_fv: f64,
    pub spacing: f64,
}

impl TrajectoryPoint {
    /// Relative speed `v_lv − v_fv`.
    pub fn delta_v(&self) -> f64 {
        self.v_lv - self.v_fv
    }
}

/// One follower behind one leader, sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub event_id: String,
    pub lv_id: String,
    pub points: Vec<TrajectoryPoint>,
    pub dt: f64,
}

impl TrajectoryEvent {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.points.len().saturating_sub(1) as f64 * self.dt
    }

    pub fn fv_speeds(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.v_fv).collect()
    }

    pub fn lv_speeds(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.v_lv).collect()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.spacing).collect()
    }
}

/// Column names used to locate the required fields in a CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// `None` treats the whole file as a single recording.
    pub event_id: Option<String>,
    pub t: String,
    pub lv_id: String,
    pub v_lv: String,
    pub v_fv: String,
    pub spacing: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            event_id: Some("event_id".into()),
            t: "t".into(),
            lv_id: "lv_id".into(),
            v_lv: "v_lv".into(),
            v_fv: "v_fv".into(),
            spacing: "spacing".into(),
        }
    }
}

struct RawRow {
    line: usize,
    event_id: String,
    lv_id: String,
    point: TrajectoryPoint,
}

/// Reads a trajectory CSV and returns one candidate event per run of rows
/// sharing `(event_id, lv_id)`, each resampled onto a uniform `dt` grid.
///
/// An empty file (or a header without rows) yields no events.
pub fn load_events(path: &Path, schema: &CsvSchema, dt: f64) -> Result<Vec<TrajectoryEvent>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if file.metadata().map(|m| m.len() == 0).unwrap_or(false) {
        return Ok(Vec::new());
    }
    read_events(file, schema, dt)
}

/// Same as [`load_events`] for any reader.
pub fn read_events<R: std::io::Read>(
    reader: R,
    schema: &CsvSchema,
    dt: f64,
) -> Result<Vec<TrajectoryEvent>> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let event_col = schema.event_id.as_deref().map(col).transpose()?;
    let t_col = col(&schema.t)?;
    let lv_col = col(&schema.lv_id)?;
    let vlv_col = col(&schema.v_lv)?;
    let vfv_col = col(&schema.v_fv)?;
    let sp_col = col(&schema.spacing)?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, name: &str| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Data {
                    row: line,
                    reason: format!("{name} is not a finite number: {:?}", field(c)),
                })
        };
        let point = TrajectoryPoint {
            t: num(t_col, &schema.t)?,
            v_lv: num(vlv_col, &schema.v_lv)?,
            v_fv: num(vfv_col, &schema.v_fv)?,
            spacing: num(sp_col, &schema.spacing)?,
        };
        if point.spacing <= 0.0 {
            return Err(Error::Data {
                row: line,
                reason: format!("non-positive spacing {}", point.spacing),
            });
        }
        if point.v_lv < 0.0 || point.v_fv < 0.0 {
            return Err(Error::Data {
                row: line,
                reason: "negative speed".into(),
            });
        }
        rows.push(RawRow {
            line,
            event_id: event_col.map(|c| field(c).to_string()).unwrap_or_default(),
            lv_id: field(lv_col).to_string(),
            point,
        });
    }

    // Group consecutive rows; a leader change starts a new segment.
    let mut groups: Vec<(String, String, Vec<&RawRow>)> = Vec::new();
    for row in &rows {
        match groups.last_mut() {
            Some((eid, lid, members)) if *eid == row.event_id && *lid == row.lv_id => {
                members.push(row)
            }
            _ => groups.push((row.event_id.clone(), row.lv_id.clone(), vec![row])),
        }
    }
    let mut segments_per_event = std::collections::HashMap::<&str, usize>::new();
    for (eid, _, _) in &groups {
        *segments_per_event.entry(eid.as_str()).or_default() += 1;
    }

    let mut seen = std::collections::HashMap::<String, usize>::new();
    let mut events = Vec::with_capacity(groups.len());
    for (eid, lid, members) in &groups {
        for pair in members.windows(2) {
            if pair[1].point.t <= pair[0].point.t {
                return Err(Error::Data {
                    row: pair[1].line,
                    reason: format!(
                        "time {} does not increase (previous {})",
                        pair[1].point.t, pair[0].point.t
                    ),
                });
            }
        }
        let k = seen.entry(eid.clone()).or_default();
        let event_id = if segments_per_event[eid.as_str()] > 1 {
            format!("{eid}/{k}")
        } else {
            eid.clone()
        };
        *k += 1;
        let raw: Vec<TrajectoryPoint> = members.iter().map(|r| r.point).collect();
        events.push(TrajectoryEvent {
            event_id,
            lv_id: lid.clone(),
            points: resample(&raw, dt),
            dt,
        });
    }
    Ok(events)
}

/// Linearly interpolates `raw` (strictly increasing `t`) onto
/// `t0 + k·dt, k = 0..=floor((t_end − t0)/dt)`.
pub fn resample(raw: &[TrajectoryPoint], dt: f64) -> Vec<TrajectoryPoint> {
    let (Some(first), Some(last)) = (raw.first(), raw.last()) else {
        return Vec::new();
    };
    let t0 = first.t;
    let n = ((last.t - t0) / dt + TIME_EPS).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        while j + 1 < raw.len() && raw[j + 1].t <= t + TIME_EPS {
            j += 1;
        }
        let a = raw[j];
        let p = if (t - a.t).abs() <= TIME_EPS || j + 1 == raw.len() {
            TrajectoryPoint { t, ..a }
        } else {
            let b = raw[j + 1];
            let w = (t - a.t) / (b.t - a.t);
            let lerp = |x: f64, y: f64| x + (y - x) * w;
            TrajectoryPoint {
                t,
                v_lv: lerp(a.v_lv, b.v_lv),
                v_fv: lerp(a.v_fv, b.v_fv),
                spacing: lerp(a.spacing, b.spacing),
            }
        };
        out.push(p);
    }
    out
}

/// Writes events in the canonical CSV layout.
pub fn write_events(path: &Path, events: &[TrajectoryEvent]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_events_to(file, events)
}

pub fn write_events_to<W: Write>(writer: W, events: &[TrajectoryEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["event_id", "t", "lv_id", "v_lv", "v_fv", "spacing"])?;
    for ev in events {
        for p in &ev.points {
            w.write_record([
                ev.event_id.clone(),
                p.t.to_string(),
                ev.lv_id.clone(),
                p.v_lv.to_string(),
                p.v_fv.to_string(),
                p.spacing.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Result of [`extract_events`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub events: Vec<TrajectoryEvent>,
    pub rejected: usize,
}

/// Keeps candidates that follow a single leader for strictly longer than
/// `min_duration` seconds.
pub fn extract_events(raw: Vec<TrajectoryEvent>, min_duration: f64) -> Extraction {
    let total = raw.len();
    let events: Vec<_> = raw
        .into_iter()
        .filter(|ev| ev.len() >= 2 && ev.duration() > min_duration + TIME_EPS)
        .collect();
    Extraction {
        rejected: total - events.len(),
        events,
    }
}

/// Forward differences of the follower's speed.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    /// `(v[t+1] − v[t]) / dt`, length `len − 1`.
    pub acceleration: Vec<f64>,
    /// `(a[t+1] − a[t]) / dt`, length `len − 2`.
    pub jerk: Vec<f64>,
}

pub fn forward_difference(series: &[f64], dt: f64) -> Vec<f64> {
    series.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

pub fn kinematics(event: &TrajectoryEvent) -> Result<Kinematics> {
    if event.len() < 3 {
        return Err(Error::TooShort {
            what: "kinematics",
            required: 3,
            actual: event.len(),
        });
    }
    let acceleration = forward_difference(&event.fv_speeds(), event.dt);
    let jerk = forward_difference(&acceleration, event.dt);
    Ok(Kinematics { acceleration, jerk })
}

/// Event-level partition into training, validation and test sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitBucket {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitBucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::Invalid(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

impl SplitAssignment {
    pub fn ids(&self, bucket: SplitBucket) -> &[String] {
        match bucket {
            SplitBucket::Train => &self.train,
            SplitBucket::Val => &self.val,
            SplitBucket::Test => &self.test,
        }
    }

    /// Events of `all` whose id belongs to `bucket`, in the order of `all`.
    pub fn select<'a>(
        &self,
        all: &'a [TrajectoryEvent],
        bucket: SplitBucket,
    ) -> Vec<&'a TrajectoryEvent> {
        let ids: HashSet<&str> = self.ids(bucket).iter().map(String::as_str).collect();
        all.iter().filter(|e| ids.contains(e.event_id.as_str())).collect()
    }
}

/// 70/15/15 split: validation and test each get `floor(0.15·n)` events (at
/// least one), training gets the remainder.
pub fn split(events: &[TrajectoryEvent], seed: u64) -> Result<SplitAssignment> {
    let mut ids: Vec<String> = events.iter().map(|e| e.event_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != events.len() {
        return Err(Error::Invalid("duplicate event ids".into()));
    }
    let n = ids.len();
    if n < 3 {
        return Err(Error::Invalid(format!("split needs at least 3 events, got {n}")));
    }
    let n_holdout = (n * 15 / 100).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(n - n_holdout);
    let val = ids.split_off(n - 2 * n_holdout);
    Ok(SplitAssignment {
        train: ids,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(id: &str, n: usize, dt: f64) -> TrajectoryEvent {
        TrajectoryEvent {
            event_id: id.into(),
            lv_id: "L".into(),
            points: (0..n)
                .map(|k| TrajectoryPoint {
                    t: k as f64 * dt,
                    v_lv: 10.0,
                    v_fv: 10.0,
                    spacing: 20.0,
                })
                .collect(),
            dt,
        }
    }

    #[test]
    fn three_row_csv_is_one_event() {
        let csv = "event_id,t,lv_id,v_lv,v_fv,spacing\n\
                   e1,0.0,7,10,10,20\ne1,0.1,7,10,10,20\ne1,0.2,7,10,10,20\n";
        let evs = read_events(csv.as_bytes(), &CsvSchema::default(), 0.1).unwrap();
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].len(), 3);
        assert_eq!(evs[0].lv_id, "7");
    }

    #[test]
    fn leader_change_splits_segments() {
        let csv = "event_id,t,lv_id,v_lv,v_fv,spacing\n\
                   e1,0.0,7,10,10,20\ne1,0.1,7,10,10,20\ne1,0.2,8,10,10,20\ne1,0.3,8,10,10,20\n";
        let evs = read_events(csv.as_bytes(), &CsvSchema::default(), 0.1).unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!((evs[0].lv_id.as_str(), evs[1].lv_id.as_str()), ("7", "8"));
        assert_ne!(evs[0].event_id, evs[1].event_id);
    }

    #[test]
    fn resamples_25hz_to_10hz() {
        // 5 rows at 25 Hz: t = 0, .04, .08, .12, .16; v_fv = 10 + 10 t
        let mut csv = String::from("event_id,t,lv_id,v_lv,v_fv,spacing\n");
        for k in 0..5 {
            let t = k as f64 * 0.04;
            csv.push_str(&format!("a,{t},1,12,{},{}\n", 10.0 + 10.0 * t, 20.0 - t));
        }
        let evs = read_events(csv.as_bytes(), &CsvSchema::default(), 0.1).unwrap();
        let pts = &evs[0].points;
        // floor(0.16 / 0.1) + 1
        assert_eq!(pts.len(), 2);
        // t = 0.1 lies between rows at .08 and .12: weight 0.5
        assert!((pts[1].t - 0.1).abs() < 1e-12);
        assert!((pts[1].v_fv - 11.0).abs() < 1e-12);
        assert!((pts[1].spacing - 19.9).abs() < 1e-12);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "event_id,t,lv_id,v_lv,v_fv\ne1,0,1,10,10\n";
        let err = read_events(csv.as_bytes(), &CsvSchema::default(), 0.1).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("spacing")), "{err}");
    }

    #[test]
    fn negative_spacing_names_row() {
        let csv = "event_id,t,lv_id,v_lv,v_fv,spacing\ne1,0,1,10,10,5\ne1,0.1,1,10,10,-1\n";
        let err = read_events(csv.as_bytes(), &CsvSchema::default(), 0.1).unwrap_err();
        assert!(matches!(err, Error::Data { row: 3, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_empty_result() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(load_events(&path, &CsvSchema::default(), 0.1).unwrap().is_empty());
        std::fs::write(&path, "event_id,t,lv_id,v_lv,v_fv,spacing\n").unwrap();
        assert!(load_events(&path, &CsvSchema::default(), 0.1).unwrap().is_empty());
    }

    #[test]
    fn duration_threshold_is_strict() {
        let short = event("a", 150, 0.1); // 14.9 s
        let exact = event("b", 151, 0.1); // 15.0 s
        let long = event("c", 152, 0.1); // 15.1 s
        let out = extract_events(vec![short, exact, long], 15.0);
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].event_id, "c");
        assert_eq!(out.rejected, 2);
    }

    #[test]
    fn durations_ten_to_nineteen_keep_four() {
        let raw: Vec<_> = (10..20).map(|d| event(&d.to_string(), d * 10 + 1, 0.1)).collect();
        let out = extract_events(raw, 15.0);
        let kept: Vec<_> = out.events.iter().map(|e| e.event_id.as_str()).collect();
        assert_eq!(kept, ["16", "17", "18", "19"]);
    }

    #[test]
    fn kinematics_hand_values() {
        let mut ev = event("k", 3, 0.1);
        for (p, v) in ev.points.iter_mut().zip([10.0, 11.0, 13.0]) {
            p.v_fv = v;
        }
        let k = kinematics(&ev).unwrap();
        assert_eq!(k.acceleration.len(), 2);
        assert!((k.acceleration[0] - 10.0).abs() < 1e-9);
        assert!((k.acceleration[1] - 20.0).abs() < 1e-9);
        assert!((k.jerk[0] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn kinematics_constant_and_ramp() {
        let ev = event("c", 20, 0.1);
        let k = kinematics(&ev).unwrap();
        assert!(k.acceleration.iter().chain(&k.jerk).all(|x| *x == 0.0));

        let mut ramp = event("r", 20, 0.1);
        for p in &mut ramp.points {
            p.v_fv = 10.0 + p.t;
        }
        let k = kinematics(&ramp).unwrap();
        assert!(k.acceleration.iter().all(|a| (a - 1.0).abs() < 1e-9));
        assert!(k.jerk.iter().all(|j| j.abs() < 1e-7));
    }

    #[test]
    fn kinematics_too_short() {
        let err = kinematics(&event("s", 2, 0.1)).unwrap_err();
        assert!(matches!(err, Error::TooShort { required: 3, actual: 2, .. }));
    }

    #[test]
    fn split_sizes() {
        let evs: Vec<_> = (0..100).map(|i| event(&format!("e{i}"), 3, 0.1)).collect();
        let s = split(&evs, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));

        let evs: Vec<_> = (0..20).map(|i| event(&format!("e{i}"), 3, 0.1)).collect();
        let s = split(&evs, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));
        assert_eq!(s, split(&evs, 7).unwrap());
        assert_ne!(s, split(&evs, 8).unwrap());
    }

    #[test]
    fn split_needs_three_events() {
        let evs: Vec<_> = (0..2).map(|i| event(&format!("e{i}"), 3, 0.1)).collect();
        assert!(split(&evs, 0).is_err());
    }
}
