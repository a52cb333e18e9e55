//! Forecast and observation files.
//!
//! Forecast CSV: `date,lead_time_h,group,member_index,value_cm`, one row per
//! member with 1-based member indices. Observation CSV:
//! `date,lead_time_h,value_cm`, keyed by issue date and lead time. An empty
//! or `NA` value marks a missing entry.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bma::{ForecastCase, GroupSpec};
use crate::error::{Error, Result};

pub const FORECAST_HEADER: [&str; 5] = ["date", "lead_time_h", "group", "member_index", "value_cm"];
pub const OBSERVATION_HEADER: [&str; 3] = ["date", "lead_time_h", "value_cm"];

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Member values keyed by `(date, lead, group, member)`, `None` when missing.
pub type ForecastTable = BTreeMap<(NaiveDate, u32, usize, usize), Option<f64>>;

/// Observations keyed by `(date, lead)`, `None` when missing.
pub type ObservationTable = BTreeMap<(NaiveDate, u32), Option<f64>>;

/// A `(date, lead time)` that was dropped while loading, and why.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub date: NaiveDate,
    pub lead_time_h: u32,
    pub reason: String,
}

/// Complete forecast cases in centimetres, indexed by issue date and lead time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub group_spec: GroupSpec,
    pub cases: BTreeMap<(NaiveDate, u32), ForecastCase>,
    pub exclusions: Vec<Exclusion>,
}

fn parse_err(file: &str, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

struct Fields<'a> {
    file: &'a str,
    line: u64,
    record: &'a csv::StringRecord,
    header: &'a [&'a str],
}

impl Fields<'_> {
    fn raw(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("").trim()
    }

    fn err(&self, i: usize, message: impl Into<String>) -> Error {
        parse_err(self.file, self.line, self.header[i], message)
    }

    fn date(&self, i: usize) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(self.raw(i), DATE_FORMAT).map_err(|_| {
            self.err(
                i,
                format!("expected a YYYY-MM-DD date, got `{}`", self.raw(i)),
            )
        })
    }

    fn uint(&self, i: usize) -> Result<u64> {
        self.raw(i).parse().map_err(|_| {
            self.err(
                i,
                format!("expected a nonnegative integer, got `{}`", self.raw(i)),
            )
        })
    }

    /// Positive finite value, or `None` for an empty or `NA` field.
    fn level(&self, i: usize) -> Result<Option<f64>> {
        let s = self.raw(i);
        if s.is_empty() || s.eq_ignore_ascii_case("na") {
            return Ok(None);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| self.err(i, format!("expected a number, got `{s}`")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(self.err(
                i,
                format!("water level must be positive and finite, got `{s}`"),
            ));
        }
        Ok(Some(v))
    }
}

fn records<R: Read>(
    reader: R,
    file: &str,
    header: &'static [&'static str],
    mut each: impl FnMut(Fields<'_>) -> Result<()>,
) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let got = rdr
        .headers()
        .map_err(|e| parse_err(file, 1, "", e.to_string()))?
        .clone();
    let names: Vec<&str> = got.iter().collect();
    if names != header {
        return Err(parse_err(
            file,
            1,
            "",
            format!(
                "expected header `{}`, got `{}`",
                header.join(","),
                names.join(",")
            ),
        ));
    }
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(file, line, "", e.to_string())
        })?;
        if !more {
            return Ok(());
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(
                file,
                line,
                "",
                format!("expected {} fields, got {}", header.len(), record.len()),
            ));
        }
        each(Fields {
            file,
            line,
            record: &record,
            header,
        })?;
    }
}

fn lead_time(f: &Fields<'_>, i: usize) -> Result<u32> {
    let v = f.uint(i)?;
    u32::try_from(v).ok().filter(|&v| v > 0).ok_or_else(|| {
        f.err(
            i,
            format!("lead time must be a positive hour count, got {v}"),
        )
    })
}

/// Parses a forecast CSV; `file` names the source in error messages.
pub fn parse_forecasts<R: Read>(reader: R, file: &str, spec: &GroupSpec) -> Result<ForecastTable> {
    let mut table = ForecastTable::new();
    records(reader, file, &FORECAST_HEADER, |f| {
        let date = f.date(0)?;
        let lead = lead_time(&f, 1)?;
        let k = spec
            .index_of(f.raw(2))
            .ok_or_else(|| f.err(2, format!("unknown group `{}` (groups: {spec})", f.raw(2))))?;
        let size = spec.groups()[k].size as u64;
        let member = f.uint(3)?;
        if member == 0 || member > size {
            return Err(f.err(3, format!("member index {member} outside 1..={size}")));
        }
        let value = f.level(4)?;
        if table
            .insert((date, lead, k, member as usize - 1), value)
            .is_some()
        {
            return Err(f.err(
                3,
                format!(
                    "duplicate member {member} of `{}` for {date} lead {lead} h",
                    f.raw(2)
                ),
            ));
        }
        Ok(())
    })?;
    Ok(table)
}

/// Parses an observation CSV.
pub fn parse_observations<R: Read>(reader: R, file: &str) -> Result<ObservationTable> {
    let mut table = ObservationTable::new();
    records(reader, file, &OBSERVATION_HEADER, |f| {
        let date = f.date(0)?;
        let lead = lead_time(&f, 1)?;
        let value = f.level(2)?;
        if table.insert((date, lead), value).is_some() {
            return Err(f.err(1, format!("duplicate observation for {date} lead {lead} h")));
        }
        Ok(())
    })?;
    Ok(table)
}

impl Dataset {
    /// Pairs forecasts with observations; incomplete cases go to the
    /// exclusion report.
    pub fn assemble(
        spec: &GroupSpec,
        forecasts: &ForecastTable,
        observations: &ObservationTable,
    ) -> Dataset {
        let mut members: BTreeMap<(NaiveDate, u32), Vec<Vec<Option<f64>>>> = BTreeMap::new();
        for (&(date, lead, k, l), &v) in forecasts {
            let groups = members
                .entry((date, lead))
                .or_insert_with(|| spec.groups().iter().map(|g| vec![None; g.size]).collect());
            groups[k][l] = v;
        }
        let mut keys: Vec<(NaiveDate, u32)> = members.keys().copied().collect();
        keys.extend(observations.keys().copied());
        keys.sort();
        keys.dedup();

        let m = spec.total_members();
        let mut cases = BTreeMap::new();
        let mut exclusions = Vec::new();
        for key in keys {
            let obs = observations.get(&key).copied().flatten();
            let reason = match (members.get(&key), obs) {
                (None, _) => Some("no forecast".to_string()),
                (Some(groups), obs) => {
                    let present = groups.iter().flatten().filter(|v| v.is_some()).count();
                    match (present < m, obs.is_none()) {
                        (true, true) => {
                            Some(format!("{present} of {m} members and no observation"))
                        }
                        (true, false) => Some(format!("{present} of {m} members")),
                        (false, true) => Some("no observation".to_string()),
                        (false, false) => None,
                    }
                }
            };
            match reason {
                Some(reason) => exclusions.push(Exclusion {
                    date: key.0,
                    lead_time_h: key.1,
                    reason,
                }),
                None => {
                    let groups = &members[&key];
                    cases.insert(
                        key,
                        ForecastCase {
                            date: key.0,
                            lead_time_h: key.1,
                            members: groups
                                .iter()
                                .map(|g| g.iter().map(|v| v.unwrap()).collect())
                                .collect(),
                            observation: obs,
                        },
                    );
                }
            }
        }
        Dataset {
            group_spec: spec.clone(),
            cases,
            exclusions,
        }
    }

    /// Issue dates with at least one complete case.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self.cases.keys().map(|k| k.0).collect();
        d.dedup();
        d
    }

    pub fn lead_times(&self) -> Vec<u32> {
        let mut l: Vec<u32> = self.cases.keys().map(|k| k.1).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn case(&self, date: NaiveDate, lead_time_h: u32) -> Option<&ForecastCase> {
        self.cases.get(&(date, lead_time_h))
    }

    /// Smallest and largest observation.
    pub fn observed_range(&self) -> Option<(f64, f64)> {
        observed_range(self.cases.values())
    }

    /// Writes the dataset in the forecast and observation CSV formats.
    pub fn write_csv<W1: Write, W2: Write>(&self, forecasts: W1, observations: W2) -> Result<()> {
        let mut fw = csv::Writer::from_writer(forecasts);
        fw.write_record(FORECAST_HEADER)?;
        let mut ow = csv::Writer::from_writer(observations);
        ow.write_record(OBSERVATION_HEADER)?;
        for case in self.cases.values() {
            let date = case.date.format(DATE_FORMAT).to_string();
            let lead = case.lead_time_h.to_string();
            for (g, values) in self.group_spec.groups().iter().zip(&case.members) {
                for (l, v) in values.iter().enumerate() {
                    fw.write_record([
                        date.as_str(),
                        &lead,
                        &g.name,
                        &(l + 1).to_string(),
                        &v.to_string(),
                    ])?;
                }
            }
            let obs = case.observation.map(|v| v.to_string()).unwrap_or_default();
            ow.write_record([date.as_str(), &lead, &obs])?;
        }
        fw.flush().map_err(|e| Error::io("forecast output", e))?;
        ow.flush().map_err(|e| Error::io("observation output", e))?;
        Ok(())
    }
}

pub(crate) fn observed_range<'a>(
    cases: impl Iterator<Item = &'a ForecastCase>,
) -> Option<(f64, f64)> {
    cases
        .filter_map(|c| c.observation)
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((f64::min(lo, v), f64::max(hi, v))),
        })
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Loads and pairs a forecast file and an observation file.
pub fn load_dataset(
    forecast_file: &Path,
    observation_file: &Path,
    spec: &GroupSpec,
) -> Result<Dataset> {
    let forecasts = parse_forecasts(
        std::io::BufReader::new(open(forecast_file)?),
        &forecast_file.display().to_string(),
        spec,
    )?;
    let observations = parse_observations(
        std::io::BufReader::new(open(observation_file)?),
        &observation_file.display().to_string(),
    )?;
    let ds = Dataset::assemble(spec, &forecasts, &observations);
    if !ds.exclusions.is_empty() {
        log::warn!("{} incomplete cases excluded", ds.exclusions.len());
    }
    Ok(ds)
}
