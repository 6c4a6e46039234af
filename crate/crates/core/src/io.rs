//! CSV and JSON file formats.
//!
//! | file | header |
//! |------|--------|
//! | IMU stream | `t,gx,gy,gz,ax,ay,az` |
//! | AP registry | `id,x,y,kind` |
//! | snapshot log | `t,ap_id,source` |
//! | step log | `t,beta,heading` |
//! | filter trace | `k,t,x,y,phi_ref,alpha,p11,p22,ranged` |
//! | calibration trace | `iter,cost,<parameter names>` |
//! | error CDF | `error,fraction` |
//!
//! Snapshot-log rows sharing a timestamp form one epoch. Floats are written
//! in shortest round-trip form, so output bytes depend only on the values.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::calibration::TraceRow;
use crate::orientation::ImuSample;
use crate::pdr::StepEvent;
use crate::pipeline::TraceRecord;
use crate::ranging::{AccessPoint, ApId, ApKind, Observation, RangingSnapshot};
use crate::{Error, Point, Result};

#[derive(Serialize, Deserialize)]
struct ImuRow {
    t: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

#[derive(Serialize, Deserialize)]
struct ApRow {
    id: String,
    x: f64,
    y: f64,
    kind: ApKind,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRow {
    t: f64,
    ap_id: String,
    source: f64,
}

fn parse_error(name: &str, e: csv::Error) -> Error {
    let location = e
        .position()
        .map_or_else(|| "unknown position".to_owned(), |p| format!("line {}", p.line()));
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(i) => format!("column {}: {}", i + 1, err.kind()),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    };
    Error::Parse {
        source_name: name.to_owned(),
        location,
        message,
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(reader: impl Read, name: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(|e| parse_error(name, e))).collect()
}

fn write_rows<T: Serialize>(writer: impl Write, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    Ok(File::open(path)?)
}

fn name_of(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_imu(reader: impl Read, name: &str) -> Result<Vec<ImuSample>> {
    let rows: Vec<ImuRow> = read_rows(reader, name)?;
    Ok(rows
        .into_iter()
        .map(|r| ImuSample {
            t: r.t,
            gyro: Vector3::new(r.gx, r.gy, r.gz),
            accel: Vector3::new(r.ax, r.ay, r.az),
        })
        .collect())
}

pub fn write_imu(writer: impl Write, samples: &[ImuSample]) -> Result<()> {
    write_rows(
        writer,
        samples.iter().map(|s| ImuRow {
            t: s.t,
            gx: s.gyro.x,
            gy: s.gyro.y,
            gz: s.gyro.z,
            ax: s.accel.x,
            ay: s.accel.y,
            az: s.accel.z,
        }),
    )
}

pub fn read_imu_file(path: &Path) -> Result<Vec<ImuSample>> {
    read_imu(open(path)?, &name_of(path))
}

pub fn read_aps(reader: impl Read, name: &str) -> Result<Vec<AccessPoint>> {
    let rows: Vec<ApRow> = read_rows(reader, name)?;
    Ok(rows
        .into_iter()
        .map(|r| AccessPoint {
            id: ApId(r.id),
            position: Point::new(r.x, r.y),
            kind: r.kind,
        })
        .collect())
}

pub fn write_aps(writer: impl Write, aps: &[AccessPoint]) -> Result<()> {
    write_rows(
        writer,
        aps.iter().map(|a| ApRow {
            id: a.id.0.clone(),
            x: a.position.x,
            y: a.position.y,
            kind: a.kind,
        }),
    )
}

pub fn read_aps_file(path: &Path) -> Result<Vec<AccessPoint>> {
    read_aps(open(path)?, &name_of(path))
}

pub fn read_snapshots(reader: impl Read, name: &str) -> Result<Vec<RangingSnapshot>> {
    let rows: Vec<SnapshotRow> = read_rows(reader, name)?;
    let mut out: Vec<RangingSnapshot> = Vec::new();
    for r in rows {
        let obs = Observation {
            ap_id: ApId(r.ap_id),
            source: r.source,
        };
        match out.last_mut() {
            Some(s) if s.t == r.t => s.observations.push(obs),
            _ => out.push(RangingSnapshot {
                t: r.t,
                observations: vec![obs],
            }),
        }
    }
    Ok(out)
}

pub fn write_snapshots(writer: impl Write, snapshots: &[RangingSnapshot]) -> Result<()> {
    write_rows(
        writer,
        snapshots.iter().flat_map(|s| {
            s.observations.iter().map(|o| SnapshotRow {
                t: s.t,
                ap_id: o.ap_id.0.clone(),
                source: o.source,
            })
        }),
    )
}

pub fn read_snapshots_file(path: &Path) -> Result<Vec<RangingSnapshot>> {
    read_snapshots(open(path)?, &name_of(path))
}

pub fn read_steps(reader: impl Read, name: &str) -> Result<Vec<StepEvent>> {
    read_rows(reader, name)
}

pub fn write_steps(writer: impl Write, steps: &[StepEvent]) -> Result<()> {
    write_rows(writer, steps)
}

pub fn write_trace(writer: impl Write, trace: &[TraceRecord]) -> Result<()> {
    write_rows(writer, trace)
}

pub fn read_trace(reader: impl Read, name: &str) -> Result<Vec<TraceRecord>> {
    read_rows(reader, name)
}

/// `iter,cost,<names...>`; `names` must match the parameter vector length.
pub fn write_calibration_trace(writer: impl Write, names: &[String], rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iter".to_owned(), "cost".to_owned()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        if r.params.len() != names.len() {
            return Err(Error::InvalidInput(format!(
                "trace row has {} parameters, header has {}",
                r.params.len(),
                names.len()
            )));
        }
        let mut rec = vec![r.iter.to_string(), r.cost.to_string()];
        rec.extend(r.params.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdf(writer: impl Write, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["error", "fraction"])?;
    for (e, f) in rows {
        w.write_record([e.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(mut writer: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
