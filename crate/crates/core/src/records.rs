//! Homodyne measurement records and their CSV form.
//!
//! One CSV row per (trial, mode): setting_id, trial_index, mode, angle_radians, outcome.
//! Modes are 1-based in the file.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};

/// All trials recorded under one homodyne setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingRecords {
    pub setting_id: usize,
    pub angles: Vec<f64>,
    /// trials x modes
    pub outcomes: DMatrix<f64>,
}

impl SettingRecords {
    pub fn trials(&self) -> usize {
        self.outcomes.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub setting_id: usize,
    pub trial_index: usize,
    pub mode: usize,
    pub angle_radians: f64,
    pub outcome: f64,
}

pub fn write_csv<W: Write>(records: &[SettingRecords], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for rec in records {
        for t in 0..rec.trials() {
            for (j, angle) in rec.angles.iter().enumerate() {
                w.serialize(RecordRow {
                    setting_id: rec.setting_id,
                    trial_index: t,
                    mode: j + 1,
                    angle_radians: *angle,
                    outcome: rec.outcomes[(t, j)],
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back into per-setting blocks. Every trial must list every mode.
pub fn read_csv<R: Read>(input: R, m: usize) -> Result<Vec<SettingRecords>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut by_setting: std::collections::BTreeMap<usize, Vec<RecordRow>> = Default::default();
    for row in rdr.deserialize() {
        let row: RecordRow = row?;
        if row.mode == 0 || row.mode > m {
            return Err(CertError::IndexOutOfRange { index: row.mode, max: m });
        }
        by_setting.entry(row.setting_id).or_default().push(row);
    }
    let mut out = Vec::new();
    for (setting_id, rows) in by_setting {
        let trials = rows.iter().map(|r| r.trial_index).max().map_or(0, |t| t + 1);
        let mut outcomes = DMatrix::from_element(trials, m, f64::NAN);
        let mut angles = vec![f64::NAN; m];
        for r in &rows {
            outcomes[(r.trial_index, r.mode - 1)] = r.outcome;
            angles[r.mode - 1] = r.angle_radians;
        }
        if outcomes.iter().any(|v| v.is_nan()) || angles.iter().any(|v| v.is_nan()) {
            return Err(CertError::Sampling(format!("setting {setting_id} has incomplete trials")));
        }
        out.push(SettingRecords { setting_id, angles, outcomes });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            SettingRecords { setting_id: 0, angles: vec![0.0, 1.5], outcomes: DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.4]) },
            SettingRecords { setting_id: 3, angles: vec![0.7, 0.7], outcomes: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]) },
        ];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("setting_id,trial_index,mode,angle_radians,outcome\n0,0,1,0.0,0.1\n"));
        assert_eq!(read_csv(&buf[..], 2).unwrap(), recs);
        assert!(read_csv(&b"setting_id,trial_index,mode,angle_radians,outcome\n0,0,1,0.0,0.1\n"[..], 2).is_err());
    }
}
