//! Panel CSV input and report output.
//!
//! Input files carry the header `unit_id,z,r0,r1,y0,y1` (any column order,
//! extra columns ignored); lines starting with `#` are comments. Floats are
//! written in shortest round-trip form, so a written panel reads back
//! bit-identical.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::panel::{Group, PanelDataset, Unit};
use crate::simulation::SimDataset;

pub const PANEL_COLUMNS: [&str; 6] = ["unit_id", "z", "r0", "r1", "y0", "y1"];
pub const LATENT_COLUMN: &str = "y1_untreated_latent";

pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<PanelDataset> {
    read_panel(std::fs::File::open(path)?)
}

pub fn read_panel<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(PANEL_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()))?;
    }

    let mut units = Vec::new();
    let mut ids = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(row as u64 + 1);
        let bad = |message: String| Error::InvalidRow { row, line, message };
        let field = |k: usize| record.get(idx[k]).ok_or_else(|| bad(format!("missing `{}`", PANEL_COLUMNS[k])));

        let z_text = field(1)?;
        let z = z_text
            .parse::<i64>()
            .ok()
            .and_then(Group::from_flag)
            .ok_or_else(|| bad(format!("z must be 0 or 1, got `{z_text}`")))?;
        let mut values = [0.0; 4];
        for (k, v) in values.iter_mut().enumerate() {
            let text = field(k + 2)?;
            *v = text
                .parse::<f64>()
                .map_err(|_| bad(format!("`{}` is not a number: `{text}`", PANEL_COLUMNS[k + 2])))?;
            if !v.is_finite() {
                return Err(bad(format!("`{}` is not finite: `{text}`", PANEL_COLUMNS[k + 2])));
            }
        }
        let [r0, r1, y0, y1] = values;
        units.push(Unit { label: ids.len() as u32, z, r0, r1, y0, y1 });
        ids.push(field(0)?.to_string());
    }
    if units.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    PanelDataset::new(units, ids)
}

pub fn write_panel<W: Write>(data: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PANEL_COLUMNS)?;
    for u in data.units() {
        w.write_record(panel_fields(data, u))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv(data: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    write_panel(data, std::fs::File::create(path)?)
}

/// The observable panel plus the latent untreated outcome column, empty
/// for control units.
pub fn write_sim<W: Write>(sim: &SimDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = PANEL_COLUMNS.to_vec();
    header.push(LATENT_COLUMN);
    w.write_record(header)?;
    let data = sim.observable();
    for (u, latent) in data.units().iter().zip(&sim.y1_untreated) {
        let mut fields = panel_fields(data, u).to_vec();
        fields.push(latent.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sim_csv(sim: &SimDataset, path: impl AsRef<Path>) -> Result<()> {
    write_sim(sim, std::fs::File::create(path)?)
}

fn panel_fields(data: &PanelDataset, u: &Unit) -> [String; 6] {
    [
        data.id(u).to_string(),
        u.z.flag().to_string(),
        u.r0.to_string(),
        u.r1.to_string(),
        u.y0.to_string(),
        u.y1.to_string(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRecord {
    pub lo: f64,
    pub hi: f64,
    pub method: String,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
}

/// Estimates at one counterfactual cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub cf_cutoff: f64,
    pub att: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub att_bias_reduced: Option<f64>,
    pub mass_above: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub extrapolated_below_cutoff: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<CiRecord>,
    pub t_curve: Vec<CurvePoint>,
    pub f_cf: Vec<CurvePoint>,
}

/// Output of `estimate` and `bootstrap` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: Value,
    pub results: Vec<ResultRecord>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Long-format table `cf_cutoff,series,r,value` after `# key=value`
    /// configuration lines; `r` is empty for scalar series.
    pub fn to_csv(&self) -> String {
        let mut out = config_comments(&self.config);
        for w in &self.warnings {
            out.push_str(&format!("# warning={}\n", w.replace('\n', " ")));
        }
        out.push_str("cf_cutoff,series,r,value\n");
        for rec in &self.results {
            let c = rec.cf_cutoff;
            let mut scalar = |name: &str, v: String| out.push_str(&format!("{c},{name},,{v}\n"));
            scalar("att", rec.att.to_string());
            if let Some(v) = rec.att_bias_reduced {
                scalar("att_bias_reduced", v.to_string());
            }
            scalar("mass_above", rec.mass_above.to_string());
            if let Some(v) = rec.extrapolated_below_cutoff {
                scalar("extrapolated_below_cutoff", v.to_string());
            }
            if let Some(ci) = &rec.ci {
                scalar("ci_lo", ci.lo.to_string());
                scalar("ci_hi", ci.hi.to_string());
                scalar("ci_method", ci.method.clone());
                scalar("ci_alpha", ci.alpha.to_string());
                scalar("ci_B", ci.replicates.to_string());
            }
            for (name, curve) in [("t_curve", &rec.t_curve), ("f_cf", &rec.f_cf)] {
                for p in curve {
                    out.push_str(&format!("{c},{name},{},{}\n", p.r, p.value));
                }
            }
        }
        out
    }
}

/// Flattens a JSON object into `# a.b=value` lines.
pub fn config_comments(config: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::String(s) => out.push_str(&format!("# {prefix}={s}\n")),
            other => out.push_str(&format!("# {prefix}={other}\n")),
        }
    }
    let mut out = String::new();
    walk("", config, &mut out);
    out
}
