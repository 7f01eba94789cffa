//! Time-series output: one CSV per AM, one for the world, one for contacts.
//!
//! Every file starts with a `# amgrasp-telemetry v1` comment line followed by
//! a header row. Columns are fixed for a given version.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::world::ContactRecord;

pub const FORMAT_VERSION: &str = "amgrasp-telemetry v1";

/// One logged tick of one AM.
#[derive(Debug, Clone, PartialEq)]
pub struct AmRow {
    pub t: f64,
    pub r_c: [f64; 3],
    pub r_c_err: [f64; 3],
    pub e_r: [f64; 3],
    pub e_w: [f64; 3],
    pub y: Vec<f64>,
    pub y_err: Vec<f64>,
    /// Contact force on the end-effector, world axes.
    pub f_e: [f64; 3],
    /// Contact moment on the end-effector, world axes.
    pub tau_e: [f64; 3],
    pub u1: f64,
    pub u2: [f64; 3],
    pub u3: Vec<f64>,
    pub s_am: f64,
    pub residual: f64,
    pub y_dot: Vec<f64>,
    /// `ẏ − ẏ_d`, the velocity the storage and residual are built on.
    pub y_dot_err: Vec<f64>,
    pub f_y: Vec<f64>,
    /// Whether this tick reused the previous actuator command.
    pub held: bool,
}

/// One logged tick of the world and the aggregate monitors.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldRow {
    pub t: f64,
    pub obj_pos: [f64; 3],
    pub obj_rotvec: [f64; 3],
    pub obj_vel: [f64; 3],
    pub s_obj: f64,
    pub s_tot: f64,
    pub ydot_bar: f64,
    pub contacts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactRow {
    pub t: f64,
    pub record: ContactRecord,
}

/// All series of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Telemetry {
    pub n_joints: usize,
    pub am: Vec<Vec<AmRow>>,
    pub world: Vec<WorldRow>,
    pub contacts: Vec<ContactRow>,
}

fn vec_cols(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

fn xyz(prefix: &str) -> Vec<String> {
    ["x", "y", "z"].iter().map(|a| format!("{prefix}_{a}")).collect()
}

pub fn am_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(xyz("r_c"));
    h.extend(xyz("r_c_err"));
    h.extend(xyz("e_R"));
    h.extend(xyz("e_w"));
    h.extend(vec_cols("y", n));
    h.extend(vec_cols("y_err", n));
    h.extend(xyz("f_e"));
    h.extend(xyz("tau_e"));
    h.push("u1".into());
    h.extend(xyz("u2"));
    h.extend(vec_cols("u3", n));
    h.push("S_AM".into());
    h.push("residual".into());
    h.extend(vec_cols("y_dot", n));
    h.extend(vec_cols("y_dot_err", n));
    h.extend(vec_cols("F_y", n));
    h.push("held".into());
    h
}

pub fn world_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(xyz("obj_pos"));
    h.extend(xyz("obj_rotvec"));
    h.extend(xyz("obj_vel"));
    h.extend(["S_obj", "S_tot", "ydot_bar", "contacts"].map(String::from));
    h
}

pub fn contact_header() -> Vec<String> {
    let mut h = vec!["t".to_string(), "am_id".to_string()];
    h.extend(xyz("point"));
    h.push("depth".into());
    h.extend(xyz("normal"));
    h.push("f_n".into());
    h.extend(xyz("f_t"));
    h.push("sticking".into());
    h
}

impl AmRow {
    pub fn fields(&self) -> Vec<String> {
        let mut v: Vec<f64> = vec![self.t];
        v.extend(self.r_c);
        v.extend(self.r_c_err);
        v.extend(self.e_r);
        v.extend(self.e_w);
        v.extend(&self.y);
        v.extend(&self.y_err);
        v.extend(self.f_e);
        v.extend(self.tau_e);
        v.push(self.u1);
        v.extend(self.u2);
        v.extend(&self.u3);
        v.push(self.s_am);
        v.push(self.residual);
        v.extend(&self.y_dot);
        v.extend(&self.y_dot_err);
        v.extend(&self.f_y);
        let mut s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        s.push(u8::from(self.held).to_string());
        s
    }
}

impl WorldRow {
    pub fn fields(&self) -> Vec<String> {
        let mut v: Vec<f64> = vec![self.t];
        v.extend(self.obj_pos);
        v.extend(self.obj_rotvec);
        v.extend(self.obj_vel);
        v.extend([self.s_obj, self.s_tot, self.ydot_bar]);
        let mut s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        s.push(self.contacts.to_string());
        s
    }
}

impl ContactRow {
    pub fn fields(&self) -> Vec<String> {
        let r = &self.record;
        let mut v = vec![self.t.to_string(), r.am_id.to_string()];
        v.extend(r.point.iter().map(|x| x.to_string()));
        v.push(r.depth.to_string());
        v.extend(r.normal.iter().map(|x| x.to_string()));
        v.push(r.normal_force.to_string());
        v.extend(r.tangential_force.iter().map(|x| x.to_string()));
        v.push(u8::from(r.sticking).to_string());
        v
    }
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "# {FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

impl Telemetry {
    /// Writes `am_<i>.csv`, `world.csv` and `contacts.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, rows) in self.am.iter().enumerate() {
            write_table(&dir.join(format!("am_{i}.csv")), &am_header(self.n_joints), rows.iter().map(AmRow::fields))?;
        }
        write_table(&dir.join("world.csv"), &world_header(), self.world.iter().map(WorldRow::fields))?;
        write_table(&dir.join("contacts.csv"), &contact_header(), self.contacts.iter().map(ContactRow::fields))?;
        Ok(())
    }
}

/// Reads back a telemetry CSV as `(header, rows)`, skipping the version line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_match_row_width() {
        let n = 3;
        let row = AmRow {
            t: 0.0,
            r_c: [0.0; 3],
            r_c_err: [0.0; 3],
            e_r: [0.0; 3],
            e_w: [0.0; 3],
            y: vec![0.0; n],
            y_err: vec![0.0; n],
            f_e: [0.0; 3],
            tau_e: [0.0; 3],
            u1: 0.0,
            u2: [0.0; 3],
            u3: vec![0.0; n],
            s_am: 0.0,
            residual: 0.0,
            y_dot: vec![0.0; n],
            y_dot_err: vec![0.0; n],
            f_y: vec![0.0; n],
            held: false,
        };
        assert_eq!(row.fields().len(), am_header(n).len());
        let w = WorldRow { t: 0.0, obj_pos: [0.0; 3], obj_rotvec: [0.0; 3], obj_vel: [0.0; 3], s_obj: 0.0, s_tot: 0.0, ydot_bar: 0.0, contacts: 0 };
        assert_eq!(w.fields().len(), world_header().len());
    }
}
