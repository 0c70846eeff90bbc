//! CSV and JSON writers. JSON objects are emitted with sorted keys and
//! floats in shortest round-trip form, so equal inputs give equal bytes.

use std::fs;
use std::path::Path;

use bdsde_core::analysis::ConvergenceReport;
use bdsde_core::lattice::{AdaptedField, ScenarioLattice};
use serde::Serialize;

use crate::LabError;

/// Marker written in the order column when the errors sit at the
/// saturation floor.
pub const SATURATED: &str = "saturated";

fn io_err(path: &Path, e: impl std::fmt::Display) -> LabError {
    LabError::Io(format!("{}: {e}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, LabError> {
    // `Value` keeps object keys in a BTreeMap, which sorts them.
    let v = serde_json::to_value(value).map_err(|e| LabError::Io(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| LabError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LabError> {
    fs::write(path, to_json(value)?).map_err(|e| io_err(path, e))
}

/// Writes `header` and `rows` with RFC 4180 quoting.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), LabError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// One row per `(level, node, component)`: `level,w_index,b_index,component,value`.
pub fn write_fields(path: &Path, lattice: &ScenarioLattice, fields: &[AdaptedField]) -> Result<(), LabError> {
    let rows = fields.iter().flat_map(|f| {
        (0..f.len()).flat_map(move |node| {
            let view = lattice.view(f.level(), node);
            f.node(node).iter().enumerate().map(move |(c, x)| {
                vec![
                    f.level().to_string(),
                    view.w_index().to_string(),
                    view.b_index().to_string(),
                    c.to_string(),
                    x.to_string(),
                ]
            })
        })
    });
    write_csv(path, &["level", "w_index", "b_index", "component", "value"], rows)
}

/// `N,dt,error,order_increment`. The first row has an empty order; a
/// saturated study marks every later row with [`SATURATED`].
pub fn convergence_rows(report: &ConvergenceReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let order = match r.order_increment {
                Some(o) => o.to_string(),
                None if k > 0 && report.fit.saturated => SATURATED.to_string(),
                None => String::new(),
            };
            vec![r.n.to_string(), r.dt.to_string(), r.error.to_string(), order]
        })
        .collect()
}

pub fn write_convergence(path: &Path, report: &ConvergenceReport) -> Result<(), LabError> {
    write_csv(path, &["N", "dt", "error", "order_increment"], convergence_rows(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use bdsde_core::analysis::convergence_table;

    #[test]
    fn json_keys_are_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        let s = to_json(&S { zeta: 1, alpha: 2 }).unwrap();
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
    }

    #[test]
    fn saturated_studies_mark_the_order_column() {
        let rep = convergence_table(&[(4, 0.25, 0.0), (8, 0.125, 0.0), (16, 0.0625, 0.0)]).unwrap();
        let rows = convergence_rows(&rep);
        assert_eq!(rows[0][3], "");
        assert!(rows[1..].iter().all(|r| r[3] == SATURATED));
        let rep = convergence_table(&[(4, 0.25, 0.4), (8, 0.125, 0.2), (16, 0.0625, 0.1)]).unwrap();
        assert_eq!(convergence_rows(&rep)[2][3], "1");
    }

    #[test]
    fn field_dump_has_one_row_per_entry() {
        let lat = ScenarioLattice::build(1.0, 2, 1, 1).unwrap();
        let f = AdaptedField::from_fn(&lat, 1, 2, |v, out| {
            out[0] = v.w(0);
            out[1] = 1.0;
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_fields(&path, &lat, &[f.clone()]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + f.len() * 2);
        assert!(text.starts_with("level,w_index,b_index,component,value\n"));
    }
}
