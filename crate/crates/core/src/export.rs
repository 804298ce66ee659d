//! CSV plot data from a run report.
//!
//! | kind         | columns                                                            | rows                 |
//! |--------------|--------------------------------------------------------------------|----------------------|
//! | `smatrix`    | `lambda`, `re_s_pq`, `im_s_pq` (1-based, row-major), `unitarity_defect` | one per energy node |
//! | `ksvd`       | `index`, `sigma`                                                   | descending `σ(K)`    |
//! | `refinement` | `n`, then one column per metric in name order                      | one per grid size    |

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::run::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Smatrix,
    Ksvd,
    Refinement,
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn emit_plot_data(report: &RunReport, kind: PlotKind, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    match kind {
        PlotKind::Smatrix => {
            let s = report
                .data
                .smatrix
                .as_ref()
                .ok_or_else(|| Error::MissingData("no s(λ) samples: the smatrix suite was not run".into()))?;
            let mut header = vec!["lambda".to_string()];
            for p in 1..=s.d {
                for q in 1..=s.d {
                    header.push(format!("re_s_{p}{q}"));
                    header.push(format!("im_s_{p}{q}"));
                }
            }
            header.push("unitarity_defect".into());
            out.write_record(&header)?;
            for i in 0..s.lambda.len() {
                let mut row = vec![num(s.lambda[i])];
                for (re, im) in s.re[i].iter().zip(&s.im[i]) {
                    row.push(num(*re));
                    row.push(num(*im));
                }
                row.push(num(s.unitarity_defect[i]));
                out.write_record(&row)?;
            }
        }
        PlotKind::Ksvd => {
            let k =
                report.data.ksvd.as_ref().ok_or_else(|| {
                    Error::MissingData("no singular values of K: the waveop suite was not run".into())
                })?;
            out.write_record(["index", "sigma"])?;
            for (i, s) in k.values.iter().enumerate() {
                out.write_record([(i + 1).to_string(), num(*s)])?;
            }
        }
        PlotKind::Refinement => {
            if report.refinement.is_empty() {
                return Err(Error::MissingData(
                    "no refinement tables: the refinement suite was not run and no other suite produced per-size metrics"
                        .into(),
                ));
            }
            let sizes: BTreeSet<usize> = report.refinement.values().flatten().map(|r| r.n).collect();
            let mut header = vec!["n".to_string()];
            header.extend(report.refinement.keys().cloned());
            out.write_record(&header)?;
            for n in sizes {
                let mut row = vec![n.to_string()];
                for rows in report.refinement.values() {
                    row.push(rows.iter().find(|r| r.n == n).map(|r| num(r.value)).unwrap_or_default());
                }
                out.write_record(&row)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_plot_file(report: &RunReport, kind: PlotKind, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    emit_plot_data(report, kind, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use crate::run::{execute, PlotData};

    fn rows(report: &RunReport, kind: PlotKind) -> Vec<Vec<String>> {
        let mut buf = Vec::new();
        emit_plot_data(report, kind, &mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let mut all = vec![r.headers().unwrap().iter().map(String::from).collect()];
        all.extend(r.records().map(|x| x.unwrap().iter().map(String::from).collect()));
        all
    }

    fn report() -> RunReport {
        let cfg = parse_config_str(
            "[interval]\na = 0.0\nb = 1.0\n[grid]\nsizes = [41, 61]\n[kernel]\nfamily = \"sin-bump\"\n[checks]\nsuites = [\"smatrix\"]\n",
        )
        .unwrap();
        execute(&cfg).unwrap()
    }

    #[test]
    fn smatrix_has_one_row_per_node() {
        let rep = report();
        let t = rows(&rep, PlotKind::Smatrix);
        assert_eq!(t[0], vec!["lambda", "re_s_11", "im_s_11", "unitarity_defect"]);
        assert_eq!(t.len() - 1, 61);
        let lam: Vec<f64> = t[1..].iter().map(|r| r[0].parse().unwrap()).collect();
        assert!(lam.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn refinement_has_monotone_sizes() {
        let rep = report();
        let t = rows(&rep, PlotKind::Refinement);
        assert_eq!(t[0][0], "n");
        let ns: Vec<usize> = t[1..].iter().map(|r| r[0].parse().unwrap()).collect();
        assert_eq!(ns, vec![41, 61]);
    }

    #[test]
    fn missing_data_names_the_suite() {
        let mut rep = report();
        match emit_plot_data(&rep, PlotKind::Ksvd, Vec::new()) {
            Err(Error::MissingData(m)) => assert!(m.contains("waveop")),
            other => panic!("{other:?}"),
        }
        rep.data = PlotData::default();
        rep.refinement.clear();
        for (kind, suite) in [(PlotKind::Smatrix, "smatrix"), (PlotKind::Refinement, "refinement")] {
            match emit_plot_data(&rep, kind, Vec::new()) {
                Err(Error::MissingData(m)) => assert!(m.contains(suite)),
                other => panic!("{other:?}"),
            }
        }
    }
}
