use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::cap_psnr;

pub const TRACE_HEADER: &str = "iteration,e_k,fidelity,train_loss,psnr,ssim,nrmse,t_train_s,t_reg_s,t_pcg_s";

/// One completed outer iteration. For the baselines `train_loss` holds the
/// method's own regularizer value (TV seminorm, or mean dictionary
/// approximation error) and `t_reg_s` the patch-approximation or shrinkage
/// phase.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub e_k: f64,
    pub fidelity: f64,
    pub train_loss: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub nrmse: Option<f64>,
    pub t_train_s: f64,
    pub t_reg_s: f64,
    pub t_pcg_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.10e}"))
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.10e},{:.10e},{:.10e},{},{},{},{:.6},{:.6},{:.6}",
                r.iteration,
                r.e_k,
                r.fidelity,
                r.train_loss,
                opt(r.psnr.map(cap_psnr)),
                opt(r.ssim),
                opt(r.nrmse),
                r.t_train_s,
                r.t_reg_s,
                r.t_pcg_s
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Total seconds per phase `(train, reg, pcg)`.
    pub fn phase_totals(&self) -> (f64, f64, f64) {
        self.records.iter().fold((0.0, 0.0, 0.0), |(a, b, c), r| (a + r.t_train_s, b + r.t_reg_s, c + r.t_pcg_s))
    }
}
