//! `ewif` and `bound` commands.

use std::io::Write;

use speccascade_core::ewif::{
    borderline_curve, ewif_hc, ewif_sd, ewif_vc, optimal_hc, optimal_sd, optimal_vc, BorderlineConfig, BorderlinePoint,
    CascadeMode, HcModels, HcParams, SpecParams, VcModels, VcParams,
};

use crate::CliError;

/// One evaluated formula: hyperparameters plus the value.
#[derive(Debug, Clone, PartialEq)]
pub struct EwifReport {
    pub formula: &'static str,
    pub fields: Vec<(&'static str, String)>,
    pub ewif: f64,
}

impl EwifReport {
    /// `key=value` pairs followed by the value, on one line.
    pub fn line(&self) -> String {
        let mut parts: Vec<String> = self.fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        parts.push(format!("ewif={:.6}", self.ewif));
        parts.join(" ")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = vec!["formula"];
        header.extend(self.fields.iter().map(|(k, _)| *k));
        header.push("ewif");
        out.write_record(&header)?;
        let mut row = vec![self.formula.to_string()];
        row.extend(self.fields.iter().map(|(_, v)| v.clone()));
        row.push(format!("{}", self.ewif));
        out.write_record(&row)?;
        out.flush()?;
        Ok(())
    }
}

pub fn sd(alpha: f64, cost: f64, k: Option<u32>, optimize: Option<u32>) -> Result<EwifReport, CliError> {
    let (k, ewif) = match optimize {
        Some(k_max) => {
            let o = optimal_sd(alpha, cost, k_max)?;
            (o.k, o.ewif)
        }
        None => {
            let k = k.ok_or_else(|| CliError::usage("--k is required without --optimize"))?;
            (k, ewif_sd(&SpecParams::new(alpha, cost, k))?)
        }
    };
    Ok(EwifReport { formula: "sd", fields: vec![("k", k.to_string())], ewif })
}

pub fn vc(models: VcModels, schedule: Option<(u32, u32)>, optimize: Option<(u32, u32)>) -> Result<EwifReport, CliError> {
    let (n, k, ewif) = match optimize {
        Some((n_max, k_max)) => {
            let o = optimal_vc(&models, n_max, k_max)?;
            (o.n, o.k, o.ewif)
        }
        None => {
            let (n, k) = schedule.ok_or_else(|| CliError::usage("--n and --k are required without --optimize"))?;
            let p: VcParams = models.with_schedule(n, k);
            (n, k, ewif_vc(&p)?)
        }
    };
    Ok(EwifReport { formula: "vc", fields: vec![("n", n.to_string()), ("k", k.to_string())], ewif })
}

pub fn hc(models: HcModels, schedule: Option<(u32, u32)>, optimize: Option<u32>) -> Result<EwifReport, CliError> {
    let (k1, k2, ewif) = match optimize {
        Some(k_max) => {
            let o = optimal_hc(&models, k_max)?;
            (o.k_d1, o.k_d2, o.ewif)
        }
        None => {
            let (k1, k2) = schedule.ok_or_else(|| CliError::usage("--k1 and --k2 are required without --optimize"))?;
            let p: HcParams = models.with_schedule(k1, k2);
            (k1, k2, ewif_hc(&p)?)
        }
    };
    Ok(EwifReport { formula: "hc", fields: vec![("k1", k1.to_string()), ("k2", k2.to_string())], ewif })
}

/// `points` evenly spaced values from `lo` to `hi` inclusive; a single point
/// is `lo`.
pub fn alpha_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if points == 0 {
        return Err(CliError::usage("--points must be at least 1"));
    }
    for (name, v) in [("--alpha-min", lo), ("--alpha-max", hi)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::usage(format!("{name} = {v} is outside (0, 1)")));
        }
    }
    if hi < lo {
        return Err(CliError::usage("--alpha-max is below --alpha-min"));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (points - 1) as f64;
    // Rounded so grid values print as written (0.15, not 0.15000000000000002).
    let round = |x: f64| (x * 1e12).round() / 1e12;
    Ok((0..points).map(|i| if i + 1 == points { hi } else { round(lo + step * i as f64) }).collect())
}

pub fn bound(mode: CascadeMode, grid: &[f64], cfg: BorderlineConfig) -> Result<Vec<BorderlinePoint>, CliError> {
    Ok(borderline_curve(grid, &BorderlineConfig { mode, ..cfg })?)
}

/// Columns `alpha_d1,c_d1_critical`. A point where the cascade loses even
/// at zero cost is written as 0.
pub fn write_bound_csv<W: Write>(points: &[BorderlinePoint], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha_d1", "c_d1_critical"])?;
    for p in points {
        out.write_record([p.alpha_d1.to_string(), p.c_d1_critical.unwrap_or(0.0).to_string()])?;
    }
    out.flush()?;
    Ok(())
}
