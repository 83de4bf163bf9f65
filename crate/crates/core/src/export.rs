//! Plot-ready CSV tables. Floats are written as `{:.16e}` (17 significant
//! digits), which parses back to the same `f64`.

use std::fmt::Write as _;

use crate::analysis::{FlowDecomposition, SweepGrid};
use crate::error::{Error, Result};
use crate::market::Rollout;
use crate::mfe::IterationDiagnostics;
use crate::path::MeanFieldPath;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(cols: &mut Vec<String>, prefix: &str, n: usize) {
    cols.extend((1..=n).map(|i| format!("{prefix}{i}")));
}

/// Header of the trace table for `S` venues and `C` channels.
pub fn trace_header(n_venues: usize, n_channels: usize) -> String {
    let mut cols = vec!["t".to_string(), "m".into(), "sigma".into()];
    header(&mut cols, "L_", n_channels);
    header(&mut cols, "phi_", n_venues);
    header(&mut cols, "psi_", n_channels);
    header(&mut cols, "a_R_", n_venues);
    header(&mut cols, "a_A_", n_venues);
    header(&mut cols, "r_", n_channels);
    cols.join(",")
}

/// One row per state `t = 0..=T`. Flow and control cells of the terminal row
/// are empty because flows live on `t = 0..T-1`.
pub fn trace_csv(mf: &MeanFieldPath, run: &Rollout) -> String {
    let (s, c) = (mf.n_venues(), mf.n_channels());
    let mut out = trace_header(s, c);
    out.push('\n');
    for t in 0..=mf.horizon() {
        let mut row = vec![t.to_string(), num(mf.m[t]), num(mf.sigma[t])];
        row.extend(mf.backlog[t].iter().map(|x| num(*x)));
        match (mf.sec_flow.get(t), run.flows.get(t)) {
            (Some(phi), Some(f)) => {
                row.extend(phi.iter().map(|x| num(*x)));
                row.extend(mf.prim_flow[t].iter().map(|x| num(*x)));
                row.extend(f.a_retail.iter().map(|x| num(*x)));
                row.extend(f.a_arb.iter().map(|x| num(*x)));
                row.extend(f.r.iter().map(|x| num(*x)));
            }
            _ => row.extend(std::iter::repeat_n(String::new(), 3 * s + 2 * c)),
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads the state and flow columns of a trace table back into a path.
pub fn read_trace(text: &str) -> Result<MeanFieldPath> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Data("empty trace".into()))?
        .split(',')
        .collect();
    let count = |prefix: &str| head.iter().filter(|h| h.starts_with(prefix)).count();
    let (s, c) = (count("phi_"), count("L_"));
    if head.len() < 3 || head[0] != "t" || head[1] != "m" || head[2] != "sigma" {
        return Err(Error::Data("trace header must start with t,m,sigma".into()));
    }
    let col = |name: &str| head.iter().position(|h| *h == name);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    if rows.len() < 2 {
        return Err(Error::Data("trace needs at least two rows".into()));
    }
    let horizon = rows.len() - 1;
    let mut mf = MeanFieldPath::zeros(horizon, s, c);
    let parse = |row: &[&str], i: usize, line: usize| -> Result<f64> {
        row.get(i)
            .and_then(|x| x.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                line,
                reason: format!("column {} is not a number", head.get(i).copied().unwrap_or("?")),
            })
    };
    for (t, row) in rows.iter().enumerate() {
        let line = t + 2;
        mf.m[t] = parse(row, 1, line)?;
        mf.sigma[t] = parse(row, 2, line)?;
        for k in 0..c {
            mf.backlog[t][k] = parse(row, col(&format!("L_{}", k + 1)).unwrap(), line)?;
        }
        if t < horizon {
            for k in 0..s {
                mf.sec_flow[t][k] = parse(row, col(&format!("phi_{}", k + 1)).unwrap(), line)?;
            }
            for k in 0..c {
                let i = col(&format!("psi_{}", k + 1))
                    .ok_or_else(|| Error::Data(format!("trace lacks psi_{}", k + 1)))?;
                mf.prim_flow[t][k] = parse(row, i, line)?;
            }
        }
    }
    mf.check()?;
    Ok(mf)
}

pub fn diagnostics_csv(diags: &[IterationDiagnostics]) -> String {
    let mut out = String::from("k,exploit_retail,exploit_arb,max_exploit,mf_distance\n");
    for d in diags {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            d.k,
            num(d.exploit_retail),
            num(d.exploit_arb),
            num(d.max_exploit),
            num(d.mf_distance)
        );
    }
    out
}

pub fn sweep_csv(grid: &SweepGrid) -> String {
    let mut out = String::from("axis1_value,axis2_value,half_life,converged\n");
    for c in &grid.cells {
        let hl = c.half_life.map_or_else(|| "NA".to_string(), num);
        let _ = writeln!(out, "{},{},{},{}", num(c.axis1_value), num(c.axis2_value), hl, c.converged);
    }
    out
}

pub fn decomposition_csv(d: &FlowDecomposition) -> String {
    let (cp, cs) = d.cumulative();
    let mut out = String::from("t,primary_flow,secondary_flow,cumulative_primary,cumulative_secondary\n");
    for t in 0..d.primary.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t,
            num(d.primary[t]),
            num(d.secondary[t]),
            num(cp[t]),
            num(cs[t])
        );
    }
    out
}

/// `t,model,observed` over the overlap of both series.
pub fn fit_csv(model: &[f64], observed: &[f64]) -> String {
    let mut out = String::from("t,model,observed\n");
    for (t, (m, o)) in model.iter().zip(observed).enumerate() {
        let _ = writeln!(out, "{},{},{}", t, num(*m), num(*o));
    }
    out
}
