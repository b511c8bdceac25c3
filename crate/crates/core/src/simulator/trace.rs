//! Run outputs: per-round records, whole-run summaries, and the CSV and
//! JSON-lines writers.
//!
//! CSV rows hold the scalar metrics under the fixed header; the JSON-lines
//! form additionally carries the mean iterate `xbar`. Numbers are written
//! with Rust's shortest round-trip formatting, so traces from identical
//! configurations are byte-identical.

use std::io::{self, Write};

use serde::Serialize;

pub const CSV_HEADER: &str =
    "t,mean_loss,grad_norm_sq,scaled_grad_metric,consensus_err,u_spread,vt_cumulative";

/// Metrics of round `t`, evaluated with exact gradients: the loss and
/// gradient metrics describe the mean iterate entering the round, while
/// `u_spread` and the rate average inside `scaled_grad_metric` use the rate
/// the round actually applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: u64,
    /// `f(X̄_t)`.
    pub mean_loss: f64,
    /// `‖∇f(X̄_t)‖²`.
    pub grad_norm_sq: f64,
    /// `‖∇f(X̄_t) / Ū_t^{1/4}‖²`, the rate-weighted stationarity measure.
    pub scaled_grad_metric: f64,
    /// `(1/N) Σ_i ‖x_{t,i} − X̄_t‖²`.
    pub consensus_err: f64,
    /// `(1/N) Σ_i ‖u_{t,i} − Ū_t‖₁`.
    pub u_spread: f64,
    /// `Σ_{s≤t} Σ_i ‖v̂_{s−1,i} − v̂_{s−2,i}‖₁`, the cumulative rate drift.
    pub vt_cumulative: f64,
    /// `X̄_t`, carried by the JSON-lines output only.
    pub xbar: Vec<f64>,
}

/// Scalars describing a whole run, for sweeps and reports.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub rounds: u64,
    /// Contraction factor of the mixing matrix actually used.
    pub lambda: f64,
    /// `X̄_{T+1}`, the mean iterate after the last update.
    pub final_xbar: Vec<f64>,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    /// `(1/T) Σ_t` of the scaled gradient metric.
    pub avg_scaled_grad: f64,
    /// The same average restricted to rounds `t > T/2`.
    pub last_half_avg_scaled_grad: f64,
    pub avg_grad_norm_sq: f64,
    pub max_consensus_err: f64,
    /// Largest `‖g_{t,i}‖_∞` over the whole trajectory, noise included:
    /// the realized gradient bound the theory's G∞ stands for.
    pub max_grad_inf: f64,
    /// Final cumulative rate drift (the V_T of the stationarity bounds).
    pub vt_total: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub summary: RunSummary,
}

impl Trace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            // {:?} on f64 is the shortest representation that parses back
            // to the same bits, switching to scientific notation only when
            // that is shorter. {} would render 1e-30 as a 32-digit decimal.
            writeln!(
                w,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.t,
                r.mean_loss,
                r.grad_norm_sq,
                r.scaled_grad_metric,
                r.consensus_err,
                r.u_spread,
                r.vt_cumulative
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// One JSON object per record, `xbar` included.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}
