//! JSON report shapes written by the subcommands.

use reluqc::certifier::{
    BisectionOptions, BisectionStep, Certificate, CertificateCheck, CertificateReport,
    MarginOutcome,
};
use reluqc::lifting::{LiftedReport, LiftedSystem};
use reluqc::qc::QcKind;
use reluqc::sim::FalsificationReport;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct GainReport {
    pub command: &'static str,
    pub system: String,
    pub certified: bool,
    pub gamma: Option<f64>,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub qc_class: &'static str,
    pub margin: Option<f64>,
    pub status: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CertificateCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifted: Option<LiftedReport>,
}

impl GainReport {
    pub fn certified(system: String, cert: &Certificate, check: CertificateCheck) -> Self {
        Self {
            command: "certify-gain",
            system,
            certified: true,
            gamma: cert.gamma,
            horizon: cert.horizon,
            qc_class: cert.qc_kind().short_name(),
            margin: Some(cert.margin),
            status: cert.solver_status.clone(),
            seconds: cert.wallclock_seconds,
            check: Some(check),
            certificate: Some(cert.to_report()),
            lifted: None,
        }
    }

    pub fn infeasible(system: String, n: usize, kind: QcKind, status: String, seconds: f64) -> Self {
        Self {
            command: "certify-gain",
            system,
            certified: false,
            gamma: None,
            horizon: n,
            qc_class: kind.short_name(),
            margin: None,
            status,
            seconds,
            check: None,
            certificate: None,
            lifted: None,
        }
    }

    pub fn with_lifted(mut self, lifted: &LiftedSystem) -> Self {
        self.lifted = Some(lifted.to_report());
        self
    }
}

#[derive(Debug, Serialize)]
pub struct MarginReport {
    pub command: &'static str,
    pub system: String,
    pub alpha: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub qc_class: &'static str,
    pub range_saturated: bool,
    pub bisection: BisectionOptions,
    pub trace: Vec<BisectionStep>,
    pub seconds: f64,
    pub certificate: Option<CertificateReport>,
}

impl MarginReport {
    pub fn new(
        system: String,
        horizon: usize,
        kind: QcKind,
        bisection: BisectionOptions,
        outcome: &MarginOutcome,
    ) -> Self {
        Self {
            command: "stability-margin",
            system,
            alpha: outcome.alpha,
            horizon,
            qc_class: kind.short_name(),
            range_saturated: outcome.range_saturated,
            bisection,
            trace: outcome.trace.clone(),
            seconds: outcome.wallclock_seconds,
            certificate: outcome.certificate.as_ref().map(Certificate::to_report),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub command: &'static str,
    pub system: String,
    pub alpha: Option<f64>,
    pub falsification: FalsificationReport,
    pub gain_lower_bound: Option<f64>,
    pub gain_trials: Option<usize>,
    pub gain_steps: Option<usize>,
}
