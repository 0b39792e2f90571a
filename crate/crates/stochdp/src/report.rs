//! Run reports in three renderings: text, CSV (policy rows) and structured JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use stochdp_core::bellman::{AssumptionReport, Policy};
use stochdp_core::lagrange::LagrangeReport;
use stochdp_core::{AdaptedProcess, ScenarioTree};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRow {
    pub node: String,
    pub stage: usize,
    pub x: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Compare {
    pub dp: f64,
    pub extensive: f64,
    pub delta: f64,
    pub method: String,
    pub within_tol: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_stage_values: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub policy: Vec<PolicyRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumption_report: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<Compare>,
    /// command-specific tables
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report {
            schema: SCHEMA,
            command: command.to_string(),
            value: None,
            per_stage_values: Vec::new(),
            policy: Vec::new(),
            residual_max: None,
            assumption_report: None,
            compare: None,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn detail(&mut self, key: &str, value: Value) {
        self.details.insert(key.to_string(), value);
    }

    pub fn set_policy(&mut self, tree: &ScenarioTree, policy: &Policy) {
        self.policy = policy
            .decisions
            .iter()
            .map(|(id, x)| PolicyRow {
                node: tree.label(id).to_string(),
                stage: tree.stage(id),
                x: x.clone(),
                residual: policy.residuals[id],
            })
            .collect();
        self.residual_max = Some(policy.residual_max());
    }

    /// Policy rows with zero residuals (drivers without a residual notion).
    pub fn set_rows(&mut self, tree: &ScenarioTree, x: &AdaptedProcess<Vec<f64>>) {
        self.policy = x
            .iter()
            .map(|(id, v)| PolicyRow { node: tree.label(id).to_string(), stage: tree.stage(id), x: v.clone(), residual: 0.0 })
            .collect();
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Structured => serde_json::to_string_pretty(self).expect("reports serialize") + "\n",
            Format::Csv => self.csv(),
            Format::Text => self.text(),
        }
    }

    fn csv(&self) -> String {
        let width = self.policy.iter().map(|r| r.x.len()).max().unwrap_or(0);
        let mut out = String::from("node_id,stage");
        for j in 0..width {
            let _ = write!(out, ",x_{j}");
        }
        out.push_str(",residual\n");
        for r in &self.policy {
            let _ = write!(out, "{},{}", r.node, r.stage);
            for j in 0..width {
                match r.x.get(j) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            let _ = writeln!(out, ",{}", r.residual);
        }
        out
    }

    fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.command);
        if let Some(v) = self.value {
            let _ = writeln!(out, "value: {v}");
        }
        if !self.per_stage_values.is_empty() {
            let vals: Vec<String> = self.per_stage_values.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "per-stage values: {}", vals.join(" "));
        }
        if let Some(c) = &self.compare {
            let _ = writeln!(
                out,
                "dp: {}  extensive: {} ({})  delta: {:e}  {}",
                c.dp,
                c.extensive,
                c.method,
                c.delta,
                if c.within_tol { "ok" } else { "MISMATCH" }
            );
        }
        if !self.policy.is_empty() {
            let _ = writeln!(out, "policy:");
            for r in &self.policy {
                let xs: Vec<String> = r.x.iter().map(|v| format!("{v:.10}")).collect();
                let _ = writeln!(out, "  {} (t={}): [{}]  residual {:e}", r.node, r.stage, xs.join(", "), r.residual);
            }
        }
        if let Some(r) = self.residual_max {
            let _ = writeln!(out, "residual_max: {r:e}");
        }
        if let Some(a) = &self.assumption_report {
            let _ = writeln!(out, "assumptions: {}", serde_json::to_string(a).expect("json"));
        }
        for (k, v) in &self.details {
            let _ = writeln!(out, "{k}: {}", serde_json::to_string(v).expect("json"));
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

pub fn assumption_json(tree: &ScenarioTree, r: &AssumptionReport) -> Value {
    json!({
        "pass": r.pass(),
        "feasible": r.feasible,
        "certificates": r.certificates.iter().map(|c| json!({
            "lambda": c.lambda,
            "pass": c.pass,
            "m": c.bounds.iter().map(|b| json!([tree.label(b.node), b.m])).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "linearity": {
            "pass": r.linearity.pass,
            "nonlinear_nodes": r.linearity.nonlinear_nodes.iter().map(|n| tree.label(*n)).collect::<Vec<_>>(),
            "lineality_dims": r.linearity.lineality_dims,
            "failure": r.linearity.failure.as_ref().map(|e| e.to_string()),
        },
    })
}

pub fn lagrange_json(tree: &ScenarioTree, r: &LagrangeReport) -> Value {
    json!({
        "pass": r.pass(),
        "certificates": r.certificates.iter().map(|c| json!({
            "lambda": c.lambda,
            "pass": c.pass,
            "m": c.bounds.iter().map(|b| json!([b.stage, tree.label(b.node), b.m])).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "linear": r.linear,
        "nonlinear_nodes": r.nonlinear_nodes.iter().map(|n| tree.label(*n)).collect::<Vec<_>>(),
        "lineality_dims": r.lineality_dims,
    })
}

pub fn matrix_json(m: &nalgebra::DMatrix<f64>) -> Value {
    json!(crate::format::rows_of(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_are_fixed() {
        let mut r = Report::new("solve");
        r.policy = vec![
            PolicyRow { node: "0".into(), stage: 0, x: vec![1.0, 2.0], residual: 0.0 },
            PolicyRow { node: "1".into(), stage: 1, x: vec![3.0], residual: 1e-12 },
        ];
        let csv = r.render(Format::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("node_id,stage,x_0,x_1,residual"));
        assert_eq!(lines.next(), Some("0,0,1,2,0"));
        assert_eq!(lines.next(), Some("1,1,3,,0.000000000001"));
    }

    #[test]
    fn structured_output_is_versioned() {
        let r = Report::new("stop");
        let v: Value = serde_json::from_str(&r.render(Format::Structured)).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["command"], "stop");
    }
}
