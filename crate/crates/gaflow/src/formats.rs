//! JSON documents exchanged between pipeline stages.

use gaflow_core::attribution::{ranking, AttributionVector};
use gaflow_core::evaluation::{MaskDirection, MaskedRecord};
use gaflow_core::graph::{Edge, LayeredGraph};
use gaflow_core::info_tensor::AggregationMode;
use gaflow_core::maxflow::{FlowSolution, NonUniquenessReport, SolverKind};
use gaflow_core::Direction;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub t: usize,
    pub l: usize,
    pub direction: String,
    pub gamma: f64,
    pub ss: usize,
    pub st: usize,
    /// Graph edges followed by the return edge `st -> ss`, the only edge
    /// with a nonzero cost.
    pub edges: Vec<EdgeJson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeJson {
    pub tail: usize,
    pub head: usize,
    pub upper: f64,
    pub iupper: u64,
    pub cost: f64,
}

impl GraphJson {
    pub fn from_graph(g: &LayeredGraph) -> Self {
        let mut edges: Vec<EdgeJson> = g
            .edges()
            .iter()
            .zip(g.integral_upper())
            .map(|(e, &iupper)| EdgeJson {
                tail: e.tail,
                head: e.head,
                upper: e.upper,
                iupper,
                cost: 0.0,
            })
            .collect();
        edges.push(EdgeJson {
            tail: g.super_target(),
            head: g.super_source(),
            upper: g.total_capacity(),
            iupper: g.integral_upper().iter().sum(),
            cost: -1.0,
        });
        Self {
            t: g.tokens(),
            l: g.layers(),
            direction: g.direction().as_str().into(),
            gamma: g.scale_gamma(),
            ss: g.super_source(),
            st: g.super_target(),
            edges,
        }
    }

    pub fn to_graph(&self) -> Result<LayeredGraph> {
        let direction: Direction = self.direction.parse()?;
        let mut edges = self.edges.as_slice();
        if let Some((last, rest)) = edges.split_last() {
            if last.cost != 0.0 {
                if last.cost != -1.0 || (last.tail, last.head) != (self.st, self.ss) {
                    return Err(Error::invalid("the costed edge must be st -> ss with cost -1"));
                }
                edges = rest;
            }
        }
        if edges.iter().any(|e| e.cost != 0.0) {
            return Err(Error::invalid("only the final return edge may carry a cost"));
        }
        let g = LayeredGraph::from_parts(
            self.t,
            self.l,
            direction,
            self.gamma,
            edges
                .iter()
                .map(|e| Edge {
                    tail: e.tail,
                    head: e.head,
                    lower: 0.0,
                    upper: e.upper,
                })
                .collect(),
            edges.iter().map(|e| e.iupper).collect(),
        )?;
        if (g.super_source(), g.super_target()) != (self.ss, self.st) {
            return Err(Error::invalid(format!(
                "ss/st are {}/{} but a {} graph of this size uses {}/{}",
                self.ss,
                self.st,
                direction,
                g.super_source(),
                g.super_target()
            )));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowJson {
    pub solver: String,
    pub value: f64,
    pub mu_final: Option<f64>,
    pub residual: f64,
    pub flows: Vec<f64>,
}

impl FlowJson {
    pub fn from_solution(sol: &FlowSolution) -> Self {
        Self {
            solver: sol.solver.as_str().into(),
            value: sol.value,
            mu_final: sol.mu_final,
            residual: sol.residual,
            flows: sol.per_edge.clone(),
        }
    }

    pub fn to_solution(&self) -> Result<FlowSolution> {
        let solver = match self.solver.as_str() {
            "barrier" => SolverKind::Barrier,
            "exact" => SolverKind::Exact,
            other => return Err(Error::invalid(format!("unknown solver {other:?}"))),
        };
        Ok(FlowSolution {
            per_edge: self.flows.clone(),
            value: self.value,
            solver,
            residual: self.residual,
            mu_final: self.mu_final,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionJson {
    pub example_id: String,
    pub mode: String,
    pub layer: usize,
    pub scores: Vec<f64>,
    pub tokens: Vec<String>,
    pub total_flow: f64,
}

impl AttributionJson {
    pub fn new(example_id: String, mode: AggregationMode, tokens: Vec<String>, a: &AttributionVector) -> Self {
        Self {
            example_id,
            mode: mode.as_str().into(),
            layer: a.layer,
            scores: a.token_scores.clone(),
            tokens,
            total_flow: a.total_flow,
        }
    }
}

/// Token indices by descending score, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingJson {
    pub example_id: String,
    pub order: Vec<usize>,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
}

impl RankingJson {
    pub fn from_attribution(a: &AttributionJson) -> Self {
        let order = ranking(&a.scores);
        Self {
            example_id: a.example_id.clone(),
            tokens: order.iter().map(|&i| a.tokens[i].clone()).collect(),
            scores: order.iter().map(|&i| a.scores[i]).collect(),
            order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonUniquenessJson {
    pub value_backward: f64,
    pub value_forward: f64,
    pub linf_flow_distance: f64,
    pub distinct: bool,
    pub flows_backward: Vec<f64>,
    pub flows_forward_mapped: Vec<f64>,
}

impl From<&NonUniquenessReport> for NonUniquenessJson {
    fn from(r: &NonUniquenessReport) -> Self {
        Self {
            value_backward: r.value_backward,
            value_forward: r.value_forward,
            linf_flow_distance: r.linf_flow_distance,
            distinct: r.distinct,
            flows_backward: r.flows_backward.clone(),
            flows_forward_mapped: r.flows_forward_mapped.clone(),
        }
    }
}

/// One line of a masked-prediction JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordJson {
    pub example_id: String,
    pub k: u32,
    pub direction: String,
    pub p_orig: f64,
    pub p_masked: f64,
    pub y_hat: usize,
    pub y_masked: usize,
    pub y_true: usize,
}

impl From<&MaskedRecord> for RecordJson {
    fn from(r: &MaskedRecord) -> Self {
        Self {
            example_id: r.example_id.clone(),
            k: r.k,
            direction: r.direction.as_str().into(),
            p_orig: r.p_orig,
            p_masked: r.p_masked,
            y_hat: r.y_hat,
            y_masked: r.y_masked,
            y_true: r.y_true,
        }
    }
}

impl RecordJson {
    pub fn to_record(&self) -> Result<MaskedRecord> {
        let direction: MaskDirection = self.direction.parse()?;
        let r = MaskedRecord {
            example_id: self.example_id.clone(),
            k: self.k,
            direction,
            p_orig: self.p_orig,
            p_masked: self.p_masked,
            y_hat: self.y_hat,
            y_masked: self.y_masked,
            y_true: self.y_true,
        };
        r.validate()?;
        Ok(r)
    }
}

/// Parses a JSONL stream of records, skipping blank lines. Errors name the
/// 1-based line.
pub fn parse_records(text: &str) -> Result<Vec<MaskedRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let json: RecordJson = serde_json::from_str(line)
                .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
            json.to_record().map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_records(records: &[MaskedRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&RecordJson::from(r)).expect("records serialize"));
        out.push('\n');
    }
    out
}
