//! Composition of discovered skills into sequences that meet a slice
//! request's per-resource bounds.
//!
//! Skills compose additively on their final allocations. Candidates at each
//! step are ordered greedily by how much they shrink the remaining deficit
//! (lowest skill index on ties); when the greedy choice dead-ends the search
//! backtracks to the next candidate, so the first sequence found is the greedy
//! one whenever greedy succeeds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::SkillSummary;
use crate::{ResourceVector, SkillId};

pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 8;

/// Upper limit on visited search nodes; past it the request is reported
/// infeasible.
pub const SEARCH_BUDGET: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum RequestError {
    #[error("{field} must be finite and non-negative, got {value:?}")]
    NotNonNegative { field: &'static str, value: [f64; 4] },
    #[error("minimum {minimum:?} exceeds {bound} {limit:?}")]
    MinimumAboveBound {
        bound: &'static str,
        minimum: [f64; 4],
        limit: [f64; 4],
    },
    #[error("skill table is empty")]
    EmptyTable,
    #[error("skill table entry {0} has a non-finite or negative allocation")]
    BadSkill(usize),
    #[error("max sequence length must be at least 1")]
    ZeroLength,
}

fn default_pool() -> ResourceVector {
    ResourceVector::splat(100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceRequest {
    pub service_type: String,
    pub minimum: ResourceVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximum: Option<ResourceVector>,
    #[serde(default = "default_pool")]
    pub pool_capacity: ResourceVector,
}

impl SliceRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        let check = |field, v: &ResourceVector| {
            if v.is_finite_nonnegative() {
                Ok(())
            } else {
                Err(RequestError::NotNonNegative { field, value: v.0 })
            }
        };
        check("minimum", &self.minimum)?;
        check("pool_capacity", &self.pool_capacity)?;
        if let Some(max) = &self.maximum {
            check("maximum", max)?;
            if !self.minimum.le(max) {
                return Err(RequestError::MinimumAboveBound {
                    bound: "maximum",
                    minimum: self.minimum.0,
                    limit: max.0,
                });
            }
        }
        if !self.minimum.le(&self.pool_capacity) {
            return Err(RequestError::MinimumAboveBound {
                bound: "pool_capacity",
                minimum: self.minimum.0,
                limit: self.pool_capacity.0,
            });
        }
        Ok(())
    }

    /// Component-wise `min(maximum, pool_capacity)`.
    pub fn upper_bound(&self) -> ResourceVector {
        match &self.maximum {
            Some(max) => max.zip_with(&self.pool_capacity, f64::min),
            None => self.pool_capacity,
        }
    }

    /// `sum(max(0, minimum - total))`.
    pub fn deficit(&self, total: &ResourceVector) -> f64 {
        self.minimum
            .zip_with(total, |m, t| (m - t).max(0.0))
            .iter()
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Satisfied,
    Infeasible,
}

/// For an infeasible request, `sequence` holds the purely greedy attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionResult {
    pub status: Status,
    pub sequence: Vec<SkillId>,
    pub total: ResourceVector,
}

struct Search<'a> {
    table: &'a [SkillSummary],
    request: &'a SliceRequest,
    upper: ResourceVector,
    max_len: usize,
    nodes: usize,
    greedy: Option<(Vec<SkillId>, ResourceVector)>,
}

impl Search<'_> {
    /// Admissible skills that strictly reduce the deficit, best first.
    fn candidates(&self, total: &ResourceVector) -> Vec<(usize, ResourceVector)> {
        let before = self.request.deficit(total);
        let mut out: Vec<(usize, f64, ResourceVector)> = self
            .table
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let next = total.add(&s.final_allocation);
                let reduction = before - self.request.deficit(&next);
                (next.le(&self.upper) && reduction > 0.0).then_some((i, reduction, next))
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(i, _, next)| (i, next)).collect()
    }

    fn run(&mut self, total: ResourceVector, seq: &mut Vec<SkillId>) -> Option<ResourceVector> {
        self.nodes += 1;
        if self.request.deficit(&total) == 0.0 {
            return Some(total);
        }
        let candidates = if seq.len() < self.max_len {
            self.candidates(&total)
        } else {
            Vec::new()
        };
        if candidates.is_empty() && self.greedy.is_none() {
            self.greedy = Some((seq.clone(), total));
        }
        for (i, next) in candidates {
            if self.nodes >= SEARCH_BUDGET {
                break;
            }
            seq.push(self.table[i].skill);
            if let Some(found) = self.run(next, seq) {
                return Some(found);
            }
            seq.pop();
        }
        None
    }
}

pub fn compose(
    table: &[SkillSummary],
    request: &SliceRequest,
    max_sequence_length: usize,
) -> Result<CompositionResult, RequestError> {
    request.validate()?;
    if table.is_empty() {
        return Err(RequestError::EmptyTable);
    }
    if let Some(i) = table.iter().position(|s| !s.final_allocation.is_finite_nonnegative()) {
        return Err(RequestError::BadSkill(i));
    }
    if max_sequence_length == 0 {
        return Err(RequestError::ZeroLength);
    }
    let mut search = Search {
        table,
        request,
        upper: request.upper_bound(),
        max_len: max_sequence_length,
        nodes: 0,
        greedy: None,
    };
    let mut sequence = Vec::new();
    Ok(match search.run(ResourceVector::zeros(), &mut sequence) {
        Some(total) => CompositionResult {
            status: Status::Satisfied,
            sequence,
            total,
        },
        None => {
            let (sequence, total) = search.greedy.unwrap_or_default();
            CompositionResult {
                status: Status::Infeasible,
                sequence,
                total,
            }
        }
    })
}

/// Recomputes the total from the sequence and rechecks every bound.
pub fn verify(result: &CompositionResult, table: &[SkillSummary], request: &SliceRequest) -> bool {
    let mut total = ResourceVector::zeros();
    for id in &result.sequence {
        match table.iter().find(|s| s.skill == *id) {
            Some(s) => total = total.add(&s.final_allocation),
            None => return false,
        }
    }
    let consistent = total
        .iter()
        .zip(result.total.iter())
        .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    if !consistent {
        return false;
    }
    match result.status {
        Status::Satisfied => {
            request.validate().is_ok()
                && request.minimum.le(&total)
                && total.le(&request.upper_bound())
        }
        Status::Infeasible => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TerminalKind;

    fn table(finals: &[[f64; 4]]) -> Vec<SkillSummary> {
        finals
            .iter()
            .enumerate()
            .map(|(i, f)| SkillSummary {
                skill: SkillId(i),
                final_allocation: ResourceVector::from(*f),
                steps: 1,
                terminal_kind: TerminalKind::Cap,
            })
            .collect()
    }

    fn request(min: [f64; 4], max: Option<[f64; 4]>) -> SliceRequest {
        SliceRequest {
            service_type: "test".into(),
            minimum: ResourceVector::from(min),
            maximum: max.map(ResourceVector::from),
            pool_capacity: default_pool(),
        }
    }

    #[test]
    fn zero_minimum_is_trivially_satisfied() {
        let t = table(&[[5.0; 4]]);
        let r = compose(&t, &request([0.0; 4], None), 8).unwrap();
        assert_eq!(r.status, Status::Satisfied);
        assert!(r.sequence.is_empty());
        assert_eq!(r.total, ResourceVector::zeros());
        assert!(verify(&r, &t, &request([0.0; 4], None)));
    }

    #[test]
    fn exact_profile_satisfies_tight_request() {
        let t = table(&[[5.0, 6.0, 7.0, 8.0], [12.0, 9.0, 10.0, 11.0], [3.0; 4]]);
        let req = request([12.0, 9.0, 10.0, 11.0], Some([12.0, 9.0, 10.0, 11.0]));
        let r = compose(&t, &req, 8).unwrap();
        assert_eq!(r.status, Status::Satisfied);
        assert_eq!(r.sequence, vec![SkillId(1)]);
        assert!(verify(&r, &t, &req));
    }

    #[test]
    fn unreachable_minimum_is_infeasible() {
        // One skill falls short and any two overshoot the maximum.
        let t = table(&[[15.0; 4], [16.0; 4]]);
        let req = request([20.0; 4], Some([25.0; 4]));
        let r = compose(&t, &req, 8).unwrap();
        assert_eq!(r.status, Status::Infeasible);
        assert!(verify(&r, &t, &req));
    }

    #[test]
    fn greedy_prefers_largest_reduction_then_lowest_index() {
        let t = table(&[[3.0; 4], [5.0; 4], [5.0; 4]]);
        let req = request([10.0; 4], None);
        let r = compose(&t, &req, 8).unwrap();
        assert_eq!(r.sequence, vec![SkillId(1), SkillId(1)]);
        assert_eq!(r.total, ResourceVector::splat(10.0));
    }

    #[test]
    fn backtracks_past_a_greedy_dead_end() {
        // Greedy takes C first, after which nothing fits; A + B succeeds.
        let t = table(&[[10.0, 0.0, 0.0, 0.0], [0.0, 10.0, 0.0, 0.0], [11.0, 9.0, 0.0, 0.0]]);
        let req = request([10.0, 10.0, 0.0, 0.0], Some([12.0, 12.0, 100.0, 100.0]));
        let r = compose(&t, &req, 2).unwrap();
        assert_eq!(r.status, Status::Satisfied);
        assert_eq!(r.sequence, vec![SkillId(0), SkillId(1)]);
        assert!(verify(&r, &t, &req));
    }

    #[test]
    fn infeasible_result_reports_greedy_attempt() {
        let t = table(&[[4.0; 4]]);
        let req = request([10.0; 4], Some([10.0; 4]));
        let r = compose(&t, &req, 8).unwrap();
        assert_eq!(r.status, Status::Infeasible);
        assert_eq!(r.sequence, vec![SkillId(0), SkillId(0)]);
        assert_eq!(r.total, ResourceVector::splat(8.0));
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let t = table(&[[4.0; 4]]);
        assert!(matches!(
            compose(&t, &request([5.0; 4], Some([4.0; 4])), 8),
            Err(RequestError::MinimumAboveBound { bound: "maximum", .. })
        ));
        assert!(compose(&t, &request([-1.0, 0.0, 0.0, 0.0], None), 8).is_err());
        assert!(compose(&t, &request([101.0; 4], None), 8).is_err());
        assert_eq!(compose(&[], &request([1.0; 4], None), 8), Err(RequestError::EmptyTable));
        assert_eq!(compose(&t, &request([1.0; 4], None), 0), Err(RequestError::ZeroLength));
    }

    #[test]
    fn verify_catches_tampering() {
        let t = table(&[[5.0; 4]]);
        let req = request([5.0; 4], None);
        let mut r = compose(&t, &req, 8).unwrap();
        assert!(verify(&r, &t, &req));
        r.total[2] += 0.5;
        assert!(!verify(&r, &t, &req));

        let empty = CompositionResult {
            status: Status::Satisfied,
            sequence: vec![],
            total: ResourceVector::zeros(),
        };
        assert!(!verify(&empty, &t, &req));

        let unknown = CompositionResult {
            status: Status::Infeasible,
            sequence: vec![SkillId(7)],
            total: ResourceVector::splat(5.0),
        };
        assert!(!verify(&unknown, &t, &req));
    }

    #[test]
    fn request_toml_defaults_pool() {
        let req: SliceRequest = toml::from_str(
            "service_type = \"urllc\"\nminimum = [10.0, 12.0, 0.0, 5.0]\nmaximum = [20, 30, 40, 50]\n",
        )
        .unwrap();
        assert_eq!(req.pool_capacity, default_pool());
        assert_eq!(req.maximum, Some(ResourceVector::from([20.0, 30.0, 40.0, 50.0])));
        assert!(toml::from_str::<SliceRequest>("service_type = \"x\"\nminimum = [1, 2, 3]\n").is_err());
    }
}
