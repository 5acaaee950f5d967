//! Multi-area adequacy model: network description, generation-state
//! sampling, curtailment dispatch (QP), distance-from-shortfall margin (LP),
//! LOLE/EENS impacts, and feature labeling.
//!
//! Dispatch solves, per sampled state `(g, d)`,
//!
//! ```text
//!     min  sum_i c_i^2 / (2 d_i) + c_i
//!     s.t. line flow bounds
//!          0 <= c_i <= d_i
//!          d_i - g_i <= inflow_i - outflow_i + c_i <= d_i
//! ```
//!
//! which favors curtailment spread in proportion to demand. The margin of a
//! no-shortfall state is the largest uniform proportional demand increase
//! the system absorbs before curtailment, found by the regularized-LP path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::qp::{
    solve_lp_via_regularization, solve_qp, LinearProgram, QpStatus, QuadProgram, LP_EPS_REG,
};
use crate::stats::average_ranks;
use crate::{derive_seed, Real, HOURS_PER_YEAR};

/// Curtailments below this are treated as solver noise, not shortfall (MW).
pub const EPNS_ZERO_TOL: Real = 1e-9;

/// Deterministic wind contribution: this share of nameplate is always on.
pub const WIND_CREDIT: Real = 0.15;

/// Tiny quadratic weight on flow variables; makes the flow pattern unique
/// (minimum norm) without disturbing the curtailment optimum.
const FLOW_REG: Real = 1e-8;

// ---------------------------------------------------------------------------
// Network description
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub name: String,
    pub conventional_capacity_mw: Real,
    pub wind_nameplate_mw: Real,
    pub unit_size_mw: Real,
    pub unit_count: u32,
    pub availability: Real,
}

/// Directed line `from -> to` with `from < to`; negative flow runs backwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub f_min_mw: Real,
    pub f_max_mw: Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    areas: Vec<Area>,
    lines: Vec<Line>,
}

impl NetworkModel {
    pub fn new(areas: Vec<Area>, lines: Vec<Line>) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one area".into()));
        }
        for a in &areas {
            if a.unit_size_mw * a.unit_count as Real != a.conventional_capacity_mw {
                return Err(Error::InvalidConfig(format!(
                    "area '{}': unit_size * unit_count must equal conventional capacity",
                    a.name
                )));
            }
            if !(0.0 < a.availability && a.availability <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "area '{}': availability must lie in (0, 1]",
                    a.name
                )));
            }
            if a.wind_nameplate_mw < 0.0 || a.conventional_capacity_mw < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "area '{}': capacities must be nonnegative",
                    a.name
                )));
            }
        }
        for l in &lines {
            if l.from >= l.to || l.to >= areas.len() {
                return Err(Error::InvalidConfig(format!(
                    "line {}-{}: endpoints must satisfy from < to < n_areas",
                    l.from, l.to
                )));
            }
            if l.f_min_mw > l.f_max_mw {
                return Err(Error::InvalidConfig(format!(
                    "line {}-{}: f_min > f_max",
                    l.from, l.to
                )));
            }
        }
        Ok(NetworkModel { areas, lines })
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }
}

/// Largest integer unit size (MW) at or under 500 that divides the total;
/// every total has the divisor 1 as a fallback.
pub fn unit_size_rule(total_capacity_mw: u64) -> (u64, u64) {
    assert!(total_capacity_mw > 0, "capacity must be positive");
    let mut size = 500.min(total_capacity_mw);
    while total_capacity_mw % size != 0 {
        size -= 1;
    }
    (size, total_capacity_mw / size)
}

/// Builds an area applying the unit-size rule to its conventional capacity.
pub fn area_with_unit_rule(
    name: &str,
    conventional_capacity_mw: u64,
    wind_nameplate_mw: Real,
    availability: Real,
) -> Area {
    let (size, count) = unit_size_rule(conventional_capacity_mw);
    Area {
        name: name.to_string(),
        conventional_capacity_mw: conventional_capacity_mw as Real,
        wind_nameplate_mw,
        unit_size_mw: size as Real,
        unit_count: count as u32,
        availability,
    }
}

// TOML wire format: `[[area]]` tables plus `[[line]]` tables keyed by names.

#[derive(Serialize, Deserialize)]
struct NetworkToml {
    area: Vec<Area>,
    #[serde(default)]
    line: Vec<LineToml>,
}

#[derive(Serialize, Deserialize)]
struct LineToml {
    from: String,
    to: String,
    f_min_mw: Real,
    f_max_mw: Real,
}

impl NetworkModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: NetworkToml =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("network toml: {e}")))?;
        let index_of = |name: &str| -> Result<usize> {
            raw.area
                .iter()
                .position(|a| a.name == name)
                .ok_or_else(|| Error::InvalidConfig(format!("line references unknown area '{name}'")))
        };
        let mut lines = Vec::with_capacity(raw.line.len());
        for l in &raw.line {
            let (mut from, mut to) = (index_of(&l.from)?, index_of(&l.to)?);
            let (mut lo, mut hi) = (l.f_min_mw, l.f_max_mw);
            if from > to {
                // Normalize orientation; reversing a line flips its bounds.
                std::mem::swap(&mut from, &mut to);
                let (nlo, nhi) = (-hi, -lo);
                lo = nlo;
                hi = nhi;
            }
            lines.push(Line {
                from,
                to,
                f_min_mw: lo,
                f_max_mw: hi,
            });
        }
        NetworkModel::new(raw.area.clone(), lines)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let raw = NetworkToml {
            area: self.areas.clone(),
            line: self
                .lines
                .iter()
                .map(|l| LineToml {
                    from: self.areas[l.from].name.clone(),
                    to: self.areas[l.to].name.clone(),
                    f_min_mw: l.f_min_mw,
                    f_max_mw: l.f_max_mw,
                })
                .collect(),
        };
        toml::to_string(&raw).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_toml_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        NetworkModel::from_toml_str(&text)
    }
}

/// The bundled synthetic 5-area desk system: a ring with one chord, sized
/// against the default synthetic demand so plain-MC LOLE lands in the tens
/// of hours per year.
pub fn desk_network() -> NetworkModel {
    let specs: [(&str, u64, Real); 5] = [
        ("A1", 5250, 900.0),
        ("A2", 8600, 1500.0),
        ("A3", 13800, 2400.0),
        ("A4", 7000, 1200.0),
        ("A5", 10400, 1800.0),
    ];
    let areas = specs
        .iter()
        .map(|(name, cap, wind)| area_with_unit_rule(name, *cap, *wind, 0.8))
        .collect();
    let ring = |from: usize, to: usize, cap: Real| Line {
        from,
        to,
        f_min_mw: -cap,
        f_max_mw: cap,
    };
    let lines = vec![
        ring(0, 1, 900.0),
        ring(1, 2, 1400.0),
        ring(2, 3, 1400.0),
        ring(3, 4, 1000.0),
        ring(0, 4, 900.0),
        ring(1, 3, 800.0), // chord
    ];
    NetworkModel::new(areas, lines).expect("desk network is valid")
}

// ---------------------------------------------------------------------------
// States, dispatch, margin
// ---------------------------------------------------------------------------

/// One sampled system state: available generation and demand per area (MW).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub available_gen_mw: Vec<Real>,
    pub demand_mw: Vec<Real>,
}

impl SystemState {
    pub fn new(available_gen_mw: Vec<Real>, demand_mw: Vec<Real>) -> Result<Self> {
        if available_gen_mw.len() != demand_mw.len() {
            return Err(Error::DimensionMismatch {
                context: "SystemState",
                expected: available_gen_mw.len(),
                got: demand_mw.len(),
            });
        }
        if available_gen_mw
            .iter()
            .chain(demand_mw.iter())
            .any(|&v| !v.is_finite() || v < 0.0)
        {
            return Err(Error::NonFinite("system state".into()));
        }
        Ok(SystemState {
            available_gen_mw,
            demand_mw,
        })
    }
}

/// Dispatch outcome: per-area curtailment, per-line flow, and the summed
/// power not supplied.
#[derive(Debug, Clone)]
pub struct DispatchResult {
    pub curtailment_mw: Vec<Real>,
    pub flows_mw: Vec<Real>,
    pub epns_mw: Real,
}

impl DispatchResult {
    /// Checks curtailment bounds, flow bounds, and the nodal balance band.
    pub fn verify(&self, network: &NetworkModel, state: &SystemState, tol: Real) -> Result<()> {
        for (i, &c) in self.curtailment_mw.iter().enumerate() {
            if c < -tol || c > state.demand_mw[i] + tol {
                return Err(Error::Numeric(format!(
                    "curtailment out of bounds in area {i}: {c}"
                )));
            }
        }
        for (l, line) in network.lines().iter().enumerate() {
            let f = self.flows_mw[l];
            if f < line.f_min_mw - tol || f > line.f_max_mw + tol {
                return Err(Error::Numeric(format!("flow out of bounds on line {l}: {f}")));
            }
        }
        for i in 0..network.n_areas() {
            let mut net_in = self.curtailment_mw[i];
            for (l, line) in network.lines().iter().enumerate() {
                if line.to == i {
                    net_in += self.flows_mw[l];
                } else if line.from == i {
                    net_in -= self.flows_mw[l];
                }
            }
            let lo = state.demand_mw[i] - state.available_gen_mw[i];
            let hi = state.demand_mw[i];
            if net_in < lo - tol || net_in > hi + tol {
                return Err(Error::Numeric(format!(
                    "nodal balance violated in area {i}: {net_in} not in [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

fn check_state(network: &NetworkModel, state: &SystemState) -> Result<()> {
    if state.demand_mw.len() != network.n_areas() {
        return Err(Error::DimensionMismatch {
            context: "state area count",
            expected: network.n_areas(),
            got: state.demand_mw.len(),
        });
    }
    Ok(())
}

/// Samples per-area available generation: a binomial draw over conventional
/// units plus the constant wind credit.
pub fn sample_generation<R: Rng + ?Sized>(network: &NetworkModel, rng: &mut R) -> Vec<Real> {
    network
        .areas()
        .iter()
        .map(|a| {
            let up = if a.unit_count == 0 {
                0
            } else {
                Binomial::new(a.unit_count as u64, a.availability)
                    .expect("validated availability")
                    .sample(rng)
            };
            up as Real * a.unit_size_mw + WIND_CREDIT * a.wind_nameplate_mw
        })
        .collect()
}

/// Curtailment dispatch for one state. Areas with zero demand are excluded
/// from the quadratic objective and pinned at zero curtailment.
pub fn dispatch(network: &NetworkModel, state: &SystemState) -> Result<DispatchResult> {
    check_state(network, state)?;
    let n = network.n_areas();
    let m = network.lines().len();

    // Variables: [flows..., curtailments of demand-positive areas...].
    let demand_areas: Vec<usize> = (0..n).filter(|&i| state.demand_mw[i] > 0.0).collect();
    let nv = m + demand_areas.len();
    let mut q = Mat::zeros(nv, nv);
    let mut c = vec![0.0; nv];
    for l in 0..m {
        q.set(l, l, FLOW_REG);
    }
    for (k, &i) in demand_areas.iter().enumerate() {
        q.set(m + k, m + k, 1.0 / state.demand_mw[i]);
        c[m + k] = 1.0;
    }

    let mut p = QuadProgram::new(q, c);
    for (l, line) in network.lines().iter().enumerate() {
        p.var_lb[l] = line.f_min_mw;
        p.var_ub[l] = line.f_max_mw;
    }
    for (k, &i) in demand_areas.iter().enumerate() {
        p.var_lb[m + k] = 0.0;
        p.var_ub[m + k] = state.demand_mw[i];
    }
    for i in 0..n {
        let mut row = vec![0.0; nv];
        for (l, line) in network.lines().iter().enumerate() {
            if line.to == i {
                row[l] = 1.0;
            } else if line.from == i {
                row[l] = -1.0;
            }
        }
        if let Some(k) = demand_areas.iter().position(|&a| a == i) {
            row[m + k] = 1.0;
        }
        p.add_row(
            &row,
            state.demand_mw[i] - state.available_gen_mw[i],
            state.demand_mw[i],
        );
    }

    let sol = solve_qp(&p)?;
    if sol.status != QpStatus::Optimal {
        // Cannot happen for consistent inputs: full curtailment with zero
        // flow always satisfies the band.
        return Err(Error::Numeric("dispatch QP reported infeasible".into()));
    }

    let flows_mw = sol.primal[..m].to_vec();
    let mut curtailment_mw = vec![0.0; n];
    for (k, &i) in demand_areas.iter().enumerate() {
        let mut ci = sol.primal[m + k].clamp(0.0, state.demand_mw[i]);
        if ci < EPNS_ZERO_TOL {
            ci = 0.0;
        }
        curtailment_mw[i] = ci;
    }
    let epns_mw = curtailment_mw.iter().sum();
    let result = DispatchResult {
        curtailment_mw,
        flows_mw,
        epns_mw,
    };
    debug_assert!(result.verify(network, state, 1e-6).is_ok());
    Ok(result)
}

/// Margin of a no-shortfall state: the maximum demand (MW) that can be added
/// in proportion to the current demand before curtailment appears.
pub fn margin(network: &NetworkModel, state: &SystemState) -> Result<Real> {
    let base = dispatch(network, state)?;
    if base.epns_mw > EPNS_ZERO_TOL {
        return Err(Error::MarginOnShortfall {
            epns: base.epns_mw,
        });
    }
    margin_inner(network, state)
}

/// Margin LP without the shortfall pre-check; callers must know the state
/// dispatches cleanly.
pub(crate) fn margin_inner(network: &NetworkModel, state: &SystemState) -> Result<Real> {
    check_state(network, state)?;
    let n = network.n_areas();
    let m = network.lines().len();
    let total_demand: Real = state.demand_mw.iter().sum();

    // Variables: [flows..., k]; maximize k * total_demand.
    let mut c = vec![0.0; m + 1];
    c[m] = -total_demand;
    let mut lp = LinearProgram::new(c);
    for (l, line) in network.lines().iter().enumerate() {
        lp.var_lb[l] = line.f_min_mw;
        lp.var_ub[l] = line.f_max_mw;
    }
    for i in 0..n {
        let mut row = vec![0.0; m + 1];
        for (l, line) in network.lines().iter().enumerate() {
            if line.to == i {
                row[l] = 1.0;
            } else if line.from == i {
                row[l] = -1.0;
            }
        }
        row[m] = -state.demand_mw[i];
        lp.add_row(
            &row,
            state.demand_mw[i] - state.available_gen_mw[i],
            state.demand_mw[i],
        );
    }
    let sol = solve_lp_via_regularization(&lp, LP_EPS_REG)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::Numeric("margin LP reported infeasible".into()));
    }
    Ok(-sol.objective)
}

// ---------------------------------------------------------------------------
// Impacts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactMetric {
    /// Power not supplied, MW.
    Epns,
    /// Hours per year with unserved demand.
    Lole,
    /// Energy not served, MWh per year.
    Eens,
}

/// `(epns MW, lole h/y, eens MWh/y)` derived from one dispatch outcome.
pub fn impacts_from_epns(epns_mw: Real) -> (Real, Real, Real) {
    if epns_mw > EPNS_ZERO_TOL {
        (epns_mw, HOURS_PER_YEAR, HOURS_PER_YEAR * epns_mw)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Dispatches the state and reports the requested impact metric.
pub fn impact(network: &NetworkModel, state: &SystemState, metric: ImpactMetric) -> Result<Real> {
    let d = dispatch(network, state)?;
    let (epns, lole, eens) = impacts_from_epns(d.epns_mw);
    Ok(match metric {
        ImpactMetric::Epns => epns,
        ImpactMetric::Lole => lole,
        ImpactMetric::Eens => eens,
    })
}

// ---------------------------------------------------------------------------
// Feature labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    TotalLoad,
    EensExtended,
}

/// A feature value attached to a demand state (MW for total load, MWh/y for
/// the extended risk label, which goes negative on comfortable states).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureLabel {
    pub value: Real,
    pub kind: FeatureKind,
}

/// Total load: the sum of area demands.
pub fn label_f_total_load(demand_mw: &[Real]) -> FeatureLabel {
    FeatureLabel {
        value: demand_mw.iter().sum(),
        kind: FeatureKind::TotalLoad,
    }
}

/// Risk label over `k` generation draws: the mean EENS when any load is
/// shed, otherwise the negated annualized worst-case margin, giving a
/// continuous extension below zero.
pub fn label_f_eens<R: Rng + ?Sized>(
    network: &NetworkModel,
    demand_mw: &[Real],
    rng: &mut R,
    k: usize,
) -> Result<FeatureLabel> {
    if k == 0 {
        return Err(Error::InvalidConfig("label_f_eens needs k >= 1".into()));
    }
    let draws: Vec<Vec<Real>> = (0..k).map(|_| sample_generation(network, rng)).collect();
    let mut epns_sum = 0.0;
    let mut states = Vec::with_capacity(k);
    for gen in draws {
        let state = SystemState::new(gen, demand_mw.to_vec())?;
        let d = dispatch(network, &state)?;
        epns_sum += if d.epns_mw > EPNS_ZERO_TOL { d.epns_mw } else { 0.0 };
        states.push(state);
    }
    let mean_epns = epns_sum / k as Real;
    let value = if mean_epns > 0.0 {
        HOURS_PER_YEAR * mean_epns
    } else {
        // No draw shed load, so every margin is defined.
        let mut min_margin = Real::INFINITY;
        for state in &states {
            min_margin = min_margin.min(margin_inner(network, state)?);
        }
        -HOURS_PER_YEAR * min_margin
    };
    Ok(FeatureLabel {
        value,
        kind: FeatureKind::EensExtended,
    })
}

/// Labels a batch of demand rows in parallel; row `i` uses the RNG stream
/// derived from `(base_seed, i)`, so results do not depend on thread count.
pub fn label_f_eens_batch(
    network: &NetworkModel,
    demands: &Mat<Real>,
    base_seed: u64,
    k: usize,
) -> Result<Vec<FeatureLabel>> {
    (0..demands.rows())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(base_seed, i as u64));
            label_f_eens(network, demands.row(i), &mut rng, k)
        })
        .collect()
}

/// Maps raw feature labels to the `[0, 1]` shape the trainer expects:
/// min-max for total load, normalized ranks for the risk label.
pub fn label_transform_for(kind: FeatureKind) -> crate::ovae::LabelTransform {
    match kind {
        FeatureKind::TotalLoad => crate::ovae::LabelTransform::MinMax,
        FeatureKind::EensExtended => crate::ovae::LabelTransform::NormalizedRanks,
    }
}

/// Normalized average ranks in `(0, 1)`, used to evaluate rank alignment of
/// risk labels.
pub fn normalized_ranks(values: &[Real]) -> Vec<Real> {
    let n = values.len() as Real;
    average_ranks(values)
        .into_iter()
        .map(|r| (r - 0.5) / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_area(capacity: Real) -> NetworkModel {
        NetworkModel::new(
            vec![Area {
                name: "A".into(),
                conventional_capacity_mw: capacity,
                wind_nameplate_mw: 0.0,
                unit_size_mw: capacity,
                unit_count: 1,
                availability: 1.0,
            }],
            vec![],
        )
        .unwrap()
    }

    fn two_areas(caps: [Real; 2], line_cap: Real) -> NetworkModel {
        NetworkModel::new(
            vec![
                Area {
                    name: "A".into(),
                    conventional_capacity_mw: caps[0],
                    wind_nameplate_mw: 0.0,
                    unit_size_mw: if caps[0] > 0.0 { caps[0] } else { 1.0 },
                    unit_count: if caps[0] > 0.0 { 1 } else { 0 },
                    availability: 1.0,
                },
                Area {
                    name: "B".into(),
                    conventional_capacity_mw: caps[1],
                    wind_nameplate_mw: 0.0,
                    unit_size_mw: if caps[1] > 0.0 { caps[1] } else { 1.0 },
                    unit_count: if caps[1] > 0.0 { 1 } else { 0 },
                    availability: 1.0,
                },
            ],
            vec![Line {
                from: 0,
                to: 1,
                f_min_mw: -line_cap,
                f_max_mw: line_cap,
            }],
        )
        .unwrap()
    }

    #[test]
    fn unit_size_rule_examples() {
        assert_eq!(unit_size_rule(1200), (400, 3));
        assert_eq!(unit_size_rule(500), (500, 1));
        assert_eq!(unit_size_rule(1000), (500, 2));
        // Prime above 500 falls back to 1 MW units.
        assert_eq!(unit_size_rule(1009), (1, 1009));
    }

    #[test]
    fn generation_sampling_moments() {
        let net = NetworkModel::new(
            vec![Area {
                name: "A".into(),
                conventional_capacity_mw: 500.0,
                wind_nameplate_mw: 200.0,
                unit_size_mw: 100.0,
                unit_count: 5,
                availability: 0.8,
            }],
            vec![],
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 100_000;
        let samples: Vec<Real> = (0..n)
            .map(|_| sample_generation(&net, &mut rng)[0])
            .collect();
        let mean = samples.iter().sum::<Real>() / n as Real;
        // Binomial(5, 0.8) * 100 + 30: mean 430, sd of mean ~ 0.28.
        assert!((mean - 430.0).abs() < 3.0 * 0.3, "mean {mean}");
        // Full availability and zero units are deterministic.
        let det = NetworkModel::new(
            vec![Area {
                name: "B".into(),
                conventional_capacity_mw: 0.0,
                wind_nameplate_mw: 100.0,
                unit_size_mw: 1.0,
                unit_count: 0,
                availability: 0.9,
            }],
            vec![],
        )
        .unwrap();
        assert_eq!(sample_generation(&det, &mut rng), vec![15.0]);
    }

    #[test]
    fn dispatch_islanded_deficit() {
        let net = single_area(50.0);
        let state = SystemState::new(vec![50.0], vec![80.0]).unwrap();
        let d = dispatch(&net, &state).unwrap();
        assert_relative_eq!(d.curtailment_mw[0], 30.0, epsilon = 1e-7);
        assert_relative_eq!(d.epns_mw, 30.0, epsilon = 1e-7);
    }

    #[test]
    fn dispatch_surplus_covers_deficit_over_line() {
        let net = two_areas([100.0, 0.0], 60.0);
        let state = SystemState::new(vec![100.0, 0.0], vec![40.0, 40.0]).unwrap();
        let d = dispatch(&net, &state).unwrap();
        assert_relative_eq!(d.curtailment_mw[0], 0.0, epsilon = 1e-7);
        assert_relative_eq!(d.curtailment_mw[1], 0.0, epsilon = 1e-7);
        assert_relative_eq!(d.flows_mw[0], 40.0, epsilon = 1e-6);
        assert_eq!(d.epns_mw, 0.0);
    }

    #[test]
    fn dispatch_import_limited_by_line() {
        // g=(50,50), d=(80,40), cap 10: area 1 imports 10, curtails 20.
        let net = two_areas([50.0, 50.0], 10.0);
        let state = SystemState::new(vec![50.0, 50.0], vec![80.0, 40.0]).unwrap();
        let d = dispatch(&net, &state).unwrap();
        assert_relative_eq!(d.curtailment_mw[0], 20.0, epsilon = 1e-6);
        assert_relative_eq!(d.curtailment_mw[1], 0.0, epsilon = 1e-7);
        assert_relative_eq!(d.flows_mw[0], -10.0, epsilon = 1e-6);
        d.verify(&net, &state, 1e-6).unwrap();
    }

    #[test]
    fn margin_single_area_hand_value() {
        let net = single_area(100.0);
        let state = SystemState::new(vec![100.0], vec![80.0]).unwrap();
        assert_relative_eq!(margin(&net, &state).unwrap(), 20.0, epsilon = 1e-6);
    }

    #[test]
    fn margin_disconnected_areas_bound_by_tighter_area() {
        let net = NetworkModel::new(
            vec![
                Area {
                    name: "A".into(),
                    conventional_capacity_mw: 100.0,
                    wind_nameplate_mw: 0.0,
                    unit_size_mw: 100.0,
                    unit_count: 1,
                    availability: 1.0,
                },
                Area {
                    name: "B".into(),
                    conventional_capacity_mw: 100.0,
                    wind_nameplate_mw: 0.0,
                    unit_size_mw: 100.0,
                    unit_count: 1,
                    availability: 1.0,
                },
            ],
            vec![],
        )
        .unwrap();
        let state = SystemState::new(vec![100.0, 100.0], vec![80.0, 50.0]).unwrap();
        // k = min(20/80, 50/50) = 0.25; margin = 0.25 * 130.
        assert_relative_eq!(margin(&net, &state).unwrap(), 32.5, epsilon = 1e-6);
    }

    #[test]
    fn margin_zero_at_the_boundary_and_errors_on_shortfall() {
        let net = single_area(100.0);
        let boundary = SystemState::new(vec![100.0], vec![100.0]).unwrap();
        assert_relative_eq!(margin(&net, &boundary).unwrap(), 0.0, epsilon = 1e-6);
        let short = SystemState::new(vec![50.0], vec![100.0]).unwrap();
        assert!(matches!(
            margin(&net, &short),
            Err(Error::MarginOnShortfall { .. })
        ));
    }

    #[test]
    fn impact_arithmetic() {
        let net = single_area(50.0);
        let short = SystemState::new(vec![50.0], vec![80.0]).unwrap();
        assert_relative_eq!(
            impact(&net, &short, ImpactMetric::Eens).unwrap(),
            262_800.0,
            epsilon = 1e-3
        );
        assert_eq!(impact(&net, &short, ImpactMetric::Lole).unwrap(), 8760.0);
        let fine = SystemState::new(vec![100.0], vec![80.0]).unwrap();
        assert_eq!(impact(&net, &fine, ImpactMetric::Lole).unwrap(), 0.0);
        // Sub-threshold curtailment counts as zero.
        let (e, l, s) = impacts_from_epns(1e-12);
        assert_eq!((e, l, s), (0.0, 0.0, 0.0));
    }

    #[test]
    fn total_load_label() {
        assert_eq!(label_f_total_load(&[1.0, 2.0, 3.0]).value, 6.0);
        assert_eq!(label_f_total_load(&[0.0, 0.0]).value, 0.0);
    }

    #[test]
    fn eens_label_zero_generation_network_is_always_short() {
        let net = NetworkModel::new(
            vec![Area {
                name: "A".into(),
                conventional_capacity_mw: 0.0,
                wind_nameplate_mw: 0.0,
                unit_size_mw: 1.0,
                unit_count: 0,
                availability: 0.5,
            }],
            vec![],
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let label = label_f_eens(&net, &[70.0], &mut rng, 10).unwrap();
        assert_relative_eq!(label.value, 8760.0 * 70.0, epsilon = 1e-3);
    }

    #[test]
    fn eens_label_oversized_network_is_negative_margin() {
        let net = single_area(100.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let label = label_f_eens(&net, &[80.0], &mut rng, 5).unwrap();
        assert_relative_eq!(label.value, -8760.0 * 20.0, epsilon = 1e-2);
        assert_eq!(label.kind, FeatureKind::EensExtended);
    }

    #[test]
    fn eens_label_sign_matches_mean_shortfall() {
        // 2 units at 50% availability: some draws short, some do not.
        let net = NetworkModel::new(
            vec![Area {
                name: "A".into(),
                conventional_capacity_mw: 200.0,
                wind_nameplate_mw: 0.0,
                unit_size_mw: 100.0,
                unit_count: 2,
                availability: 0.5,
            }],
            vec![],
        )
        .unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let label = label_f_eens(&net, &[150.0], &mut rng, 20).unwrap();
            // Recompute with the same stream to confirm the sign rule.
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut epns_sum = 0.0;
            for _ in 0..20 {
                let gen = sample_generation(&net, &mut rng);
                let st = SystemState::new(gen, vec![150.0]).unwrap();
                epns_sum += dispatch(&net, &st).unwrap().epns_mw;
            }
            assert_eq!(label.value > 0.0, epns_sum > 0.0, "seed {seed}");
        }
    }

    #[test]
    fn eens_batch_labels_are_thread_count_independent() {
        let net = two_areas([100.0, 100.0], 50.0);
        let demands =
            Mat::from_rows(&[vec![90.0, 80.0], vec![120.0, 110.0], vec![60.0, 50.0]]).unwrap();
        let a = label_f_eens_batch(&net, &demands, 42, 8).unwrap();
        let b = label_f_eens_batch(&net, &demands, 42, 8).unwrap();
        assert_eq!(a, b);
        // Matches the sequential per-row streams.
        for (i, lab) in a.iter().enumerate() {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(42, i as u64));
            let seq = label_f_eens(&net, demands.row(i), &mut rng, 8).unwrap();
            assert_eq!(*lab, seq);
        }
    }

    #[test]
    fn network_toml_round_trip_and_reversed_line_normalization() {
        let net = desk_network();
        let text = net.to_toml_string().unwrap();
        let back = NetworkModel::from_toml_str(&text).unwrap();
        assert_eq!(net, back);

        let reversed = r#"
            [[area]]
            name = "X"
            conventional_capacity_mw = 100.0
            wind_nameplate_mw = 0.0
            unit_size_mw = 100.0
            unit_count = 1
            availability = 0.9

            [[area]]
            name = "Y"
            conventional_capacity_mw = 200.0
            wind_nameplate_mw = 0.0
            unit_size_mw = 200.0
            unit_count = 1
            availability = 0.9

            [[line]]
            from = "Y"
            to = "X"
            f_min_mw = -10.0
            f_max_mw = 30.0
        "#;
        let net = NetworkModel::from_toml_str(reversed).unwrap();
        let line = &net.lines()[0];
        assert_eq!((line.from, line.to), (0, 1));
        assert_eq!((line.f_min_mw, line.f_max_mw), (-30.0, 10.0));
    }

    #[test]
    fn desk_network_is_well_formed() {
        let net = desk_network();
        assert_eq!(net.n_areas(), 5);
        assert_eq!(net.lines().len(), 6);
        for a in net.areas() {
            assert!(a.unit_size_mw <= 500.0);
            assert_eq!(
                a.unit_size_mw * a.unit_count as Real,
                a.conventional_capacity_mw
            );
        }
    }
}
