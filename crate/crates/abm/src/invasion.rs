//! Cell invasion on a hexagonal lattice: a three-phase cell cycle with
//! phase-specific movement, simulated exactly with the Gillespie algorithm.

use std::io::{self, Write};
use std::sync::{Arc, OnceLock};

use cellsbi_core::{stats, Prior, SeedStream, SimError, Simulator, SummaryVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

const EMPTY: u32 = u32::MAX;

/// Axial neighbour offsets `(dq, dr)`.
const AXIAL_DIRS: [(i64, i64); 6] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvasionError {
    #[error("invalid invasion configuration: {0}")]
    Config(String),
    #[error("no cells were seeded")]
    NoCells,
}

impl From<InvasionError> for SimError {
    fn from(e: InvasionError) -> Self {
        SimError::Failed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Red,
    Yellow,
    Green,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Red, Phase::Yellow, Phase::Green];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Phase {
        match self {
            Phase::Red => Phase::Yellow,
            Phase::Yellow => Phase::Green,
            Phase::Green => Phase::Red,
        }
    }
}

/// `width x height` sites in odd-row offset layout; neighbours are at unit
/// distance.
#[derive(Debug, Clone, PartialEq)]
pub struct HexLattice {
    pub width: usize,
    pub height: usize,
    occupancy: Vec<u32>,
}

impl HexLattice {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            occupancy: vec![EMPTY; width * height],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.occupancy.len()
    }

    pub fn site(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn col_row(&self, site: usize) -> (usize, usize) {
        (site % self.width, site / self.width)
    }

    pub fn axial(&self, site: usize) -> (i64, i64) {
        let (c, r) = self.col_row(site);
        let r = r as i64;
        (c as i64 - (r - (r & 1)) / 2, r)
    }

    /// Cartesian centre; `x` is the lateral coordinate.
    pub fn position(&self, site: usize) -> [f64; 2] {
        let (c, r) = self.col_row(site);
        [c as f64 + 0.5 * (r & 1) as f64, r as f64 * 3f64.sqrt() / 2.0]
    }

    /// Neighbour in direction `dir` (0..6), if on the lattice.
    pub fn neighbour(&self, site: usize, dir: usize) -> Option<usize> {
        let (q, r) = self.axial(site);
        let (dq, dr) = AXIAL_DIRS[dir];
        let (q2, r2) = (q + dq, r + dr);
        if r2 < 0 || r2 >= self.height as i64 {
            return None;
        }
        let c2 = q2 + (r2 - (r2 & 1)) / 2;
        if c2 < 0 || c2 >= self.width as i64 {
            return None;
        }
        Some(self.site(c2 as usize, r2 as usize))
    }

    pub fn occupant(&self, site: usize) -> Option<usize> {
        let v = self.occupancy[site];
        (v != EMPTY).then_some(v as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub phase: Phase,
    pub site: usize,
    /// Successful moves in the current phase residency.
    pub distance: f64,
    pub phase_entry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Transition {
        time: f64,
        cell: usize,
        to: Phase,
        daughter: Option<usize>,
    },
    Move {
        time: f64,
        cell: usize,
        from: usize,
        to: usize,
    },
    /// Blocked move: time advanced, nothing changed.
    Aborted { time: f64, cell: usize },
}

impl Event {
    pub fn time(&self) -> f64 {
        match *self {
            Event::Transition { time, .. } | Event::Move { time, .. } | Event::Aborted { time, .. } => time,
        }
    }
}

/// Lateral split of the initial monolayer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScratchGeometry {
    /// First scratched column.
    pub lo: usize,
    /// One past the last scratched column.
    pub hi: usize,
}

impl ScratchGeometry {
    /// Lateral coordinate separating the two sides.
    pub fn centre(&self) -> f64 {
        (self.lo + self.hi) as f64 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvasionState {
    pub lattice: HexLattice,
    pub cells: Vec<CellRecord>,
    pub time: f64,
    pub scratch: ScratchGeometry,
    by_phase: [Vec<usize>; 3],
    slot: Vec<usize>,
    /// Distances of finished residencies, per phase.
    finished: [Vec<f64>; 3],
}

impl InvasionState {
    /// State holding `cells` given as `(site, phase)`.
    pub fn from_cells(
        lattice: HexLattice,
        scratch: ScratchGeometry,
        cells: &[(usize, Phase)],
    ) -> Result<Self, InvasionError> {
        let mut s = Self {
            lattice,
            cells: Vec::new(),
            time: 0.0,
            scratch,
            by_phase: Default::default(),
            slot: Vec::new(),
            finished: Default::default(),
        };
        for &(site, phase) in cells {
            if site >= s.lattice.n_sites() || s.lattice.occupancy[site] != EMPTY {
                return Err(InvasionError::Config(format!("site {site} is invalid or already occupied")));
            }
            s.add_cell(site, phase);
        }
        Ok(s)
    }

    fn add_cell(&mut self, site: usize, phase: Phase) -> usize {
        let id = self.cells.len();
        self.lattice.occupancy[site] = id as u32;
        self.cells.push(CellRecord {
            phase,
            site,
            distance: 0.0,
            phase_entry: self.time,
        });
        self.slot.push(self.by_phase[phase.index()].len());
        self.by_phase[phase.index()].push(id);
        id
    }

    fn set_phase(&mut self, id: usize, to: Phase) {
        let from = self.cells[id].phase.index();
        let slot = self.slot[id];
        self.by_phase[from].swap_remove(slot);
        if let Some(&moved) = self.by_phase[from].get(slot) {
            self.slot[moved] = slot;
        }
        self.finished[from].push(self.cells[id].distance);
        let c = &mut self.cells[id];
        c.phase = to;
        c.distance = 0.0;
        c.phase_entry = self.time;
        self.slot[id] = self.by_phase[to.index()].len();
        self.by_phase[to.index()].push(id);
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.by_phase[phase.index()].len()
    }

    /// Each cell sits on its own site and every occupied site names its cell.
    pub fn audit(&self) -> bool {
        let occupied = self.lattice.occupancy.iter().filter(|v| **v != EMPTY).count();
        occupied == self.cells.len()
            && self
                .cells
                .iter()
                .enumerate()
                .all(|(i, c)| self.lattice.occupancy[c.site] == i as u32)
            && Phase::ALL.iter().map(|p| self.count(*p)).sum::<usize>() == self.cells.len()
    }
}

/// Seeds both lateral bands independently with probability `density` and
/// leaves columns `scratch.lo..scratch.hi` empty. Phases are drawn with
/// the given proportions.
pub fn init_scratch<R: Rng>(
    width: usize,
    height: usize,
    density: f64,
    scratch_width: usize,
    proportions: [f64; 3],
    rng: &mut R,
) -> Result<InvasionState, InvasionError> {
    if width == 0 || height == 0 || scratch_width >= width {
        return Err(InvasionError::Config("scratch must be narrower than the lattice".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(InvasionError::Config("density must lie in [0, 1]".into()));
    }
    let total: f64 = proportions.iter().sum();
    if proportions.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
        return Err(InvasionError::Config("phase proportions must be non-negative".into()));
    }
    let lo = (width - scratch_width) / 2;
    let scratch = ScratchGeometry {
        lo,
        hi: lo + scratch_width,
    };
    let lattice = HexLattice::new(width, height);
    let mut cells = Vec::new();
    for site in 0..lattice.n_sites() {
        let (c, _) = lattice.col_row(site);
        if (scratch.lo..scratch.hi).contains(&c) {
            continue;
        }
        if rng.random::<f64>() < density {
            let u = rng.random::<f64>() * total;
            let phase = if u < proportions[0] {
                Phase::Red
            } else if u < proportions[0] + proportions[1] {
                Phase::Yellow
            } else {
                Phase::Green
            };
            cells.push((site, phase));
        }
    }
    if cells.is_empty() {
        return Err(InvasionError::NoCells);
    }
    InvasionState::from_cells(lattice, scratch, &cells)
}

/// `(R_r, R_y, R_g, M_r, M_y, M_g)` per hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvasionParams {
    pub transition: [f64; 3],
    pub movement: [f64; 3],
}

impl InvasionParams {
    pub fn from_theta(theta: &[f64]) -> Result<Self, InvasionError> {
        if theta.len() != 6 || theta.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(InvasionError::Config(format!("expected 6 non-negative rates, got {theta:?}")));
        }
        Ok(Self {
            transition: [theta[0], theta[1], theta[2]],
            movement: [theta[3], theta[4], theta[5]],
        })
    }
}

/// Exact simulation up to `horizon` hours. Events are appended to `log`
/// when given.
pub fn gillespie_run<R: Rng>(
    state: &mut InvasionState,
    params: &InvasionParams,
    horizon: f64,
    rng: &mut R,
    mut log: Option<&mut Vec<Event>>,
) {
    let per_cell: [f64; 3] = std::array::from_fn(|p| params.transition[p] + params.movement[p]);
    loop {
        let weights: [f64; 3] = std::array::from_fn(|p| state.by_phase[p].len() as f64 * per_cell[p]);
        let total = weights[0] + weights[1] + weights[2];
        if !(total > 0.0) {
            break;
        }
        let u: f64 = rng.random();
        let t = state.time - (1.0 - u).ln() / total;
        if t > horizon {
            break;
        }
        state.time = t;
        let mut x = rng.random::<f64>() * total;
        let mut p = 2;
        for (k, w) in weights.iter().enumerate() {
            if x < *w {
                p = k;
                break;
            }
            x -= w;
        }
        if state.by_phase[p].is_empty() {
            // rounding pushed the draw past the last non-empty phase
            p = (0..3).rev().find(|&k| !state.by_phase[k].is_empty()).expect("total > 0");
        }
        let id = state.by_phase[p][rng.random_range(0..state.by_phase[p].len())];
        let is_transition = rng.random::<f64>() * per_cell[p] < params.transition[p];
        let event = if is_transition {
            let to = Phase::ALL[p].next();
            state.set_phase(id, to);
            let mut daughter = None;
            if to == Phase::Red {
                let site = state.cells[id].site;
                let free: Vec<usize> = (0..6)
                    .filter_map(|d| state.lattice.neighbour(site, d))
                    .filter(|s| state.lattice.occupancy[*s] == EMPTY)
                    .collect();
                if !free.is_empty() {
                    let s = free[rng.random_range(0..free.len())];
                    daughter = Some(state.add_cell(s, Phase::Red));
                }
            }
            Event::Transition {
                time: t,
                cell: id,
                to,
                daughter,
            }
        } else {
            let from = state.cells[id].site;
            match state.lattice.neighbour(from, rng.random_range(0..6)) {
                Some(to) if state.lattice.occupancy[to] == EMPTY => {
                    state.lattice.occupancy[from] = EMPTY;
                    state.lattice.occupancy[to] = id as u32;
                    let c = &mut state.cells[id];
                    c.site = to;
                    c.distance += 1.0;
                    Event::Move {
                        time: t,
                        cell: id,
                        from,
                        to,
                    }
                }
                _ => Event::Aborted { time: t, cell: id },
            }
        };
        if let Some(l) = log.as_deref_mut() {
            l.push(event);
        }
    }
    state.time = horizon;
}

/// `(sx_1, sx_2, sx_3)`: cells per phase.
pub fn summarize_counts(state: &InvasionState) -> [f64; 3] {
    std::array::from_fn(|p| state.by_phase[p].len() as f64)
}

/// Counts followed by median and IQR of lateral position for each phase
/// on each side of the scratch centre (15 entries).
pub fn summarize_density(state: &InvasionState) -> Result<Vec<f64>, SimError> {
    let centre = state.scratch.centre();
    let mut out = summarize_counts(state).to_vec();
    for phase in Phase::ALL {
        let xs: Vec<f64> = state.by_phase[phase.index()]
            .iter()
            .map(|&id| state.lattice.position(state.cells[id].site)[0])
            .collect();
        for (side, left) in [("left", true), ("right", false)] {
            let group: Vec<f64> = xs.iter().copied().filter(|x| (*x < centre) == left).collect();
            if group.is_empty() {
                return Err(SimError::Degenerate(format!("no {phase:?} cells on the {side} side")));
            }
            let (med, iqr) = median_iqr(&group);
            out.push(med);
            out.push(iqr);
        }
    }
    Ok(out)
}

/// Median and `Q3 - Q1` under linear interpolation.
pub fn median_iqr(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    (
        stats::quantile_sorted(&v, 0.5),
        stats::quantile_sorted(&v, 0.75) - stats::quantile_sorted(&v, 0.25),
    )
}

/// Counts followed by the mean distance per phase residency, counting
/// residencies still open at the horizon (6 entries).
pub fn summarize_trajectory(state: &InvasionState) -> Result<Vec<f64>, SimError> {
    let mut out = summarize_counts(state).to_vec();
    for phase in Phase::ALL {
        let p = phase.index();
        let open = state.by_phase[p].iter().map(|&id| state.cells[id].distance);
        let all: Vec<f64> = state.finished[p].iter().copied().chain(open).collect();
        if all.is_empty() {
            return Err(SimError::Degenerate(format!("no {phase:?} residency observed")));
        }
        out.push(stats::mean(&all));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryFamily {
    Counts,
    Trajectory,
    Density,
}

impl SummaryFamily {
    pub fn dim(self) -> usize {
        match self {
            SummaryFamily::Counts => 3,
            SummaryFamily::Trajectory => 6,
            SummaryFamily::Density => 15,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SummaryFamily::Counts => "counts",
            SummaryFamily::Trajectory => "trajectory",
            SummaryFamily::Density => "density",
        }
    }

    pub fn summarize(self, state: &InvasionState) -> Result<Vec<f64>, SimError> {
        match self {
            SummaryFamily::Counts => Ok(summarize_counts(state).to_vec()),
            SummaryFamily::Trajectory => summarize_trajectory(state),
            SummaryFamily::Density => summarize_density(state),
        }
    }
}

pub fn write_snapshot_csv<W: Write>(w: &mut W, state: &InvasionState) -> io::Result<()> {
    writeln!(w, "cell_id,phase,axial_q,axial_r")?;
    for (i, c) in state.cells.iter().enumerate() {
        let (q, r) = state.lattice.axial(c.site);
        let phase = match c.phase {
            Phase::Red => "red",
            Phase::Yellow => "yellow",
            Phase::Green => "green",
        };
        writeln!(w, "{i},{phase},{q},{r}")?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: &mut W, family: SummaryFamily, rows: &[Vec<f64>]) -> io::Result<()> {
    let cols: Vec<String> = (0..family.dim()).map(|k| format!("s{k}")).collect();
    writeln!(w, "family,{}", cols.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", family.name(), vals.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvasionConfig {
    pub width: usize,
    pub height: usize,
    pub density: f64,
    /// Scratched columns; a third of the width when unset.
    pub scratch_width: Option<usize>,
    pub proportions: [f64; 3],
    pub horizon: f64,
    pub family: SummaryFamily,
    /// Seed of the shared initial monolayer.
    pub init_seed: u64,
}

impl Default for InvasionConfig {
    fn default() -> Self {
        Self {
            width: 200,
            height: 200,
            density: 0.3,
            scratch_width: None,
            proportions: [1.0 / 3.0; 3],
            horizon: 48.0,
            family: SummaryFamily::Density,
            init_seed: 0,
        }
    }
}

impl InvasionConfig {
    pub fn scratch(&self) -> usize {
        self.scratch_width.unwrap_or(self.width / 3)
    }
}

/// Simulator over `(R_r, R_y, R_g, M_r, M_y, M_g)` from a shared initial
/// monolayer, summarised by the configured family.
pub struct InvasionModel {
    pub config: InvasionConfig,
    prior: Prior,
    initial: OnceLock<Result<Arc<InvasionState>, InvasionError>>,
}

impl InvasionModel {
    pub fn new(config: InvasionConfig) -> Result<Self, InvasionError> {
        if !(config.horizon.is_finite() && config.horizon > 0.0) {
            return Err(InvasionError::Config("horizon must be positive".into()));
        }
        let prior = Prior::uniform_box(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 10.0), (0.0, 10.0), (0.0, 10.0)])
            .map_err(|e| InvasionError::Config(e.to_string()))?;
        let model = Self {
            config,
            prior,
            initial: OnceLock::new(),
        };
        model.initial()?;
        Ok(model)
    }

    pub fn initial(&self) -> Result<Arc<InvasionState>, InvasionError> {
        self.initial
            .get_or_init(|| {
                let c = &self.config;
                let mut rng = SeedStream::new(c.init_seed).rng();
                init_scratch(c.width, c.height, c.density, c.scratch(), c.proportions, &mut rng).map(Arc::new)
            })
            .clone()
    }
}

impl Simulator for InvasionModel {
    type Output = InvasionState;

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn summary_dim(&self) -> usize {
        self.config.family.dim()
    }

    fn simulate(&self, theta: &[f64], seed: SeedStream) -> Result<InvasionState, SimError> {
        if theta.len() != 6 {
            return Err(SimError::ParamDimension {
                expected: 6,
                got: theta.len(),
            });
        }
        let params = InvasionParams::from_theta(theta)?;
        let mut state = (*self.initial()?).clone();
        gillespie_run(&mut state, &params, self.config.horizon, &mut seed.rng(), None);
        Ok(state)
    }

    fn summarize(&self, output: &InvasionState) -> Result<SummaryVector, SimError> {
        let v = self.config.family.summarize(output)?;
        SummaryVector::new(v).map_err(|e| SimError::Failed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> ScratchGeometry {
        ScratchGeometry { lo: 5, hi: 5 }
    }

    #[test]
    fn neighbours_are_at_unit_distance() {
        let l = HexLattice::new(9, 8);
        for site in 0..l.n_sites() {
            let p = l.position(site);
            let mut n = 0;
            for d in 0..6 {
                if let Some(s) = l.neighbour(site, d) {
                    let q = l.position(s);
                    assert!(((p[0] - q[0]).hypot(p[1] - q[1]) - 1.0).abs() < 1e-12);
                    n += 1;
                }
            }
            let (c, r) = l.col_row(site);
            if c > 0 && c < 8 && r > 0 && r < 7 {
                assert_eq!(n, 6);
            }
        }
    }

    #[test]
    fn counts_partition_cells() {
        let l = HexLattice::new(10, 10);
        let empty = InvasionState::from_cells(l.clone(), geom(), &[]).unwrap();
        assert_eq!(summarize_counts(&empty), [0.0, 0.0, 0.0]);
        let reds: Vec<(usize, Phase)> = (0..50).map(|s| (s, Phase::Red)).collect();
        let s = InvasionState::from_cells(l, geom(), &reds).unwrap();
        assert_eq!(summarize_counts(&s), [50.0, 0.0, 0.0]);
        assert!(s.audit());
    }

    #[test]
    fn hand_computed_quartiles() {
        assert_eq!(median_iqr(&[5.0, 1.0, 3.0, 2.0, 4.0]), (3.0, 2.0));
        assert_eq!(median_iqr(&[10.0; 4]), (10.0, 0.0));
    }

    #[test]
    fn residency_distance_counts_moves() {
        let l = HexLattice::new(40, 40);
        let site = l.site(20, 20);
        let mut s = InvasionState::from_cells(l, geom(), &[(site, Phase::Red)]).unwrap();
        s.cells[0].distance = 7.0;
        s.finished[1].push(0.0);
        s.finished[2].push(0.0);
        let t = summarize_trajectory(&s).unwrap();
        assert_eq!(t, vec![1.0, 0.0, 0.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn phase_cycle() {
        assert_eq!(Phase::Red.next(), Phase::Yellow);
        assert_eq!(Phase::Yellow.next(), Phase::Green);
        assert_eq!(Phase::Green.next(), Phase::Red);
    }
}
