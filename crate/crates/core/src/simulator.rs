//! Monte Carlo simulation of the network: PPP base stations with dormant and
//! active modes, Brownian users on a torus window, per-link Gauss–Markov
//! fading, and user-centric reverse association with pilot-response
//! collisions.
//!
//! One step runs: move users, step tracked fading links, association rounds
//! for users whose window has elapsed, power update, measurement of the
//! tagged user, energy accounting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, HoPolicy, HoWindow, Link, Model, PowerParams};
use crate::error::{Error, Result};
use crate::specfun::QuadratureSpec;
use crate::stochastic::{
    sample_fading_at, sample_ppp_with, step_brownian, step_fading, substream, ChannelParams, DeploymentParams,
    FadingState, MobilityParams, Point, SimRng,
};

const STREAM_BS: u64 = 1;
const STREAM_USERS: u64 = 2;
const STREAM_MOTION: u64 = 3;
const STREAM_FADING: u64 = 4;
const STREAM_PROTOCOL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsMode {
    Dormant,
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsRecord {
    pub position: Point,
    pub mode: BsMode,
    pub tx_power: f64,
    pub served_user: Option<usize>,
    /// Energy drawn so far.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRecord {
    pub position: Point,
    pub associated_bs: usize,
    pub last_ho_time: f64,
    /// No association round before this time (set after a failed round).
    pub retry_at: f64,
    /// Fading of every link this user has observed, keyed by BS id.
    pub link_fading: BTreeMap<usize, FadingState>,
}

/// How link fading is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingMode {
    /// Links start from `g(0) = 0` at time zero.
    #[default]
    TimeVarying,
    /// Links start from the stationary law.
    Stationary,
}

impl FadingMode {
    pub fn label(self) -> &'static str {
        match self {
            FadingMode::TimeVarying => "time_varying",
            FadingMode::Stationary => "stationary",
        }
    }
}

/// Protocol variant of a reverse-association round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Every dormant BS in the pilot area compares `EE1*` with `EE0*` and
    /// responds only if a handover raises EE.
    FullComparison,
    /// Dormant BSs in the pilot area respond without comparing; the window
    /// itself carries the MF optimum.
    #[default]
    MfWindow,
}

/// Handover timing and transmit power rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Optimal powers, re-evaluated each step, and the optimal window
    /// (mf-window) or `policy.t_hat` (full comparison).
    Proposed,
    /// Fixed interval and fixed power.
    FixedInterval { t_hat: f64, power: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimParams {
    pub model: Model,
    pub mobility: MobilityParams,
    pub policy: HoPolicy,
    pub quadrature: QuadratureSpec,
    pub schedule: Schedule,
    pub variant: Variant,
    pub fading: FadingMode,
    /// Time-varying fading: closed forms are evaluated on this time grid
    /// (rounded up) instead of at every step.
    pub analysis_step: f64,
    pub record_trace: bool,
}

impl SimParams {
    pub fn new(model: Model, mobility: MobilityParams, policy: HoPolicy) -> Self {
        Self {
            model,
            mobility,
            policy,
            quadrature: QuadratureSpec::default(),
            schedule: Schedule::Proposed,
            variant: Variant::MfWindow,
            fading: FadingMode::TimeVarying,
            analysis_step: 0.25,
            record_trace: false,
        }
    }

    /// Time at which the closed forms are evaluated for simulation clock `clock`.
    pub fn analysis_time(&self, clock: f64) -> f64 {
        match self.fading {
            FadingMode::Stationary => f64::INFINITY,
            FadingMode::TimeVarying => ((clock / self.analysis_step).ceil().max(1.0)) * self.analysis_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.channel.validate()?;
        self.model.deploy.validate()?;
        self.model.power.validate()?;
        self.mobility.validate()?;
        self.policy.validate()?;
        self.quadrature.validate()?;
        if !(self.analysis_step > 0.0) {
            return Err(Error::config("sim.analysis_step", "must be > 0"));
        }
        if let Schedule::FixedInterval { t_hat, power } = self.schedule {
            if !(t_hat > 0.0) {
                return Err(Error::config("baseline.t_hat", format!("must be > 0, got {t_hat}")));
            }
            if !(power > 0.0 && power <= self.model.power.p_max) {
                return Err(Error::config(
                    "baseline.power",
                    format!("must lie in (0, P_max], got {power}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SinrSample {
    pub signal: f64,
    /// Interference from active BSs within reception distance whose received
    /// power exceeds the noise floor.
    pub interference: f64,
    pub noise: f64,
    pub sinr: f64,
    /// Interference from all active BSs within reception distance, with no
    /// noise-floor filter.
    pub interference_unfiltered: f64,
}

// ---------------------------------------------------------------------------
// Spatial index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BsGrid {
    side: f64,
    n: usize,
    cell: f64,
    cells: Vec<Vec<usize>>,
}

impl BsGrid {
    fn new(points: &[Point], side: f64) -> Self {
        let n = ((side / 0.5).floor() as usize).clamp(1, 256);
        let cell = side / n as f64;
        let mut cells = vec![Vec::new(); n * n];
        for (id, p) in points.iter().enumerate() {
            let (ix, iy) = Self::index(*p, cell, n);
            cells[iy * n + ix].push(id);
        }
        Self { side, n, cell, cells }
    }

    fn index(p: Point, cell: f64, n: usize) -> (usize, usize) {
        (((p.x / cell) as usize).min(n - 1), ((p.y / cell) as usize).min(n - 1))
    }

    /// Ids of points that may lie within `r` of `p`, in ascending order.
    fn near(&self, p: Point, r: f64) -> Vec<usize> {
        let k = (r / self.cell).ceil() as usize;
        if 2 * k + 1 >= self.n || 2.0 * r >= self.side {
            return (0..self.cells.iter().map(Vec::len).sum()).collect();
        }
        let (ix, iy) = Self::index(p.wrapped(self.side), self.cell, self.n);
        let mut ids = Vec::new();
        for dy in 0..=2 * k {
            let y = (iy + self.n + dy - k) % self.n;
            for dx in 0..=2 * k {
                let x = (ix + self.n + dx - k) % self.n;
                ids.extend_from_slice(&self.cells[y * self.n + x]);
            }
        }
        ids.sort_unstable();
        ids
    }
}

// ---------------------------------------------------------------------------
// Network state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NetworkState {
    pub clock: f64,
    pub bss: Vec<BsRecord>,
    pub users: Vec<UserRecord>,
    /// User nearest the window centre at time zero; the measured one.
    pub tagged_user: Option<usize>,
    pub fading: FadingMode,
    pub channel: ChannelParams,
    pub power: PowerParams,
    pub window_side: f64,
    /// Cumulative circuit and transmit energy over all BSs.
    pub circuit_energy: f64,
    pub transmit_energy: f64,
    grid: BsGrid,
    rng_motion: SimRng,
    rng_fading: SimRng,
    rng_protocol: SimRng,
}

#[derive(Clone, Copy)]
struct Candidate {
    dist: f64,
    user: usize,
    bs: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Reversed so that `BinaryHeap` pops the closest pair first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.user.cmp(&self.user))
            .then(other.bs.cmp(&self.bs))
    }
}

fn nearest_free(p: Point, bss: &[BsRecord], side: f64) -> Option<(f64, usize)> {
    bss.iter()
        .enumerate()
        .filter(|(_, b)| b.served_user.is_none())
        .map(|(id, b)| (p.torus_distance(b.position, side), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
}

/// Sample BSs and users and associate one-to-one, closest pairs first: every
/// user gets its nearest BS unless a closer user already claimed it.
/// Serving links start in the time-varying fading mode (`g(0) = 0`).
pub fn init_network(
    deploy: &DeploymentParams,
    channel: &ChannelParams,
    power: &PowerParams,
    rng_seed: u64,
) -> Result<NetworkState> {
    init_network_with(deploy, channel, power, FadingMode::TimeVarying, rng_seed)
}

pub fn init_network_with(
    deploy: &DeploymentParams,
    channel: &ChannelParams,
    power: &PowerParams,
    fading: FadingMode,
    rng_seed: u64,
) -> Result<NetworkState> {
    let side = deploy.window_side;
    let bs_points = sample_ppp_with(deploy.lambda_b, side, &mut substream(rng_seed, STREAM_BS));
    if bs_points.is_empty() {
        return Err(Error::DegenerateDeployment(format!(
            "no BS sampled (lambda_b = {}, window side {side})",
            deploy.lambda_b
        )));
    }
    let user_points = sample_ppp_with(deploy.lambda_u, side, &mut substream(rng_seed, STREAM_USERS));
    if user_points.len() > bs_points.len() {
        return Err(Error::DegenerateDeployment(format!(
            "{} users but only {} BSs: one-to-one association impossible",
            user_points.len(),
            bs_points.len()
        )));
    }
    let grid = BsGrid::new(&bs_points, side);
    let mut bss: Vec<BsRecord> = bs_points
        .into_iter()
        .map(|position| BsRecord {
            position,
            mode: BsMode::Dormant,
            tx_power: 0.0,
            served_user: None,
            energy: 0.0,
        })
        .collect();

    let mut assigned = vec![usize::MAX; user_points.len()];
    let mut heap: BinaryHeap<Candidate> = user_points
        .iter()
        .enumerate()
        .filter_map(|(user, p)| nearest_free(*p, &bss, side).map(|(dist, bs)| Candidate { dist, user, bs }))
        .collect();
    while let Some(c) = heap.pop() {
        if bss[c.bs].served_user.is_none() {
            bss[c.bs].served_user = Some(c.user);
            bss[c.bs].mode = BsMode::Active;
            bss[c.bs].tx_power = power.p_max;
            assigned[c.user] = c.bs;
        } else if let Some((dist, bs)) = nearest_free(user_points[c.user], &bss, side) {
            heap.push(Candidate { dist, user: c.user, bs });
        }
    }

    let mut rng_fading = substream(rng_seed, STREAM_FADING);
    let start_t = match fading {
        FadingMode::TimeVarying => 0.0,
        FadingMode::Stationary => f64::INFINITY,
    };
    let users: Vec<UserRecord> = user_points
        .iter()
        .zip(&assigned)
        .map(|(p, &bs)| {
            let mut link_fading = BTreeMap::new();
            let mut f = sample_fading_at(channel, start_t, &mut rng_fading);
            f.t_last = 0.0;
            link_fading.insert(bs, f);
            UserRecord {
                position: *p,
                associated_bs: bs,
                last_ho_time: 0.0,
                retry_at: 0.0,
                link_fading,
            }
        })
        .collect();

    let centre = Point::new(0.5 * side, 0.5 * side);
    let tagged_user = users
        .iter()
        .enumerate()
        .map(|(id, u)| (u.position.torus_distance(centre, side), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id);

    Ok(NetworkState {
        clock: 0.0,
        bss,
        users,
        tagged_user,
        fading,
        channel: *channel,
        power: *power,
        window_side: side,
        circuit_energy: 0.0,
        transmit_energy: 0.0,
        grid,
        rng_motion: substream(rng_seed, STREAM_MOTION),
        rng_fading,
        rng_protocol: substream(rng_seed, STREAM_PROTOCOL),
    })
}

impl NetworkState {
    pub fn active_count(&self) -> usize {
        self.bss.iter().filter(|b| b.mode == BsMode::Active).count()
    }

    pub fn active_fraction(&self) -> f64 {
        self.active_count() as f64 / self.bss.len() as f64
    }

    /// Sum of per-BS energy, which must equal `circuit_energy + transmit_energy`.
    pub fn total_bs_energy(&self) -> f64 {
        self.bss.iter().map(|b| b.energy).sum()
    }

    pub fn serving_distance(&self, user: usize) -> f64 {
        let u = &self.users[user];
        u.position
            .torus_distance(self.bss[u.associated_bs].position, self.window_side)
    }

    /// Fading of link (user, bs), drawn from its marginal law on first use.
    fn link(&mut self, user: usize, bs: usize) -> FadingState {
        let clock = self.clock;
        let t = match self.fading {
            FadingMode::TimeVarying => clock,
            FadingMode::Stationary => f64::INFINITY,
        };
        let channel = self.channel;
        let rng = &mut self.rng_fading;
        *self.users[user].link_fading.entry(bs).or_insert_with(|| {
            let mut f = sample_fading_at(&channel, t, rng);
            f.t_last = clock;
            f
        })
    }

    /// Dormant BSs within `radius` of the user, sorted by distance then id.
    pub fn dormant_within(&self, user: usize, radius: f64) -> Vec<(usize, f64)> {
        let p = self.users[user].position;
        let mut out: Vec<(usize, f64)> = self
            .grid
            .near(p, radius)
            .into_iter()
            .filter(|&id| self.bss[id].mode == BsMode::Dormant)
            .map(|id| (id, p.torus_distance(self.bss[id].position, self.window_side)))
            .filter(|&(_, d)| d <= radius)
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Move the user to `target`: the old BS goes dormant, the new one active.
    fn hand_over(&mut self, user: usize, target: usize, tx_power: f64) {
        let old = self.users[user].associated_bs;
        let b = &mut self.bss[old];
        b.mode = BsMode::Dormant;
        b.served_user = None;
        b.tx_power = 0.0;
        let b = &mut self.bss[target];
        b.mode = BsMode::Active;
        b.served_user = Some(user);
        b.tx_power = tx_power;
        let clock = self.clock;
        let u = &mut self.users[user];
        u.associated_bs = target;
        u.last_ho_time = clock;
        u.retry_at = clock;
        self.link(user, target);
    }

    /// Drop fading state of links no longer observed: every user keeps its
    /// serving link, the tagged user also its links to active BSs. A dropped
    /// link is redrawn from its marginal law when it becomes visible again.
    pub fn forget_invisible_links(&mut self) {
        let tagged = self.tagged_user;
        let bss = &self.bss;
        for (id, u) in self.users.iter_mut().enumerate() {
            let serving = u.associated_bs;
            let keep_active = Some(id) == tagged;
            u.link_fading
                .retain(|&bs, _| bs == serving || (keep_active && bss[bs].mode == BsMode::Active));
        }
    }

    fn account_energy(&mut self, dt: f64) {
        let p_c = self.power.p_c;
        for b in &mut self.bss {
            let tx = if b.mode == BsMode::Active { b.tx_power } else { 0.0 };
            b.energy += (p_c + tx) * dt;
            self.circuit_energy += p_c * dt;
            self.transmit_energy += tx * dt;
        }
    }
}

/// Step every user by Brownian motion (wrapped on the torus) and every
/// tracked link by Euler–Maruyama; advance the clock.
pub fn advance(state: &mut NetworkState, dt: f64, mobility: &MobilityParams) {
    let mob = MobilityParams { dt, ..*mobility };
    let side = state.window_side;
    for u in &mut state.users {
        u.position = step_brownian(u.position, &mob, &mut state.rng_motion).wrapped(side);
    }
    let channel = state.channel;
    for u in &mut state.users {
        for f in u.link_fading.values_mut() {
            *f = step_fading(*f, &channel, dt, &mut state.rng_fading);
        }
    }
    state.clock += dt;
}

/// SINR of `user` on its serving link. Interferers are the other active BSs
/// within reception distance, each with a sectorised gain `2 pi / N`
/// relative to the beamformed serving link.
pub fn measure_sinr(state: &mut NetworkState, user: usize) -> Result<SinrSample> {
    if user >= state.users.len() {
        return Err(Error::Protocol(format!("user {user} does not exist")));
    }
    let serving = state.users[user].associated_bs;
    if state.bss[serving].served_user != Some(user) {
        return Err(Error::Protocol(format!("user {user} has no association")));
    }
    let ch = state.channel;
    let gain = |d: f64| d.powf(-ch.alpha).min(1.0);
    let pos = state.users[user].position;
    let side = state.window_side;

    let d0 = pos.torus_distance(state.bss[serving].position, side);
    let g0 = state.link(user, serving).power();
    let signal = state.bss[serving].tx_power * ch.antennas as f64 * gain(d0) * g0;

    let mut interference = 0.0;
    let mut unfiltered = 0.0;
    for id in 0..state.bss.len() {
        let b = &state.bss[id];
        if id == serving || b.mode != BsMode::Active {
            continue;
        }
        let d = pos.torus_distance(b.position, side);
        if d > ch.reception_radius {
            continue;
        }
        let p = b.tx_power;
        let rx = p * gain(d) * state.link(user, id).power();
        unfiltered += rx;
        if rx > ch.noise_power {
            interference += rx;
        }
    }
    let noise = ch.noise_power;
    Ok(SinrSample {
        signal,
        interference,
        noise,
        sinr: signal / (interference + noise),
        interference_unfiltered: unfiltered,
    })
}

// ---------------------------------------------------------------------------
// Closed-form values used by the protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticPoint {
    pub t: f64,
    pub c1: f64,
    pub p1_star: f64,
    pub ee1_star: f64,
    pub window: HoWindow,
    pub pilot_radius: f64,
}

const SOLVER_MAX_ITER: usize = 1_000_000;

/// Memoised closed forms keyed by analysis time (and elapsed time for `P0*`).
/// Valid for one set of model, mobility and policy parameters.
#[derive(Debug, Clone)]
pub struct AnalyticCache {
    model: Model,
    /// `model` with a raised iteration cap: long elapsed times drive the
    /// power map's slope towards one, where plain iteration is slow.
    solver: Model,
    mobility: MobilityParams,
    policy: HoPolicy,
    quadrature: QuadratureSpec,
    points: HashMap<u64, AnalyticPoint>,
    p0: HashMap<(u64, u64), f64>,
}

impl AnalyticCache {
    pub fn new(params: &SimParams) -> Self {
        let mut solver = params.model;
        solver.options.fixed_point_max_iter = solver.options.fixed_point_max_iter.max(SOLVER_MAX_ITER);
        Self {
            model: params.model,
            solver,
            mobility: params.mobility,
            policy: params.policy,
            quadrature: params.quadrature,
            points: HashMap::new(),
            p0: HashMap::new(),
        }
    }

    fn matches(&self, params: &SimParams) -> bool {
        self.model == params.model
            && self.mobility == params.mobility
            && self.policy == params.policy
            && self.quadrature == params.quadrature
    }

    pub fn point(&mut self, t: f64) -> Result<AnalyticPoint> {
        if let Some(p) = self.points.get(&t.to_bits()) {
            return Ok(*p);
        }
        let m = &self.solver;
        let c1 = m.c1(t, &self.quadrature)?;
        let p1_star = analytics::optimal_p1(m, t, c1)?;
        let point = AnalyticPoint {
            t,
            c1,
            p1_star,
            ee1_star: analytics::ee1(m, p1_star, t, c1)?,
            window: analytics::optimal_ho_window(m, &self.mobility, &self.policy, t, c1)?,
            pilot_radius: analytics::pilot_radius(&m.channel, t)?,
        };
        self.points.insert(t.to_bits(), point);
        Ok(point)
    }

    pub fn p0_star(&mut self, t: f64, elapsed: f64) -> Result<f64> {
        let key = (t.to_bits(), (elapsed * 1e9).round() as u64);
        if let Some(p) = self.p0.get(&key) {
            return Ok(*p);
        }
        let c1 = self.point(t)?.c1;
        let p = analytics::power_fixed_point(
            &self.solver,
            Link::Retain {
                v: self.mobility.v,
                elapsed,
            },
            t,
            c1,
            self.solver.power.p_max,
            self.solver.options.fixed_point_tol,
            self.solver.options.fixed_point_max_iter,
        )?
        .power;
        self.p0.insert(key, p);
        Ok(p)
    }

    /// `EE0` at the optimal serving power `elapsed` after the handover.
    pub fn ee0_star(&mut self, t: f64, elapsed: f64) -> Result<f64> {
        let p = self.p0_star(t, elapsed)?;
        let c1 = self.point(t)?.c1;
        analytics::ee0(&self.model, &self.mobility, p, t, elapsed, c1)
    }
}

// ---------------------------------------------------------------------------
// Reverse association
// ---------------------------------------------------------------------------

/// Each responder picks one of `blocks` resource blocks uniformly; a
/// response survives iff no other responder picked the same block.
pub fn resolve_pilot_collisions<R: Rng + ?Sized>(responders: usize, blocks: u32, rng: &mut R) -> Vec<bool> {
    let picks: Vec<u32> = (0..responders).map(|_| rng.random_range(0..blocks)).collect();
    let mut count = vec![0usize; blocks as usize];
    for &b in &picks {
        count[b as usize] += 1;
    }
    picks.iter().map(|&b| count[b as usize] == 1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoOutcome {
    Handover {
        from: usize,
        to: usize,
        distance: f64,
    },
    /// Responses were sent but all collided.
    Collided,
    /// Candidates exist but none found a handover worthwhile.
    NoResponse,
    /// No dormant BS in the pilot area.
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoDecision {
    pub time: f64,
    pub user: usize,
    pub pilot_radius: f64,
    pub candidates: usize,
    pub responders: usize,
    pub survivors: usize,
    pub outcome: HoOutcome,
}

/// Window the user waits after a handover before the next pilot.
pub fn ho_interval(params: &SimParams, cache: &mut AnalyticCache, t: f64) -> Result<f64> {
    Ok(match (params.schedule, params.variant) {
        (Schedule::FixedInterval { t_hat, .. }, _) => t_hat,
        (Schedule::Proposed, Variant::MfWindow) => cache.point(t)?.window.t_hat_star,
        (Schedule::Proposed, Variant::FullComparison) => params.policy.t_hat,
    })
}

pub fn round_due(state: &NetworkState, user: usize, interval: f64) -> bool {
    const SLACK: f64 = 1e-9;
    let u = &state.users[user];
    state.clock - u.last_ho_time >= interval - SLACK && state.clock >= u.retry_at - SLACK
}

/// One pilot broadcast by `user`. On failure the user keeps its BS and
/// retries after the retransmission time.
pub fn reverse_association_round(
    state: &mut NetworkState,
    user: usize,
    params: &SimParams,
    cache: &mut AnalyticCache,
) -> Result<HoDecision> {
    if !cache.matches(params) {
        return Err(Error::Protocol("analytic cache built for different parameters".into()));
    }
    let t = params.analysis_time(state.clock);
    let point = cache.point(t)?;
    let radius = point.pilot_radius;
    let candidates = state.dormant_within(user, radius);
    let elapsed = state.clock - state.users[user].last_ho_time;

    let respond = match params.variant {
        Variant::MfWindow => true,
        Variant::FullComparison => elapsed > 0.0 && point.ee1_star > cache.ee0_star(t, elapsed)?,
    };
    let responders = if respond { candidates.len() } else { 0 };
    let survive = resolve_pilot_collisions(responders, params.model.channel.pilot_blocks, &mut state.rng_protocol);
    let survivors = survive.iter().filter(|s| **s).count();
    let mut decision = HoDecision {
        time: state.clock,
        user,
        pilot_radius: radius,
        candidates: candidates.len(),
        responders,
        survivors,
        outcome: if candidates.is_empty() {
            HoOutcome::NoCandidates
        } else if responders == 0 {
            HoOutcome::NoResponse
        } else {
            HoOutcome::Collided
        },
    };
    // Candidates are sorted by distance, so the first survivor is the nearest.
    if let Some(i) = survive.iter().position(|s| *s) {
        let (target, distance) = candidates[i];
        let from = state.users[user].associated_bs;
        let p = match params.schedule {
            Schedule::Proposed => point.p1_star,
            Schedule::FixedInterval { power, .. } => power,
        };
        state.hand_over(user, target, p);
        decision.outcome = HoOutcome::Handover {
            from,
            to: target,
            distance,
        };
    } else {
        state.users[user].retry_at = state.clock + params.model.channel.retx_time;
    }
    Ok(decision)
}

fn update_powers(state: &mut NetworkState, params: &SimParams, cache: &mut AnalyticCache) -> Result<()> {
    let t = params.analysis_time(state.clock);
    for id in 0..state.bss.len() {
        let Some(user) = state.bss[id].served_user else {
            continue;
        };
        let p = match params.schedule {
            Schedule::FixedInterval { power, .. } => power,
            Schedule::Proposed => {
                let elapsed = state.clock - state.users[user].last_ho_time;
                if elapsed <= 0.0 {
                    cache.point(t)?.p1_star
                } else {
                    cache.p0_star(t, elapsed)?
                }
            }
        };
        state.bss[id].tx_power = p;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeStep {
    pub time: f64,
    pub sinr: SinrSample,
    pub serving_bs: usize,
    pub serving_distance: f64,
    pub tx_power: f64,
    /// `ln(1 + SINR) / (P_c + p)` at the tagged BS.
    pub ee_a: f64,
    /// Time average of `ee_a` up to this step.
    pub long_term_ee_a: f64,
    /// Closed-form `EE_a` at the same power and elapsed time (`None` right after a handover).
    pub analytic_ee_a: Option<f64>,
    /// Unfiltered interference over the antenna count.
    pub normalized_interference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub seed: u64,
    pub tagged_user: usize,
    pub steps: Vec<EpisodeStep>,
    /// Recorded only with `record_trace`.
    pub decisions: Vec<HoDecision>,
    pub handovers: usize,
    pub failed_rounds: usize,
    pub long_term_ee_a: f64,
    pub mean_normalized_interference: f64,
    pub circuit_energy: f64,
    pub transmit_energy: f64,
}

pub fn run_episode(params: &SimParams, horizon: f64, rng_seed: u64) -> Result<Episode> {
    let mut cache = AnalyticCache::new(params);
    run_episode_cached(params, horizon, rng_seed, &mut cache)
}

/// As [`run_episode`], reusing closed forms across episodes with the same parameters.
pub fn run_episode_cached(
    params: &SimParams,
    horizon: f64,
    rng_seed: u64,
    cache: &mut AnalyticCache,
) -> Result<Episode> {
    params.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::domain(
            "run_episode",
            format!("horizon must be finite and >= 0, got {horizon}"),
        ));
    }
    let m = &params.model;
    let mut state = init_network_with(&m.deploy, &m.channel, &m.power, params.fading, rng_seed)?;
    let tagged = state
        .tagged_user
        .ok_or_else(|| Error::DegenerateDeployment("no user to measure".into()))?;
    let dt = params.mobility.dt;
    let n_steps = (horizon / dt + 1e-9).floor() as usize;

    let mut episode = Episode {
        seed: rng_seed,
        tagged_user: tagged,
        steps: Vec::with_capacity(n_steps),
        decisions: Vec::new(),
        handovers: 0,
        failed_rounds: 0,
        long_term_ee_a: 0.0,
        mean_normalized_interference: 0.0,
        circuit_energy: 0.0,
        transmit_energy: 0.0,
    };
    let mut ee_sum = 0.0;
    let mut ni_sum = 0.0;
    for k in 1..=n_steps {
        advance(&mut state, dt, &params.mobility);
        state.clock = k as f64 * dt;
        let t = params.analysis_time(state.clock);
        let interval = ho_interval(params, cache, t)?;
        for user in 0..state.users.len() {
            if !round_due(&state, user, interval) {
                continue;
            }
            let d = reverse_association_round(&mut state, user, params, cache)?;
            match d.outcome {
                HoOutcome::Handover { .. } => episode.handovers += 1,
                _ => episode.failed_rounds += 1,
            }
            if params.record_trace {
                episode.decisions.push(d);
            }
        }
        update_powers(&mut state, params, cache)?;
        state.forget_invisible_links();

        let sinr = measure_sinr(&mut state, tagged)?;
        let bs = state.users[tagged].associated_bs;
        let p = state.bss[bs].tx_power;
        let ee_a = (1.0 + sinr.sinr).ln() / (m.power.p_c + p);
        let elapsed = state.clock - state.users[tagged].last_ho_time;
        let analytic_ee_a = if elapsed > 0.0 {
            let c1 = cache.point(t)?.c1;
            let e0 = analytics::ee0(m, &params.mobility, p, t, elapsed, c1)?;
            Some(analytics::ee_active(e0, p, &m.power))
        } else {
            None
        };
        ee_sum += ee_a;
        let ni = sinr.interference_unfiltered / m.channel.antennas as f64;
        ni_sum += ni;
        episode.steps.push(EpisodeStep {
            time: state.clock,
            sinr,
            serving_bs: bs,
            serving_distance: state.serving_distance(tagged),
            tx_power: p,
            ee_a,
            long_term_ee_a: ee_sum / k as f64,
            analytic_ee_a,
            normalized_interference: ni,
        });
        state.account_energy(dt);
    }
    if n_steps > 0 {
        episode.long_term_ee_a = ee_sum / n_steps as f64;
        episode.mean_normalized_interference = ni_sum / n_steps as f64;
    }
    episode.circuit_energy = state.circuit_energy;
    episode.transmit_energy = state.transmit_energy;
    Ok(episode)
}

// ---------------------------------------------------------------------------
// Pilot congestion experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CongestionEstimate {
    pub trials: usize,
    pub responders: usize,
    pub survivors: usize,
    /// Survivors per responder.
    pub frequency: f64,
    /// Standard error of `frequency` (ratio estimator).
    pub std_error: f64,
    /// `exp(-lambda_b A / N_p)`.
    pub expected: f64,
}

/// Repeated pilot rounds with fresh PPP responders in the pilot disc at time `t`.
pub fn congestion_trial(model: &Model, t: f64, trials: usize, rng_seed: u64) -> Result<CongestionEstimate> {
    if trials < 2 {
        return Err(Error::domain("congestion_trial", "need at least two trials"));
    }
    let r = analytics::pilot_radius(&model.channel, t)?;
    let expected = analytics::response_success_probability(model, t)?;
    let mut rng = substream(rng_seed, STREAM_PROTOCOL);
    let centre = Point::new(r, r);
    let mut per_trial = Vec::with_capacity(trials);
    for _ in 0..trials {
        let n = sample_ppp_with(model.deploy.lambda_b, 2.0 * r, &mut rng)
            .into_iter()
            .filter(|p| (p.x - centre.x).hypot(p.y - centre.y) <= r)
            .count();
        let s = resolve_pilot_collisions(n, model.channel.pilot_blocks, &mut rng)
            .into_iter()
            .filter(|s| *s)
            .count();
        per_trial.push((n, s));
    }
    let responders: usize = per_trial.iter().map(|x| x.0).sum();
    let survivors: usize = per_trial.iter().map(|x| x.1).sum();
    if responders == 0 {
        return Err(Error::domain("congestion_trial", "no responder in any trial"));
    }
    let f = survivors as f64 / responders as f64;
    let m = trials as f64;
    let mean_n = responders as f64 / m;
    let resid: f64 = per_trial
        .iter()
        .map(|&(n, s)| {
            let e = s as f64 - f * n as f64;
            e * e
        })
        .sum();
    Ok(CongestionEstimate {
        trials,
        responders,
        survivors,
        frequency: f,
        std_error: (resid / (m * (m - 1.0))).sqrt() / mean_n,
        expected,
    })
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub time: f64,
    pub user: usize,
    pub bs: Option<usize>,
    pub event: &'static str,
    pub sinr: Option<f64>,
    pub ee_a: Option<f64>,
    pub long_term_ee_a: Option<f64>,
}

/// Line-delimited JSON: association rounds (when recorded) and the tagged
/// user's measurements, in time order.
pub fn write_trace<W: Write>(episode: &Episode, mut out: W) -> Result<()> {
    let mut records: Vec<TraceRecord> = episode
        .decisions
        .iter()
        .map(|d| {
            let (event, bs) = match d.outcome {
                HoOutcome::Handover { to, .. } => ("handover", Some(to)),
                HoOutcome::Collided => ("collided", None),
                HoOutcome::NoResponse => ("no_response", None),
                HoOutcome::NoCandidates => ("no_candidates", None),
            };
            TraceRecord {
                time: d.time,
                user: d.user,
                bs,
                event,
                sinr: None,
                ee_a: None,
                long_term_ee_a: None,
            }
        })
        .collect();
    records.extend(episode.steps.iter().map(|s| TraceRecord {
        time: s.time,
        user: episode.tagged_user,
        bs: Some(s.serving_bs),
        event: "measure",
        sinr: Some(s.sinr.sinr),
        ee_a: Some(s.ee_a),
        long_term_ee_a: Some(s.long_term_ee_a),
    }));
    records.sort_by(|a, b| a.time.total_cmp(&b.time));
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
