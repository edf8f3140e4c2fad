//! Planning and execution of grouped diffusion tasks across simulated
//! devices.
//!
//! A cluster assignment plus an architecture turns into a `TaskPlan`: one
//! shared phase per group on a chosen executor, then per-member local phases
//! behind (possibly lossy) links. Execution charges a latency/energy ledger,
//! reuses cached shared-phase outputs, and can lengthen the shared phase
//! when a fade timeline predicts a bad channel at handoff time.
//!
//! Everything is deterministic given the master seed: shared phases draw
//! from streams indexed by the shared-condition and schedule fingerprints
//! (which is exactly what makes the cache sound), and each member's local
//! and channel streams are indexed by a hash of its user id.

use crate::channel::{
    dequantize, quantize, transmit, wire_bits_for, ChannelModel, QuantizationSpec,
};
use crate::diffusion::{
    init_latent, run_segment, Condition, Latent, MixtureModel, NoiseSchedule, StreamIndices,
};
use crate::error::{Error, Result};
use crate::rng::{labels, RngStreams};
use crate::semantic::{shared_condition, ClusterAssignment, SharedPolicy};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Edge,
    User,
}

/// Transmit power class, mapped onto a multiplicative SNR scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerClass {
    Low,
    #[default]
    Medium,
    High,
}

impl PowerClass {
    pub fn snr_scale(&self) -> f64 {
        match self {
            PowerClass::Low => 0.5,
            PowerClass::Medium => 1.0,
            PowerClass::High => 2.0,
        }
    }
}

/// Compute and link capabilities of one simulated device.
#[derive(Debug, Clone)]
pub struct DeviceProfile {
    pub id: String,
    pub role: Role,
    /// Denoising steps per second.
    pub compute_rate: f64,
    /// Joules per denoising step.
    pub energy_per_step: f64,
    pub power_class: PowerClass,
    pub uplink_hz: f64,
    pub downlink_hz: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.compute_rate > 0.0) || !(self.energy_per_step > 0.0) {
            return Err(Error::domain(format!(
                "device {:?} needs positive compute rate and energy per step",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// An edge server runs every shared phase and fans out to user devices.
    EdgeToMulti,
    /// Exactly two user devices; the faster one runs the shared phase.
    DeviceToDevice,
    /// Per-group executor chosen among members (and the edge, if present).
    Cluster { with_edge: bool },
}

/// Planning inputs that do not vary per group.
#[derive(Debug, Clone)]
pub struct PlanParams {
    pub architecture: Architecture,
    pub total_steps: usize,
    pub shared_steps: usize,
    pub policy: SharedPolicy,
    /// Weight of non-leading prompt concepts in sampling conditions.
    pub context_weight: f64,
    /// None models a lossless handoff with no codec in the path.
    pub link: Option<ChannelModel>,
}

/// One user's slice of a group plan.
#[derive(Debug, Clone)]
pub struct MemberPlan {
    pub user: String,
    pub local_steps: usize,
    pub local_condition: Condition,
    /// Concept this member's output is judged against.
    pub target_concept: String,
    /// None when the member holds the handoff locally or the link is ideal.
    pub link: Option<ChannelModel>,
}

#[derive(Debug, Clone)]
pub struct GroupPlan {
    pub executor: String,
    pub shared_steps: usize,
    pub shared_condition: Condition,
    pub members: Vec<MemberPlan>,
}

#[derive(Debug, Clone)]
pub struct TaskPlan {
    pub total_steps: usize,
    pub groups: Vec<GroupPlan>,
}

fn profile<'a>(profiles: &'a [DeviceProfile], id: &str) -> Result<&'a DeviceProfile> {
    profiles
        .iter()
        .find(|p| p.id == id)
        .ok_or_else(|| Error::domain(format!("no device profile for {id:?}")))
}

/// Pick by highest compute rate; `edge_wins_ties` prefers an edge among the
/// tied, otherwise the smallest id wins.
fn select_executor<'a>(
    candidates: impl Iterator<Item = &'a DeviceProfile>,
    edge_wins_ties: bool,
) -> Option<&'a DeviceProfile> {
    let mut best: Option<&DeviceProfile> = None;
    for c in candidates {
        best = Some(match best {
            None => c,
            Some(b) => {
                if c.compute_rate > b.compute_rate {
                    c
                } else if c.compute_rate == b.compute_rate {
                    let c_pref = edge_wins_ties && c.role == Role::Edge;
                    let b_pref = edge_wins_ties && b.role == Role::Edge;
                    match (c_pref, b_pref) {
                        (true, false) => c,
                        (false, true) => b,
                        _ => {
                            if c.id < b.id {
                                c
                            } else {
                                b
                            }
                        }
                    }
                } else {
                    b
                }
            }
        });
    }
    best
}

/// Turn a cluster assignment into an executable plan.
pub fn plan(
    params: &PlanParams,
    assignment: &ClusterAssignment,
    profiles: &[DeviceProfile],
    mixture: &MixtureModel,
) -> Result<TaskPlan> {
    if params.shared_steps > params.total_steps {
        return Err(Error::domain(format!(
            "shared steps {} exceed chain length {}",
            params.shared_steps, params.total_steps
        )));
    }
    for p in profiles {
        p.validate()?;
    }
    if let Some(link) = &params.link {
        link.validate()?;
    }
    let user_count: usize = assignment.groups.iter().map(|g| g.members.len()).sum();
    let edges: Vec<&DeviceProfile> = profiles.iter().filter(|p| p.role == Role::Edge).collect();
    match params.architecture {
        Architecture::DeviceToDevice if user_count != 2 => {
            return Err(Error::domain(format!(
                "device-to-device needs exactly 2 users, got {user_count}"
            )));
        }
        Architecture::EdgeToMulti if edges.is_empty() => {
            return Err(Error::domain("edge-to-multi needs an edge device"));
        }
        _ => {}
    }

    let mut groups = Vec::new();
    for grp in &assignment.groups {
        let member_profiles: Vec<&DeviceProfile> = grp
            .members
            .iter()
            .map(|m| profile(profiles, &m.user))
            .collect::<Result<_>>()?;
        let executor = match params.architecture {
            Architecture::EdgeToMulti => {
                select_executor(edges.iter().copied(), true).expect("validated above")
            }
            Architecture::DeviceToDevice => select_executor(member_profiles.iter().copied(), false)
                .ok_or_else(|| Error::domain("empty group"))?,
            Architecture::Cluster { with_edge } => {
                let candidates = member_profiles
                    .iter()
                    .copied()
                    .chain(edges.iter().copied().filter(|_| with_edge));
                select_executor(candidates, with_edge)
                    .ok_or_else(|| Error::domain("empty group"))?
            }
        };
        let shared =
            shared_condition(grp, params.policy, params.context_weight)?.restrict_to(mixture)?;
        let mut members = Vec::new();
        for (m, dev) in grp.members.iter().zip(&member_profiles) {
            let local_condition = m.condition(params.context_weight)?.restrict_to(mixture)?;
            let target_concept = m
                .concepts
                .iter()
                .find(|c| mixture.has_concept(c))
                .cloned()
                .ok_or_else(|| {
                    Error::domain(format!("user {:?} has no prototype-backed concept", m.user))
                })?;
            let link = if dev.id == executor.id {
                None // executor keeps its own handoff
            } else {
                params.link.map(|l| scale_link(l, dev.power_class))
            };
            members.push(MemberPlan {
                user: m.user.clone(),
                local_steps: params.total_steps - params.shared_steps,
                local_condition,
                target_concept,
                link,
            });
        }
        groups.push(GroupPlan {
            executor: executor.id.clone(),
            shared_steps: params.shared_steps,
            shared_condition: shared,
            members,
        });
    }
    Ok(TaskPlan {
        total_steps: params.total_steps,
        groups,
    })
}

fn scale_link(link: ChannelModel, class: PowerClass) -> ChannelModel {
    match link {
        ChannelModel::FixedBer { p } => ChannelModel::FixedBer { p },
        ChannelModel::AwgnBpsk { snr } => ChannelModel::AwgnBpsk {
            snr: snr * class.snr_scale(),
        },
        ChannelModel::RayleighBpsk { snr } => ChannelModel::RayleighBpsk {
            snr: snr * class.snr_scale(),
        },
    }
}

/// Stream index shared-phase draws are filed under. It depends on exactly
/// the cache-key ingredients that determine the shared output, so a cache
/// hit is bit-identical to recomputation no matter which group asks.
pub fn shared_stream_index(condition: &Condition, schedule: &NoiseSchedule) -> u64 {
    let mut h = Sha256::new();
    h.update(condition.fingerprint().to_le_bytes());
    h.update(schedule.fingerprint().to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// The stream indices a member's monolithic-equivalent run would use.
pub fn member_stream_indices(
    shared_cond: &Condition,
    schedule: &NoiseSchedule,
    user: &str,
) -> StreamIndices {
    let shared = shared_stream_index(shared_cond, schedule);
    StreamIndices {
        init: shared,
        shared,
        local: RngStreams::index_for(user),
        channel: RngStreams::index_for(user),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub condition_fp: u64,
    pub shared_steps: usize,
    pub schedule_fp: u64,
    pub master_seed: u64,
}

struct CacheEntry {
    key: CacheKey,
    latent: Latent,
}

/// Shared-phase output cache. The key captures everything the shared phase
/// depends on, so hits are bit-identical to recomputation. Access is
/// serialized; groups may probe it concurrently.
#[derive(Default)]
pub struct SharedCache {
    entries: Mutex<HashMap<CacheKey, CacheEntry>>,
}

impl SharedCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, key: &CacheKey) -> Result<Option<Latent>> {
        let entries = self.entries.lock().unwrap();
        match entries.get(key) {
            None => Ok(None),
            Some(entry) => {
                if entry.key != *key {
                    return Err(Error::CacheIntegrity(format!(
                        "entry filed under {key:?} carries {:?}",
                        entry.key
                    )));
                }
                Ok(Some(entry.latent.clone()))
            }
        }
    }

    pub fn store(&self, key: CacheKey, latent: Latent) {
        self.entries
            .lock()
            .unwrap()
            .insert(key, CacheEntry { key, latent });
    }

    #[cfg(test)]
    fn corrupt(&self, key: CacheKey, stored_as: CacheKey, latent: Latent) {
        self.entries.lock().unwrap().insert(
            key,
            CacheEntry {
                key: stored_as,
                latent,
            },
        );
    }
}

/// Per-device share of a run's cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCost {
    pub device: String,
    pub compute_steps: u64,
    pub compute_latency_s: f64,
    pub transmit_latency_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCost {
    pub shared_latency_s: f64,
    /// Shared latency plus the slowest member's transmit + local time.
    pub end_to_end_latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostReport {
    pub devices: Vec<DeviceCost>,
    pub groups: Vec<GroupCost>,
    pub total_energy_j: f64,
}

impl CostReport {
    fn device_mut(&mut self, id: &str) -> &mut DeviceCost {
        if let Some(pos) = self.devices.iter().position(|d| d.device == id) {
            return &mut self.devices[pos];
        }
        self.devices.push(DeviceCost {
            device: id.to_string(),
            compute_steps: 0,
            compute_latency_s: 0.0,
            transmit_latency_s: 0.0,
            energy_j: 0.0,
        });
        self.devices.last_mut().unwrap()
    }

    pub fn device(&self, id: &str) -> Option<&DeviceCost> {
        self.devices.iter().find(|d| d.device == id)
    }
}

/// Shannon-capacity link rate in bits/s; SNR-free links fall back to the
/// configured fixed rate.
fn link_rate(link: &Option<ChannelModel>, bandwidth_hz: f64, fixed_rate_bps: f64) -> Result<f64> {
    match link.as_ref().and_then(|l| l.snr()) {
        Some(snr) => {
            if !(bandwidth_hz > 0.0) {
                return Err(Error::domain(
                    "SNR-bearing link needs a positive bandwidth".to_string(),
                ));
            }
            Ok(bandwidth_hz * (1.0 + snr).log2())
        }
        None => Ok(fixed_rate_bps),
    }
}

/// Cost model parameters that sit outside device profiles.
#[derive(Debug, Clone, Copy)]
pub struct CostParams {
    /// Payload size of one serialized handoff, in bits.
    pub payload_bits: u64,
    /// Rate assumed for links without an SNR (fixed-BER, lossless).
    pub fixed_rate_bps: f64,
}

/// Planned cost of a run: compute latency = steps / rate, energy = steps x
/// energy-per-step, transmit latency = payload / Shannon rate. Charges the
/// full shared phase per group (no cache).
pub fn cost(
    plan: &TaskPlan,
    profiles: &[DeviceProfile],
    params: &CostParams,
) -> Result<CostReport> {
    charged_cost(plan, profiles, params, None)
}

fn charged_cost(
    plan: &TaskPlan,
    profiles: &[DeviceProfile],
    params: &CostParams,
    charged_shared: Option<&[u64]>,
) -> Result<CostReport> {
    let mut report = CostReport::default();
    for (gi, group) in plan.groups.iter().enumerate() {
        let exec = profile(profiles, &group.executor)?;
        let shared_steps = charged_shared
            .map(|c| c[gi])
            .unwrap_or(group.shared_steps as u64);
        let shared_latency = shared_steps as f64 / exec.compute_rate;
        {
            let e = report.device_mut(&exec.id);
            e.compute_steps += shared_steps;
            e.compute_latency_s += shared_latency;
            e.energy_j += shared_steps as f64 * exec.energy_per_step;
        }
        let mut worst = 0.0f64;
        for m in &group.members {
            let dev = profile(profiles, &m.user)?;
            let tx = if m.link.is_some() {
                params.payload_bits as f64
                    / link_rate(&m.link, dev.downlink_hz, params.fixed_rate_bps)?
            } else {
                0.0
            };
            let local_latency = m.local_steps as f64 / dev.compute_rate;
            let e = report.device_mut(&dev.id);
            e.compute_steps += m.local_steps as u64;
            e.compute_latency_s += local_latency;
            e.transmit_latency_s += tx;
            e.energy_j += m.local_steps as f64 * dev.energy_per_step;
            worst = worst.max(tx + local_latency);
        }
        report.groups.push(GroupCost {
            shared_latency_s: shared_latency,
            end_to_end_latency_s: shared_latency + worst,
        });
    }
    report.total_energy_j = report.devices.iter().map(|d| d.energy_j).sum();
    Ok(report)
}

/// What one member produced.
#[derive(Debug, Clone)]
pub struct UserOutcome {
    pub user: String,
    pub group: usize,
    pub target_concept: String,
    /// The latent the member's local phase started from.
    pub received: Latent,
    pub final_latent: Latent,
    pub flipped_bits: u64,
}

#[derive(Debug, Clone)]
pub struct GroupOutcome {
    pub executor: String,
    pub handoff: Latent,
    pub cache_hit: bool,
    pub charged_shared_steps: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub users: Vec<UserOutcome>,
    pub groups: Vec<GroupOutcome>,
    pub cost: CostReport,
}

/// Everything `execute` needs besides the plan and streams.
pub struct ExecutionContext<'a> {
    pub mixture: &'a MixtureModel,
    pub schedule: &'a NoiseSchedule,
    pub profiles: &'a [DeviceProfile],
    pub quant: QuantizationSpec,
    pub fixed_rate_bps: f64,
}

/// Run every group of a plan: shared phase (through the cache when one is
/// given), per-member transmission, per-member local phases, and the cost
/// ledger with actually-charged shared steps.
pub fn execute(
    plan: &TaskPlan,
    ctx: &ExecutionContext,
    streams: &RngStreams,
    cache: Option<&SharedCache>,
) -> Result<RunResult> {
    if plan.total_steps != ctx.schedule.total_steps() {
        return Err(Error::domain(format!(
            "plan is for {} steps, schedule has {}",
            plan.total_steps,
            ctx.schedule.total_steps()
        )));
    }
    let dims = ctx.mixture.dims();
    let t_total = ctx.schedule.total_steps();
    let mut users = Vec::new();
    let mut groups = Vec::new();
    let mut charged = Vec::new();

    for (gi, group) in plan.groups.iter().enumerate() {
        let key = CacheKey {
            condition_fp: group.shared_condition.fingerprint(),
            shared_steps: group.shared_steps,
            schedule_fp: ctx.schedule.fingerprint(),
            master_seed: streams.master_seed(),
        };
        let cached = match cache {
            Some(c) => c.lookup(&key)?,
            None => None,
        };
        let cache_hit = cached.is_some();
        let handoff = match cached {
            Some(latent) => latent,
            None => {
                let shared_idx = shared_stream_index(&group.shared_condition, ctx.schedule);
                let mut init = streams.stream(labels::INIT, shared_idx);
                let x = init_latent(dims, ctx.schedule, &mut init);
                let mut shared = streams.stream(labels::SHARED, shared_idx);
                let handoff = run_segment(
                    x,
                    t_total,
                    t_total - group.shared_steps + 1,
                    ctx.mixture,
                    &group.shared_condition,
                    ctx.schedule,
                    &mut shared,
                )?;
                if let Some(c) = cache {
                    c.store(key, handoff.clone());
                }
                handoff
            }
        };
        charged.push(if cache_hit {
            0
        } else {
            group.shared_steps as u64
        });

        for m in &group.members {
            let (received, flips) = match &m.link {
                Some(model) => {
                    let encoded = quantize(&handoff, &ctx.quant);
                    let mut channel =
                        streams.stream(labels::CHANNEL, RngStreams::index_for(&m.user));
                    let (corrupted, flips) = transmit(&encoded, model, &mut channel);
                    (dequantize(&corrupted, dims)?, flips)
                }
                None => (handoff.clone(), 0),
            };
            let mut local = streams.stream(labels::LOCAL, RngStreams::index_for(&m.user));
            let final_latent = run_segment(
                received.clone(),
                t_total - group.shared_steps,
                1,
                ctx.mixture,
                &m.local_condition,
                ctx.schedule,
                &mut local,
            )?;
            users.push(UserOutcome {
                user: m.user.clone(),
                group: gi,
                target_concept: m.target_concept.clone(),
                received,
                final_latent,
                flipped_bits: flips,
            });
        }
        groups.push(GroupOutcome {
            executor: group.executor.clone(),
            handoff,
            cache_hit,
            charged_shared_steps: *charged.last().unwrap(),
        });
    }

    let cost_params = CostParams {
        payload_bits: wire_bits_for(dims.len(), &ctx.quant),
        fixed_rate_bps: ctx.fixed_rate_bps,
    };
    let cost = charged_cost(plan, ctx.profiles, &cost_params, Some(&charged))?;
    Ok(RunResult {
        users,
        groups,
        cost,
    })
}

/// Piecewise-constant SNR over time: the last entry at or before `t` wins.
#[derive(Debug, Clone, Default)]
pub struct FadeTimeline {
    points: Vec<(f64, f64)>,
}

impl FadeTimeline {
    pub fn new(mut points: Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        FadeTimeline { points }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn snr_at(&self, t: f64) -> Option<f64> {
        let mut current = None;
        for (time, snr) in &self.points {
            if *time <= t {
                current = Some(*snr);
            } else {
                break;
            }
        }
        current.or(self.points.first().map(|(_, snr)| *snr))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptParams {
    /// SNR below which the executor keeps denoising instead of handing off.
    pub deep_fade_snr: f64,
    /// Extra shared steps taken per deep-fade hit.
    pub extra_steps: usize,
}

impl Default for AdaptParams {
    fn default() -> Self {
        AdaptParams {
            deep_fade_snr: 0.5,
            extra_steps: 2,
        }
    }
}

/// If the channel is in a deep fade when a group would hand off, shift more
/// steps to the shared phase (capped at T - 1). Groups whose links carry no
/// SNR are left untouched.
pub fn adapt_split(
    plan: &TaskPlan,
    timeline: &FadeTimeline,
    profiles: &[DeviceProfile],
    params: &AdaptParams,
) -> Result<TaskPlan> {
    let mut out = plan.clone();
    if timeline.is_empty() {
        return Ok(out);
    }
    for group in out.groups.iter_mut() {
        let snr_bearing = group
            .members
            .iter()
            .any(|m| m.link.as_ref().map(|l| l.snr().is_some()).unwrap_or(false));
        if !snr_bearing {
            continue;
        }
        let exec = profile(profiles, &group.executor)?;
        let handoff_time = group.shared_steps as f64 / exec.compute_rate;
        let Some(snr) = timeline.snr_at(handoff_time) else {
            continue;
        };
        if snr < params.deep_fade_snr {
            let cap = plan.total_steps.saturating_sub(1);
            group.shared_steps = (group.shared_steps + params.extra_steps).min(cap);
            for m in group.members.iter_mut() {
                m.local_steps = plan.total_steps - group.shared_steps;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::builtin_mixture;
    use crate::diffusion::{sample, Dims};
    use crate::semantic::{default_graph, parse_prompt, ClusterGroup};

    fn profiles_2users_edge() -> Vec<DeviceProfile> {
        vec![
            DeviceProfile {
                id: "edge1".into(),
                role: Role::Edge,
                compute_rate: 20.0,
                energy_per_step: 0.5,
                power_class: PowerClass::Medium,
                uplink_hz: 1e5,
                downlink_hz: 1e5,
            },
            DeviceProfile {
                id: "user1".into(),
                role: Role::User,
                compute_rate: 4.0,
                energy_per_step: 1.0,
                power_class: PowerClass::Medium,
                uplink_hz: 1e4,
                downlink_hz: 1e4,
            },
            DeviceProfile {
                id: "user2".into(),
                role: Role::User,
                compute_rate: 2.0,
                energy_per_step: 1.0,
                power_class: PowerClass::Medium,
                uplink_hz: 1e4,
                downlink_hz: 1e4,
            },
        ]
    }

    fn fruit_assignment() -> ClusterAssignment {
        let g = default_graph();
        ClusterAssignment {
            groups: vec![ClusterGroup {
                members: vec![
                    parse_prompt("user1", "Apple on Table", &g).unwrap(),
                    parse_prompt("user2", "Lemon on Table", &g).unwrap(),
                ],
            }],
        }
    }

    fn params(arch: Architecture, s: usize, link: Option<ChannelModel>) -> PlanParams {
        PlanParams {
            architecture: arch,
            total_steps: 11,
            shared_steps: s,
            policy: SharedPolicy::Leader,
            context_weight: 0.02,
            link,
        }
    }

    fn context<'a>(
        mixture: &'a MixtureModel,
        schedule: &'a NoiseSchedule,
        profiles: &'a [DeviceProfile],
    ) -> ExecutionContext<'a> {
        ExecutionContext {
            mixture,
            schedule,
            profiles,
            quant: QuantizationSpec::default(),
            fixed_rate_bps: 20_000.0,
        }
    }

    #[test]
    fn edge_to_multi_plans_one_shared_two_local() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let p = plan(
            &params(Architecture::EdgeToMulti, 5, None),
            &fruit_assignment(),
            &profiles_2users_edge(),
            &mixture,
        )
        .unwrap();
        assert_eq!(p.groups.len(), 1);
        let g = &p.groups[0];
        assert_eq!(g.executor, "edge1");
        assert_eq!(g.shared_steps, 5);
        assert_eq!(g.members.len(), 2);
        for m in &g.members {
            assert_eq!(m.local_steps, 6);
        }
        assert_eq!(g.members[0].target_concept, "apple");
        assert_eq!(g.members[1].target_concept, "lemon");
        let ids: Vec<&str> = g.shared_condition.concepts().collect();
        assert_eq!(ids, vec!["apple", "table"]);
    }

    #[test]
    fn d2d_executor_is_the_faster_member() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let p = plan(
            &params(Architecture::DeviceToDevice, 5, None),
            &fruit_assignment(),
            &profiles_2users_edge(),
            &mixture,
        )
        .unwrap();
        assert_eq!(p.groups[0].executor, "user1");
    }

    #[test]
    fn d2d_arity_and_missing_edge_rejected() {
        let g = default_graph();
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let three = ClusterAssignment {
            groups: vec![ClusterGroup {
                members: vec![
                    parse_prompt("user1", "apple", &g).unwrap(),
                    parse_prompt("user2", "lemon", &g).unwrap(),
                    parse_prompt("user3", "banana", &g).unwrap(),
                ],
            }],
        };
        let mut profiles = profiles_2users_edge();
        profiles.push(DeviceProfile {
            id: "user3".into(),
            role: Role::User,
            compute_rate: 1.0,
            energy_per_step: 1.0,
            power_class: PowerClass::Medium,
            uplink_hz: 1e4,
            downlink_hz: 1e4,
        });
        assert!(plan(
            &params(Architecture::DeviceToDevice, 5, None),
            &three,
            &profiles,
            &mixture
        )
        .is_err());

        let no_edge: Vec<DeviceProfile> = profiles_2users_edge()
            .into_iter()
            .filter(|p| p.role == Role::User)
            .collect();
        assert!(plan(
            &params(Architecture::EdgeToMulti, 5, None),
            &fruit_assignment(),
            &no_edge,
            &mixture
        )
        .is_err());
    }

    #[test]
    fn cluster_mode_edge_wins_ties() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let mut profiles = profiles_2users_edge();
        profiles[0].compute_rate = 4.0; // tie with user1
        let p = plan(
            &params(Architecture::Cluster { with_edge: true }, 5, None),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        assert_eq!(p.groups[0].executor, "edge1");
        let p = plan(
            &params(Architecture::Cluster { with_edge: false }, 5, None),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        assert_eq!(p.groups[0].executor, "user1");
    }

    #[test]
    fn execute_is_deterministic_and_sums_steps() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let schedule = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let profiles = profiles_2users_edge();
        let p = plan(
            &params(
                Architecture::EdgeToMulti,
                5,
                Some(ChannelModel::FixedBer { p: 0.02 }),
            ),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let ctx = context(&mixture, &schedule, &profiles);
        let streams = RngStreams::new(99);
        let a = execute(&p, &ctx, &streams, None).unwrap();
        let b = execute(&p, &ctx, &streams, None).unwrap();
        assert_eq!(a.users.len(), 2);
        for (ua, ub) in a.users.iter().zip(&b.users) {
            assert_eq!(ua.final_latent, ub.final_latent);
            assert_eq!(ua.flipped_bits, ub.flipped_bits);
        }
        // per-user shared + local step counts cover the whole chain
        for g in &p.groups {
            for m in &g.members {
                assert_eq!(g.shared_steps + m.local_steps, p.total_steps);
            }
        }
    }

    #[test]
    fn lossless_execution_matches_monolithic_sampling() {
        // same prompt for both users makes shared_cond equal local_cond
        let g = default_graph();
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let schedule = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let profiles = profiles_2users_edge();
        let assignment = ClusterAssignment {
            groups: vec![ClusterGroup {
                members: vec![
                    parse_prompt("user1", "Apple on Table", &g).unwrap(),
                    parse_prompt("user2", "Apple on Table", &g).unwrap(),
                ],
            }],
        };
        let p = plan(
            &params(Architecture::EdgeToMulti, 5, None),
            &assignment,
            &profiles,
            &mixture,
        )
        .unwrap();
        let ctx = context(&mixture, &schedule, &profiles);
        let streams = RngStreams::new(4242);
        let run = execute(&p, &ctx, &streams, None).unwrap();
        for u in &run.users {
            let idx = member_stream_indices(&p.groups[0].shared_condition, &schedule, &u.user);
            let mono = sample(
                &schedule,
                &mixture,
                &p.groups[0].shared_condition,
                mixture.dims(),
                &streams,
                idx,
                5,
            )
            .unwrap();
            assert_eq!(u.final_latent, mono, "user {}", u.user);
        }
    }

    #[test]
    fn cache_hit_skips_charging_and_keeps_bits() {
        let g = default_graph();
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let schedule = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let mut profiles = profiles_2users_edge();
        for extra in ["user3", "user4"] {
            profiles.push(DeviceProfile {
                id: extra.into(),
                role: Role::User,
                compute_rate: 2.0,
                energy_per_step: 1.0,
                power_class: PowerClass::Medium,
                uplink_hz: 1e4,
                downlink_hz: 1e4,
            });
        }
        // two groups with identical shared conditions
        let assignment = ClusterAssignment {
            groups: vec![
                ClusterGroup {
                    members: vec![
                        parse_prompt("user1", "Apple on Table", &g).unwrap(),
                        parse_prompt("user2", "Lemon on Table", &g).unwrap(),
                    ],
                },
                ClusterGroup {
                    members: vec![
                        parse_prompt("user3", "Apple on Table", &g).unwrap(),
                        parse_prompt("user4", "Lemon on Table", &g).unwrap(),
                    ],
                },
            ],
        };
        let p = plan(
            &params(Architecture::EdgeToMulti, 5, None),
            &assignment,
            &profiles,
            &mixture,
        )
        .unwrap();
        let ctx = context(&mixture, &schedule, &profiles);
        let streams = RngStreams::new(7);

        let without = execute(&p, &ctx, &streams, None).unwrap();
        let cache = SharedCache::new();
        let with = execute(&p, &ctx, &streams, Some(&cache)).unwrap();

        assert!(!with.groups[0].cache_hit);
        assert!(with.groups[1].cache_hit);
        assert_eq!(with.groups[0].charged_shared_steps, 5);
        assert_eq!(with.groups[1].charged_shared_steps, 0);
        assert_eq!(without.groups[1].charged_shared_steps, 5);
        assert_eq!(with.groups[0].handoff, with.groups[1].handoff);
        assert_eq!(cache.len(), 1);
        for (a, b) in without.users.iter().zip(&with.users) {
            assert_eq!(a.final_latent, b.final_latent);
        }
        // charged energy drops by exactly the second shared phase
        let edge_without = without.cost.device("edge1").unwrap();
        let edge_with = with.cost.device("edge1").unwrap();
        assert_eq!(edge_without.compute_steps, 10);
        assert_eq!(edge_with.compute_steps, 5);
    }

    #[test]
    fn corrupted_cache_entry_is_an_integrity_error() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let schedule = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let profiles = profiles_2users_edge();
        let p = plan(
            &params(Architecture::EdgeToMulti, 5, None),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let ctx = context(&mixture, &schedule, &profiles);
        let streams = RngStreams::new(7);
        let cache = SharedCache::new();
        let key = CacheKey {
            condition_fp: p.groups[0].shared_condition.fingerprint(),
            shared_steps: 5,
            schedule_fp: schedule.fingerprint(),
            master_seed: streams.master_seed(),
        };
        let mut wrong = key;
        wrong.shared_steps = 4;
        cache.corrupt(key, wrong, Latent::zeros(mixture.dims()));
        assert!(matches!(
            execute(&p, &ctx, &streams, Some(&cache)),
            Err(Error::CacheIntegrity(_))
        ));
    }

    #[test]
    fn cost_closed_forms() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let profiles = profiles_2users_edge();
        // snr = 3 over 10 kHz downlink: rate = 1e4 * log2(4) = 2e4 bits/s,
        // payload = 2048 + 168 header bits, latency = 2216 / 2e4 = 0.1108 s
        let p = plan(
            &params(
                Architecture::EdgeToMulti,
                5,
                Some(ChannelModel::AwgnBpsk { snr: 3.0 }),
            ),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let cp = CostParams {
            payload_bits: wire_bits_for(256, &QuantizationSpec::default()),
            fixed_rate_bps: 20_000.0,
        };
        assert_eq!(cp.payload_bits, 2216);
        let report = cost(&p, &profiles, &cp).unwrap();
        let u1 = report.device("user1").unwrap();
        assert!((u1.transmit_latency_s - 0.1108).abs() < 1e-12);
        // group latency dominated by the slower user2: 0.1108 + 6/2.0
        assert!((report.groups[0].end_to_end_latency_s - (0.25 + 0.1108 + 3.0)).abs() < 1e-12);
        assert!(report.groups[0].end_to_end_latency_s >= report.groups[0].shared_latency_s);

        // snr = 1 gives rate = bandwidth exactly
        let p1 = plan(
            &params(
                Architecture::EdgeToMulti,
                5,
                Some(ChannelModel::AwgnBpsk { snr: 1.0 }),
            ),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let r1 = cost(&p1, &profiles, &cp).unwrap();
        let u1 = r1.device("user1").unwrap();
        assert!((u1.transmit_latency_s - 2216.0 / 1e4).abs() < 1e-12);

        // s = 0 charges the executor nothing
        let p0 = plan(
            &params(Architecture::EdgeToMulti, 0, None),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let r0 = cost(&p0, &profiles, &cp).unwrap();
        assert!(r0.device("edge1").map(|d| d.energy_j).unwrap_or(0.0) == 0.0);
    }

    #[test]
    fn zero_bandwidth_with_snr_model_is_an_error() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let mut profiles = profiles_2users_edge();
        profiles[1].downlink_hz = 0.0;
        profiles[2].downlink_hz = 0.0;
        let p = plan(
            &params(
                Architecture::EdgeToMulti,
                5,
                Some(ChannelModel::AwgnBpsk { snr: 3.0 }),
            ),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let cp = CostParams {
            payload_bits: 2216,
            fixed_rate_bps: 20_000.0,
        };
        assert!(cost(&p, &profiles, &cp).is_err());
    }

    #[test]
    fn shared_run_beats_independent_runs_on_energy() {
        let g = default_graph();
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let profiles = profiles_2users_edge();
        let cp = CostParams {
            payload_bits: 2216,
            fixed_rate_bps: 20_000.0,
        };
        let shared = plan(
            &params(Architecture::EdgeToMulti, 5, None),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        // two singleton groups, everything local
        let independent_assignment = ClusterAssignment {
            groups: vec![
                ClusterGroup {
                    members: vec![parse_prompt("user1", "Apple on Table", &g).unwrap()],
                },
                ClusterGroup {
                    members: vec![parse_prompt("user2", "Lemon on Table", &g).unwrap()],
                },
            ],
        };
        let independent = plan(
            &params(Architecture::Cluster { with_edge: false }, 0, None),
            &independent_assignment,
            &profiles,
            &mixture,
        )
        .unwrap();
        let e_shared = cost(&shared, &profiles, &cp).unwrap().total_energy_j;
        let e_indep = cost(&independent, &profiles, &cp).unwrap().total_energy_j;
        assert!(
            e_shared < e_indep,
            "shared {e_shared} J vs independent {e_indep} J"
        );
    }

    #[test]
    fn adapt_split_reacts_to_deep_fade_only() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let profiles = profiles_2users_edge();
        let p = plan(
            &params(
                Architecture::EdgeToMulti,
                5,
                Some(ChannelModel::RayleighBpsk { snr: 2.0 }),
            ),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let ap = AdaptParams::default();

        let clear = FadeTimeline::new(vec![(0.0, 3.0), (10.0, 2.0)]);
        let unchanged = adapt_split(&p, &clear, &profiles, &ap).unwrap();
        assert_eq!(unchanged.groups[0].shared_steps, 5);

        // shared phase ends at 5 / 20 = 0.25 s, inside the fade
        let faded = FadeTimeline::new(vec![(0.0, 3.0), (0.2, 0.1), (1.0, 3.0)]);
        let adapted = adapt_split(&p, &faded, &profiles, &ap).unwrap();
        assert_eq!(adapted.groups[0].shared_steps, 7);
        assert_eq!(adapted.groups[0].members[0].local_steps, 4);

        // cap at T - 1
        let mut near_cap = p.clone();
        near_cap.groups[0].shared_steps = 10;
        let capped = adapt_split(&near_cap, &faded, &profiles, &ap).unwrap();
        assert_eq!(capped.groups[0].shared_steps, 10);

        // fixed-BER links carry no SNR: untouched
        let fixed = plan(
            &params(
                Architecture::EdgeToMulti,
                5,
                Some(ChannelModel::FixedBer { p: 0.01 }),
            ),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        let same = adapt_split(&fixed, &faded, &profiles, &ap).unwrap();
        assert_eq!(same.groups[0].shared_steps, 5);
    }

    #[test]
    fn group_latency_monotone_in_payload_and_snr() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let profiles = profiles_2users_edge();
        let plan_at = |snr: f64| {
            plan(
                &params(
                    Architecture::EdgeToMulti,
                    5,
                    Some(ChannelModel::AwgnBpsk { snr }),
                ),
                &fruit_assignment(),
                &profiles,
                &mixture,
            )
            .unwrap()
        };
        let latency = |snr: f64, payload_bits: u64| {
            cost(
                &plan_at(snr),
                &profiles,
                &CostParams {
                    payload_bits,
                    fixed_rate_bps: 20_000.0,
                },
            )
            .unwrap()
            .groups[0]
                .end_to_end_latency_s
        };
        let mut prev = 0.0;
        for payload in [500u64, 1000, 2216, 8000, 32_000] {
            let l = latency(2.0, payload);
            assert!(l >= prev, "latency fell when payload grew to {payload}");
            prev = l;
        }
        let mut prev = f64::INFINITY;
        for snr in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let l = latency(snr, 2216);
            assert!(l <= prev, "latency rose when snr grew to {snr}");
            prev = l;
        }
    }

    #[test]
    fn power_class_scales_member_snr() {
        let mixture = builtin_mixture(Dims::new(16, 16), 0.7).unwrap();
        let mut profiles = profiles_2users_edge();
        profiles[2].power_class = PowerClass::High;
        let p = plan(
            &params(
                Architecture::EdgeToMulti,
                5,
                Some(ChannelModel::AwgnBpsk { snr: 2.0 }),
            ),
            &fruit_assignment(),
            &profiles,
            &mixture,
        )
        .unwrap();
        assert_eq!(
            p.groups[0].members[0].link,
            Some(ChannelModel::AwgnBpsk { snr: 2.0 })
        );
        assert_eq!(
            p.groups[0].members[1].link,
            Some(ChannelModel::AwgnBpsk { snr: 4.0 })
        );
    }
}
