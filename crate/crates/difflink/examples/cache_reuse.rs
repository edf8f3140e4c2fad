//! Shared-phase caching: a second group with the same condition, split and
//! seed is served from the cache and charged nothing.
//!
//! Run with: cargo run --example cache_reuse

use difflink::assets::builtin_mixture;
use difflink::channel::QuantizationSpec;
use difflink::diffusion::{Dims, NoiseSchedule};
use difflink::orchestrator::{
    execute, plan, Architecture, DeviceProfile, ExecutionContext, PlanParams, PowerClass, Role,
    SharedCache,
};
use difflink::rng::RngStreams;
use difflink::semantic::{
    default_graph, parse_prompt, ClusterAssignment, ClusterGroup, SharedPolicy,
};

fn user(id: &str) -> DeviceProfile {
    DeviceProfile {
        id: id.into(),
        role: Role::User,
        compute_rate: 2.0,
        energy_per_step: 1.0,
        power_class: PowerClass::Medium,
        uplink_hz: 1e4,
        downlink_hz: 1e4,
    }
}

fn main() -> difflink::Result<()> {
    let dims = Dims::new(16, 16);
    let schedule = NoiseSchedule::linear(11, 0.1, 0.6)?;
    let mixture = builtin_mixture(dims, 0.7)?;
    let graph = default_graph();
    let mut profiles: Vec<DeviceProfile> = ["user1", "user2", "user3", "user4"]
        .iter()
        .map(|u| user(u))
        .collect();
    profiles.push(DeviceProfile {
        id: "edge".into(),
        role: Role::Edge,
        compute_rate: 20.0,
        energy_per_step: 0.5,
        power_class: PowerClass::Medium,
        uplink_hz: 1e5,
        downlink_hz: 1e5,
    });

    // two groups whose leaders carry the same prompt: identical shared phases
    let assignment = ClusterAssignment {
        groups: vec![
            ClusterGroup {
                members: vec![
                    parse_prompt("user1", "Apple on Table", &graph)?,
                    parse_prompt("user2", "Lemon on Table", &graph)?,
                ],
            },
            ClusterGroup {
                members: vec![
                    parse_prompt("user3", "Apple on Table", &graph)?,
                    parse_prompt("user4", "Lemon on Table", &graph)?,
                ],
            },
        ],
    };
    let params = PlanParams {
        architecture: Architecture::EdgeToMulti,
        total_steps: 11,
        shared_steps: 5,
        policy: SharedPolicy::Leader,
        context_weight: 0.02,
        link: None,
    };
    let task_plan = plan(&params, &assignment, &profiles, &mixture)?;
    let ctx = ExecutionContext {
        mixture: &mixture,
        schedule: &schedule,
        profiles: &profiles,
        quant: QuantizationSpec::default(),
        fixed_rate_bps: 20_000.0,
    };
    let streams = RngStreams::new(11);

    for (label, cache) in [("cache off", None), ("cache on", Some(SharedCache::new()))] {
        let run = execute(&task_plan, &ctx, &streams, cache.as_ref())?;
        println!("{label}:");
        for (i, g) in run.groups.iter().enumerate() {
            println!(
                "  group {i}: executor {}, cache hit {}, charged shared steps {}",
                g.executor, g.cache_hit, g.charged_shared_steps
            );
        }
        let edge = run.cost.device("edge").unwrap();
        println!(
            "  edge charged {} steps, {:.1} J; total energy {:.1} J",
            edge.compute_steps, edge.energy_j, run.cost.total_energy_j
        );
        if let Some(c) = &cache {
            println!("  cache entries: {}", c.len());
        }
    }
    println!("\nuser outputs are bit-identical either way; only the ledger changes.");
    Ok(())
}
