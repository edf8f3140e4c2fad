//! The three network architectures side by side: who executes the shared
//! phase, and what that costs in latency and energy.
//!
//! Run with: cargo run --example architectures

use difflink::assets::builtin_mixture;
use difflink::channel::{wire_bits_for, ChannelModel, QuantizationSpec};
use difflink::config::architecture_name;
use difflink::diffusion::{Dims, NoiseSchedule};
use difflink::orchestrator::{
    cost, execute, plan, Architecture, CostParams, DeviceProfile, ExecutionContext, PlanParams,
    PowerClass, Role, SharedCache,
};
use difflink::rng::RngStreams;
use difflink::semantic::{cluster, default_graph, parse_prompt, SharedPolicy};

fn device(id: &str, role: Role, rate: f64, energy: f64) -> DeviceProfile {
    DeviceProfile {
        id: id.into(),
        role,
        compute_rate: rate,
        energy_per_step: energy,
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
    let profiles = vec![
        device("edge", Role::Edge, 20.0, 0.5),
        device("user1", Role::User, 4.0, 1.0),
        device("user2", Role::User, 2.0, 1.0),
    ];
    let prompts = vec![
        parse_prompt("user1", "Apple on Table", &graph)?,
        parse_prompt("user2", "Lemon on Table", &graph)?,
    ];
    let assignment = cluster(&prompts, 0.5, &graph)?;
    let quant = QuantizationSpec::default();
    let cost_params = CostParams {
        payload_bits: wire_bits_for(dims.len(), &quant),
        fixed_rate_bps: 20_000.0,
    };

    println!(
        "{:<16} {:>10} {:>12} {:>12} {:>10}",
        "architecture", "executor", "latency (s)", "energy (J)", "verdicts"
    );
    for arch in [
        Architecture::EdgeToMulti,
        Architecture::DeviceToDevice,
        Architecture::Cluster { with_edge: false },
        Architecture::Cluster { with_edge: true },
    ] {
        let params = PlanParams {
            architecture: arch,
            total_steps: 11,
            shared_steps: 5,
            policy: SharedPolicy::Leader,
            context_weight: 0.02,
            link: Some(ChannelModel::AwgnBpsk { snr: 3.0 }),
        };
        let task_plan = plan(&params, &assignment, &profiles, &mixture)?;
        let report = cost(&task_plan, &profiles, &cost_params)?;
        let ctx = ExecutionContext {
            mixture: &mixture,
            schedule: &schedule,
            profiles: &profiles,
            quant,
            fixed_rate_bps: cost_params.fixed_rate_bps,
        };
        let cache = SharedCache::new();
        let run = execute(&task_plan, &ctx, &RngStreams::new(5), Some(&cache))?;
        let verdicts: Vec<String> = run
            .users
            .iter()
            .map(|u| {
                let v = difflink::metrics::classify(&u.final_latent, &mixture).unwrap();
                format!("{}:{}", u.user, v.concept)
            })
            .collect();
        println!(
            "{:<16} {:>10} {:>12.3} {:>12.2} {:>10}",
            architecture_name(arch),
            task_plan.groups[0].executor,
            report.groups[0].end_to_end_latency_s,
            report.total_energy_j,
            verdicts.join(" "),
        );
    }
    println!("\nedge executes fastest but every member pays the downlink;");
    println!("device-to-device spares the executor's own link entirely.");
    Ok(())
}
