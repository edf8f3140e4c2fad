//! Deep-fade adaptation: when the channel is poor at handoff time, the
//! executor keeps denoising and transmits later.
//!
//! Run with: cargo run --example fading_adaptation

use difflink::assets::builtin_mixture;
use difflink::channel::{wire_bits_for, ChannelModel, QuantizationSpec};
use difflink::diffusion::Dims;
use difflink::orchestrator::{
    adapt_split, cost, plan, AdaptParams, Architecture, CostParams, DeviceProfile, FadeTimeline,
    PlanParams, PowerClass, Role,
};
use difflink::semantic::{cluster, default_graph, parse_prompt, SharedPolicy};

fn main() -> difflink::Result<()> {
    let dims = Dims::new(16, 16);
    let mixture = builtin_mixture(dims, 0.7)?;
    let graph = default_graph();
    let profiles = vec![
        DeviceProfile {
            id: "edge".into(),
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
            compute_rate: 2.0,
            energy_per_step: 1.0,
            power_class: PowerClass::Medium,
            uplink_hz: 1e4,
            downlink_hz: 1e4,
        },
    ];
    let prompts = vec![parse_prompt("user1", "Cat on Table", &graph)?];
    let assignment = cluster(&prompts, 0.5, &graph)?;
    let params = PlanParams {
        architecture: Architecture::EdgeToMulti,
        total_steps: 11,
        shared_steps: 5,
        policy: SharedPolicy::Leader,
        context_weight: 0.02,
        link: Some(ChannelModel::RayleighBpsk { snr: 2.0 }),
    };
    let base = plan(&params, &assignment, &profiles, &mixture)?;
    let cp = CostParams {
        payload_bits: wire_bits_for(dims.len(), &QuantizationSpec::default()),
        fixed_rate_bps: 20_000.0,
    };
    let adapt = AdaptParams::default();
    println!(
        "handoff scheduled at {} / {} = {:.3} s; deep-fade threshold snr = {}",
        base.groups[0].shared_steps,
        profiles[0].compute_rate,
        base.groups[0].shared_steps as f64 / profiles[0].compute_rate,
        adapt.deep_fade_snr
    );

    let timelines = [
        ("clear sky", FadeTimeline::new(vec![(0.0, 3.0)])),
        (
            "fade at handoff",
            FadeTimeline::new(vec![(0.0, 3.0), (0.2, 0.1), (1.0, 3.0)]),
        ),
        (
            "fade after handoff",
            FadeTimeline::new(vec![(0.0, 3.0), (0.6, 0.1)]),
        ),
    ];
    println!(
        "\n{:<20} {:>8} {:>8} {:>12}",
        "timeline", "shared", "local", "latency (s)"
    );
    for (name, timeline) in &timelines {
        let adapted = adapt_split(&base, timeline, &profiles, &adapt)?;
        let report = cost(&adapted, &profiles, &cp)?;
        println!(
            "{:<20} {:>8} {:>8} {:>12.3}",
            name,
            adapted.groups[0].shared_steps,
            adapted.groups[0].members[0].local_steps,
            report.groups[0].end_to_end_latency_s,
        );
    }
    Ok(())
}
