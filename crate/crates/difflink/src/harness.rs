//! Scenario execution: sweep cells, repetitions, metrics, and artifact
//! emission.
//!
//! A scenario expands into sweep cells; each (cell, repetition) derives its
//! own random streams from (master seed, cell index, repetition index), so
//! cells can run in parallel and results do not depend on scheduling. All
//! files are written by a single writer after every cell finished, which
//! keeps CSV and PGM artifacts byte-identical across `--jobs` settings.
//!
//! Each row reports quality twice: against the error-free reference (the
//! same run with ideal links) and against the user's target prototype.

#[cfg(test)]
use crate::assets::BUILTIN_CONCEPTS;
use crate::assets::{builtin_mixture, mixture_from_dir, pgm_bytes};
use crate::channel::{ber, wire_bits_for, ChannelModel};
use crate::config::{
    architecture_name, CellSpec, ChannelKind, GraphSource, PrototypeSource, ScenarioConfig,
};
use crate::diffusion::{Dims, MixtureModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::{classify, mse, psnr, ssim, SsimParams};
use crate::orchestrator::{
    adapt_split, cost, execute, plan, Architecture, CostParams, ExecutionContext, FadeTimeline,
    PlanParams, SharedCache, TaskPlan,
};
use crate::rng::RngStreams;
use crate::semantic::{cluster, default_graph, parse_prompt, ClusterAssignment, ConceptGraph};
use std::path::{Path, PathBuf};

/// One measurement: a user's output in one repetition of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub cell: usize,
    pub cell_label: String,
    pub rep: usize,
    pub user: String,
    pub architecture: String,
    pub shared_steps: usize,
    pub channel: String,
    /// BER for fixed channels, SNR for fading ones, 0 for lossless.
    pub channel_param: f64,
    /// Effective bit-error probability on this user's link.
    pub ber: f64,
    pub mse_ref: f64,
    pub psnr_ref: f64,
    pub ssim_ref: f64,
    pub mse_proto: f64,
    pub psnr_proto: f64,
    pub ssim_proto: f64,
    pub predicted: String,
    pub fidelity_ok: bool,
    pub flipped_bits: u64,
    pub group_latency_s: f64,
    pub user_energy_j: f64,
    pub total_energy_j: f64,
    pub cache_hit: bool,
}

pub const CSV_HEADER: &str = "scenario,cell,cell_label,rep,user,architecture,shared_steps,\
channel,channel_param,ber,mse_ref,psnr_ref,ssim_ref,mse_proto,psnr_proto,ssim_proto,\
predicted,fidelity_ok,flipped_bits,group_latency_s,user_energy_j,total_energy_j,cache_hit";

impl ResultRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.cell,
            self.cell_label,
            self.rep,
            self.user,
            self.architecture,
            self.shared_steps,
            self.channel,
            self.channel_param,
            self.ber,
            self.mse_ref,
            self.psnr_ref,
            self.ssim_ref,
            self.mse_proto,
            self.psnr_proto,
            self.ssim_proto,
            self.predicted,
            self.fidelity_ok as u8,
            self.flipped_bits,
            self.group_latency_s,
            self.user_energy_j,
            self.total_energy_j,
            self.cache_hit as u8,
        )
    }
}

/// Paths produced by one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioArtifacts {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub images: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
}

/// The static (cell-independent) part of a prepared scenario.
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub graph: ConceptGraph,
    pub mixture: MixtureModel,
    pub schedule: NoiseSchedule,
    pub assignment: ClusterAssignment,
}

/// Parse prompts, build the mixture and schedule, and group the users.
pub fn prepare(config: &ScenarioConfig) -> Result<PreparedScenario> {
    config.validate()?;
    let graph = match &config.graph {
        GraphSource::Builtin => default_graph(),
        GraphSource::File(path) => ConceptGraph::parse(&std::fs::read_to_string(path)?)?,
    };
    let dims = Dims::new(config.width, config.height);
    let mixture = match &config.prototypes {
        PrototypeSource::Builtin => builtin_mixture(dims, config.sigma0)?,
        PrototypeSource::Dir(dir) => {
            let mut concepts: Vec<String> = Vec::new();
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().map(|e| e == "pgm").unwrap_or(false) {
                    if let Some(stem) = path.file_stem() {
                        concepts.push(stem.to_string_lossy().to_string());
                    }
                }
            }
            concepts.sort();
            if concepts.is_empty() {
                return Err(Error::Config(format!(
                    "prototypes: no .pgm files in {}",
                    dir.display()
                )));
            }
            mixture_from_dir(dir, &concepts, config.sigma0)?
        }
    };
    let schedule = NoiseSchedule::linear(config.steps, config.beta_start, config.beta_end)?;
    let mut prompts = Vec::new();
    for (user, text) in &config.prompts {
        prompts.push(parse_prompt(user, text, &graph)?);
    }
    let assignment = if config.force_group {
        ClusterAssignment::single_group(prompts)?
    } else {
        cluster(&prompts, config.threshold, &graph)?
    };
    Ok(PreparedScenario {
        config: config.clone(),
        graph,
        mixture,
        schedule,
        assignment,
    })
}

fn cell_parameters(
    config: &ScenarioConfig,
    cell: &CellSpec,
) -> (Architecture, usize, Option<ChannelModel>, f64) {
    let arch = match cell {
        CellSpec::Arch(a) => *a,
        _ => config.architectures[0],
    };
    let shared = match cell {
        CellSpec::SharedSteps(s) => *s,
        _ => config.shared_steps[0],
    };
    let (link, param) = match cell {
        CellSpec::Ber(p) => (Some(ChannelModel::FixedBer { p: *p }), *p),
        CellSpec::Snr(s) => {
            let model = match config.channel {
                ChannelKind::Rayleigh => ChannelModel::RayleighBpsk { snr: *s },
                _ => ChannelModel::AwgnBpsk { snr: *s },
            };
            (Some(model), *s)
        }
        CellSpec::Single | CellSpec::SharedSteps(_) | CellSpec::Arch(_) => match config.channel {
            ChannelKind::Lossless => (None, 0.0),
            ChannelKind::Fixed => (
                Some(ChannelModel::FixedBer { p: config.ber[0] }),
                config.ber[0],
            ),
            ChannelKind::Awgn => (
                Some(ChannelModel::AwgnBpsk { snr: config.snr[0] }),
                config.snr[0],
            ),
            ChannelKind::Rayleigh => (
                Some(ChannelModel::RayleighBpsk { snr: config.snr[0] }),
                config.snr[0],
            ),
        },
    };
    (arch, shared, link, param)
}

/// Build the executable plan for one sweep cell, fade adaptation included.
pub fn plan_for_cell(prepared: &PreparedScenario, cell: &CellSpec) -> Result<TaskPlan> {
    let config = &prepared.config;
    let (architecture, shared_steps, link, _) = cell_parameters(config, cell);
    let params = PlanParams {
        architecture,
        total_steps: config.steps,
        shared_steps,
        policy: config.policy,
        context_weight: config.context_weight,
        link,
    };
    let profiles = config.profiles();
    let mut task_plan = plan(&params, &prepared.assignment, &profiles, &prepared.mixture)?;
    if !config.fade_timeline.is_empty() {
        let timeline = FadeTimeline::new(config.fade_timeline.clone());
        task_plan = adapt_split(&task_plan, &timeline, &profiles, &config.adapt)?;
    }
    Ok(task_plan)
}

struct CellRepOutput {
    rows: Vec<ResultRow>,
    /// (file name, PGM bytes) for the rep-0 snapshots.
    images: Vec<(String, Vec<u8>)>,
}

fn strip_links(plan: &TaskPlan) -> TaskPlan {
    let mut out = plan.clone();
    for g in out.groups.iter_mut() {
        for m in g.members.iter_mut() {
            m.link = None;
        }
    }
    out
}

fn run_cell_rep(
    prepared: &PreparedScenario,
    task_plan: &TaskPlan,
    cell_index: usize,
    cell: &CellSpec,
    rep: usize,
) -> Result<CellRepOutput> {
    let config = &prepared.config;
    let profiles = config.profiles();
    let ctx = ExecutionContext {
        mixture: &prepared.mixture,
        schedule: &prepared.schedule,
        profiles: &profiles,
        quant: config.quant,
        fixed_rate_bps: config.fixed_rate_bps,
    };
    let streams = RngStreams::new(config.seed)
        .branch("cell", cell_index as u64)
        .branch("rep", rep as u64);
    let cache = config.cache.then(SharedCache::new);
    let run = execute(task_plan, &ctx, &streams, cache.as_ref())?;

    // error-free reference: identical streams, ideal links
    let lossy = task_plan
        .groups
        .iter()
        .any(|g| g.members.iter().any(|m| m.link.is_some()));
    let reference = if lossy {
        Some(execute(&strip_links(task_plan), &ctx, &streams, None)?)
    } else {
        None
    };

    let (architecture, shared_steps, _, channel_param) = cell_parameters(config, cell);
    let channel_name = match cell {
        CellSpec::Ber(_) => ChannelKind::Fixed.name(),
        CellSpec::Snr(_) => config.channel.name(),
        _ => config.channel.name(),
    };
    let ssim_params = SsimParams::default();
    let mut rows = Vec::new();
    let mut images = Vec::new();

    for (ui, user) in run.users.iter().enumerate() {
        let reference_final = reference
            .as_ref()
            .map(|r| &r.users[ui].final_latent)
            .unwrap_or(&user.final_latent);
        let proto = prepared
            .mixture
            .prototype(&user.target_concept)
            .expect("plan guarantees prototype-backed targets");
        let verdict = classify(&user.final_latent, &prepared.mixture)?;
        let member = &task_plan.groups[user.group].members[ui_in_group(task_plan, user.group, ui)];
        let row = ResultRow {
            scenario: config.scenario.clone(),
            cell: cell_index,
            cell_label: cell.label(),
            rep,
            user: user.user.clone(),
            architecture: architecture_name(architecture).to_string(),
            shared_steps,
            channel: channel_name.to_string(),
            channel_param,
            ber: member.link.as_ref().map(ber).unwrap_or(0.0),
            mse_ref: mse(&user.final_latent, reference_final)?,
            psnr_ref: psnr(&user.final_latent, reference_final, 1.0)?,
            ssim_ref: ssim(&user.final_latent, reference_final, &ssim_params)?,
            mse_proto: mse(&user.final_latent, &proto)?,
            psnr_proto: psnr(&user.final_latent, &proto, 1.0)?,
            ssim_proto: ssim(&user.final_latent, &proto, &ssim_params)?,
            predicted: verdict.concept.clone(),
            fidelity_ok: verdict.concept == user.target_concept,
            flipped_bits: user.flipped_bits,
            group_latency_s: run.cost.groups[user.group].end_to_end_latency_s,
            user_energy_j: run
                .cost
                .device(&user.user)
                .map(|d| d.energy_j)
                .unwrap_or(0.0),
            total_energy_j: run.cost.total_energy_j,
            cache_hit: run.groups[user.group].cache_hit,
        };
        rows.push(row);
        if rep == 0 {
            images.push((
                format!(
                    "{}_c{:02}_{}_final.pgm",
                    config.scenario, cell_index, user.user
                ),
                pgm_bytes(&user.final_latent),
            ));
        }
    }
    if rep == 0 {
        for (gi, g) in run.groups.iter().enumerate() {
            images.push((
                format!("{}_c{:02}_g{}_handoff.pgm", config.scenario, cell_index, gi),
                pgm_bytes(&g.handoff),
            ));
        }
    }
    Ok(CellRepOutput { rows, images })
}

/// Index of the ui-th overall user within its group's member list.
fn ui_in_group(plan: &TaskPlan, group: usize, overall: usize) -> usize {
    let before: usize = plan.groups[..group].iter().map(|g| g.members.len()).sum();
    overall - before
}

/// Execute every cell and repetition, then write the CSV, summary and
/// rep-0 PGM snapshots into `out_dir`.
pub fn run_scenario(
    config: &ScenarioConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<ScenarioArtifacts> {
    let prepared = prepare(config)?;
    let cells = config.cells();
    let mut cell_plans = Vec::new();
    for cell in &cells {
        cell_plans.push(plan_for_cell(&prepared, cell)?);
    }

    let mut tasks: Vec<(usize, usize)> = Vec::new();
    for ci in 0..cells.len() {
        for rep in 0..config.repetitions {
            tasks.push((ci, rep));
        }
    }

    let worker = |(ci, rep): &(usize, usize)| -> Result<CellRepOutput> {
        run_cell_rep(&prepared, &cell_plans[*ci], *ci, &cells[*ci], *rep)
    };
    let outputs: Vec<Result<CellRepOutput>> = if jobs == 1 {
        tasks.iter().map(worker).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("jobs: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            tasks.par_iter().map(worker).collect()
        })
    };

    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut images = Vec::new();
    for out in outputs {
        let out = out?;
        rows.extend(out.rows);
        for (name, bytes) in out.images {
            let path = out_dir.join(name);
            std::fs::write(&path, bytes)?;
            images.push(path);
        }
    }
    // tasks were generated in (cell, rep) order and collect preserves it;
    // rows within a task follow plan order, so the output is already sorted
    let csv = out_dir.join(format!("{}.csv", config.scenario));
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for row in &rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    std::fs::write(&csv, text)?;

    let summary = out_dir.join(format!("{}_summary.csv", config.scenario));
    emit_summary(&csv, &summary)?;

    Ok(ScenarioArtifacts {
        csv,
        summary,
        images,
        rows,
    })
}

/// Planned (cache-free) cost report for each cell of a scenario. Used by the
/// architecture-comparison preset and the CLI to print ledgers without
/// rerunning the diffusion.
pub fn planned_costs(
    prepared: &PreparedScenario,
) -> Result<Vec<(CellSpec, crate::orchestrator::CostReport)>> {
    let profiles = prepared.config.profiles();
    let payload = wire_bits_for(
        Dims::new(prepared.config.width, prepared.config.height).len(),
        &prepared.config.quant,
    );
    let params = CostParams {
        payload_bits: payload,
        fixed_rate_bps: prepared.config.fixed_rate_bps,
    };
    let mut out = Vec::new();
    for cell in prepared.config.cells() {
        let task_plan = plan_for_cell(prepared, &cell)?;
        out.push((cell, cost(&task_plan, &profiles, &params)?));
    }
    Ok(out)
}

fn split_csv_line(line: &str) -> Vec<String> {
    line.split(',').map(|s| s.to_string()).collect()
}

/// Aggregate a result CSV into per-(cell, user) means and standard
/// deviations over repetitions; writes a second CSV and returns its rows.
pub fn emit_summary(csv_path: &Path, out_path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty CSV".into()))?;
    let columns = split_csv_line(header);
    let col = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("missing column {name:?}")))
    };
    let key_cols = [
        col("scenario")?,
        col("cell")?,
        col("cell_label")?,
        col("user")?,
    ];
    let rep_col = col("rep")?;

    let rows: Vec<Vec<String>> = lines.map(split_csv_line).collect();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(Error::Config(format!(
                "row {} has {} fields, header has {}",
                i + 2,
                row.len(),
                columns.len()
            )));
        }
    }
    // a column is numeric when every value parses
    let numeric: Vec<bool> = (0..columns.len())
        .map(|c| {
            !key_cols.contains(&c)
                && c != rep_col
                && rows.iter().all(|r| r[c].parse::<f64>().is_ok())
        })
        .collect();

    let mut order: Vec<Vec<String>> = Vec::new();
    let mut groups: Vec<Vec<&Vec<String>>> = Vec::new();
    for row in &rows {
        let key: Vec<String> = key_cols.iter().map(|&c| row[c].clone()).collect();
        match order.iter().position(|k| *k == key) {
            Some(pos) => groups[pos].push(row),
            None => {
                order.push(key);
                groups.push(vec![row]);
            }
        }
    }

    let mut out = String::from("scenario,cell,cell_label,user,n");
    for (c, name) in columns.iter().enumerate() {
        if numeric[c] {
            out.push_str(&format!(",{name}_mean,{name}_std"));
        }
    }
    out.push('\n');
    let mut emitted = Vec::new();
    for (key, members) in order.iter().zip(&groups) {
        let mut line = format!(
            "{},{},{},{},{}",
            key[0],
            key[1],
            key[2],
            key[3],
            members.len()
        );
        for (c, _) in columns.iter().enumerate() {
            if !numeric[c] {
                continue;
            }
            let values: Vec<f64> = members
                .iter()
                .map(|r| r[c].parse::<f64>().unwrap())
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            line.push_str(&format!(",{},{}", mean, var.sqrt()));
        }
        out.push_str(&line);
        out.push('\n');
        emitted.push(line);
    }
    std::fs::write(out_path, out)?;
    Ok(emitted)
}

/// Re-read a result CSV written by `run_scenario`.
pub fn read_rows(csv_path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty CSV".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Config("unrecognized CSV header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f = split_csv_line(line);
        if f.len() != 23 {
            return Err(Error::Config(format!("row {}: expected 23 fields", i + 2)));
        }
        let num = |idx: usize| -> Result<f64> {
            f[idx]
                .parse()
                .map_err(|_| Error::Config(format!("row {}: bad number {:?}", i + 2, f[idx])))
        };
        rows.push(ResultRow {
            scenario: f[0].clone(),
            cell: num(1)? as usize,
            cell_label: f[2].clone(),
            rep: num(3)? as usize,
            user: f[4].clone(),
            architecture: f[5].clone(),
            shared_steps: num(6)? as usize,
            channel: f[7].clone(),
            channel_param: num(8)?,
            ber: num(9)?,
            mse_ref: num(10)?,
            psnr_ref: num(11)?,
            ssim_ref: num(12)?,
            mse_proto: num(13)?,
            psnr_proto: num(14)?,
            ssim_proto: num(15)?,
            predicted: f[16].clone(),
            fidelity_ok: f[17] == "1",
            flipped_bits: num(18)? as u64,
            group_latency_s: num(19)?,
            user_energy_j: num(20)?,
            total_energy_j: num(21)?,
            cache_hit: f[22] == "1",
        });
    }
    Ok(rows)
}

/// Check that every numeric field of every row is finite.
pub fn rows_are_finite(rows: &[ResultRow]) -> bool {
    rows.iter().all(|r| {
        [
            r.channel_param,
            r.ber,
            r.mse_ref,
            r.psnr_ref,
            r.ssim_ref,
            r.mse_proto,
            r.psnr_proto,
            r.ssim_proto,
            r.group_latency_s,
            r.user_energy_j,
            r.total_energy_j,
        ]
        .iter()
        .all(|v| v.is_finite())
    })
}
