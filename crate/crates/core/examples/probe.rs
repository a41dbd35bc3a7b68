// Scratch calibration probe (not part of the deliverable).
use xprs::config::RunConfig;
use xprs::runner::{execute_run, Variant};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XPRS_LOG_LEVEL", "warn"))
        .format_timestamp(None)
        .init();
    let mut cfg = RunConfig::default();
    let mut variant = Variant::Full;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        match k {
            "seed" => cfg.seed = v.parse().unwrap(),
            "grid" => cfg.encoder.grid = v.parse().unwrap(),
            "pep" => cfg.experiment.pretrain_epochs = v.parse().unwrap(),
            "plr" => cfg.experiment.pretrain_lr = v.parse().unwrap(),
            "pdemos" => cfg.experiment.pretrain_demos = v.parse().unwrap(),
            "lr" => cfg.train.learning_rate = v.parse().unwrap(),
            "sigma" => cfg.policy.lora_init_sigma = v.parse().unwrap(),
            "rank" => cfg.policy.lora_rank = v.parse().unwrap(),
            "layers" => {
                cfg.policy.adapted_layers = v.chars().map(|c| c.to_digit(10).unwrap() as usize).collect()
            }
            "chunk" => cfg.scenario.chunk_len = if v == "none" { None } else { Some(v.parse().unwrap()) },
            "epochs" => cfg.train.epochs = v.parse().unwrap(),
            "demos" => cfg.experiment.demos_per_cycle = v.parse().unwrap(),
            "goal_min" => cfg.scenario.goal_distance[0] = v.parse().unwrap(),
            "goal_max" => cfg.scenario.goal_distance[1] = v.parse().unwrap(),
            "box" => cfg.scenario.start_box_half = v.parse().unwrap(),
            "evals" => cfg.experiment.eval_episodes = v.parse().unwrap(),
            "episodes" => cfg.experiment.max_episodes = v.parse().unwrap(),
            "cycles" => cfg.experiment.max_cycles = v.parse().unwrap(),
            "preload" => cfg.experiment.preload_successes = v.parse().unwrap(),
            "hidden" => cfg.policy.hidden = v.parse().unwrap(),
            "d_h" => cfg.policy.d_h = v.parse().unwrap(),
            "wd" => cfg.train.weight_decay = v.parse().unwrap(),
            "variant" => variant = Variant::parse(v).unwrap(),
            "tbg" => cfg.scenario.target_style.background_intensity = v.parse().unwrap(),
            "tobj" => cfg.scenario.target_style.object_hue = v.parse().unwrap(),
            "tgoal" => cfg.scenario.target_style.goal_hue = v.parse().unwrap(),
            "teff" => cfg.scenario.target_style.effector_hue = v.parse().unwrap(),
            "tox" => cfg.scenario.target_style.layout_offset[0] = v.parse().unwrap(),
            "toy" => cfg.scenario.target_style.layout_offset[1] = v.parse().unwrap(),
            "acc" => cfg.train.accumulation_steps = v.parse().unwrap(),
            "trot" => cfg.scenario.target_frame.rotation_deg = v.parse().unwrap(),
            "tcmd" => {
                cfg.scenario.target_command_tokens =
                    Some(v.split(',').map(|t| t.parse().unwrap()).collect())
            }
            "tgain" => cfg.scenario.target_frame.gain = v.parse().unwrap(),
            "pgoal_min" => {
                let cur = cfg.experiment.pretrain_goal_distance.unwrap_or(cfg.scenario.goal_distance);
                cfg.experiment.pretrain_goal_distance = Some([v.parse().unwrap(), cur[1]]);
            }
            "pgoal_max" => {
                let cur = cfg.experiment.pretrain_goal_distance.unwrap_or(cfg.scenario.goal_distance);
                cfg.experiment.pretrain_goal_distance = Some([cur[0], v.parse().unwrap()]);
            }
            _ => panic!("unknown key {k}"),
        }
    }
    let t0 = std::time::Instant::now();
    let out = execute_run(&cfg, variant, None).unwrap();
    if std::env::var("XPRS_PROBE_CYCLES").is_ok() {
        for c in &out.metrics.cycles {
            println!(
                "  cycle {}: batches {} steps {} bc {:.5} total {:.5} forget {:.5}",
                c.cycle_index, c.batches, c.optimizer_steps, c.adapt_loss_metric,
                c.mean_total_loss, c.forgetting_metric
            );
        }
    }
    let s = &out.summary;
    println!(
        "pre_t={:.2} post_t={:.2} pre_s={:.2} post_s={:.2} cycles={} paths={:?} [{:.1}s]",
        s.pre_target_success,
        s.post_target_success,
        s.pre_source_success,
        s.post_source_success,
        s.cycles_used,
        s.thcl_path_counts,
        t0.elapsed().as_secs_f64()
    );
}
