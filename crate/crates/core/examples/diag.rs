// Scratch diagnostic (not part of the deliverable): what does one adaptation
// cycle do to the policy's direction quality on fresh Target scenes?
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use xprs::adapt::{lr_schedule, run_adaptation_cycle, AdaptContext, CollectedTrajectory, TrainConfig, VariantSwitches};
use xprs::config::RunConfig;
use xprs::encoder::{command_feature, CommandTokens, Encoder};
use xprs::loss::bc_repeated;
use xprs::memory::DualBuffers;
use xprs::policy::PolicyState;
use xprs::retrieval::similarity;
use xprs::simenv::{expert_demo, rollout, Domain, ScenarioSpec};

fn main() {
    let mut cfg = RunConfig::default();
    cfg.scenario.goal_distance = [0.18, 0.3];
    cfg.scenario.start_box_half = 0.15;
    cfg.scenario.chunk_len = Some(5);
    cfg.scenario.target_style.background_intensity = 0.12;
    cfg.scenario.target_style.object_hue = 0.10;
    cfg.scenario.target_style.goal_hue = 0.45;
    cfg.scenario.target_style.effector_hue = 0.75;
    cfg.scenario.target_style.layout_offset = [0, 0];
    cfg.policy.lora_rank = 16;
    cfg.policy.adapted_layers = vec![0, 1, 2];
    cfg.policy.lora_init_sigma = 0.2;
    let train = TrainConfig {
        learning_rate: 0.05,
        epochs: 4,
        accumulation_steps: 2,
        ..Default::default()
    };

    let encoder = Encoder::from_config(&cfg.encoder).unwrap();
    let mut policy = PolicyState::new(&cfg.policy, encoder.params().d_e()).unwrap();
    let command = CommandTokens::new(cfg.scenario.command_tokens.clone(), 32).unwrap();
    let feature = command_feature(&command, policy.d_c());

    // Pretrain on Source.
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let mut items = Vec::new();
    for _ in 0..300 {
        let scene = cfg.scenario.sample_scene(Domain::Source, &mut rng).unwrap();
        let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &xprs::simenv::ControlFrame::default(), &cfg.success).unwrap();
        let e = encoder.encode_normalized(demo.initial_observation().unwrap()).unwrap();
        items.push((e, demo.expert_actions.unwrap(), scene));
    }
    let total = 150 * items.len();
    let mut step = 0;
    for _ in 0..150 {
        for (e, acts, _) in &items {
            let trace = policy.forward_trace(e, &feature).unwrap();
            let (_, mut g) = bc_repeated(&trace.action, acts).unwrap();
            g.mapv_inplace(|v| v / acts.ncols() as f64);
            let full = policy.backward(&trace, &g, None);
            policy.apply_base_update(&full, lr_schedule(step, total, 0.2));
            step += 1;
        }
    }
    policy.quantize_base_f32();

    // Direction diagnostic on fresh scenes.
    let diag = |policy: &PolicyState, domain: Domain, seed: u64| -> (f64, f64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut cos_sum = 0.0;
        let mut mag_sum = 0.0;
        let n = 50;
        for _ in 0..n {
            let scene = cfg.scenario.sample_scene(domain, &mut rng).unwrap();
            let obs = xprs::simenv::render(&scene, &ScenarioSpec::effector_start(&scene));
            let e = encoder.encode_normalized(&obs).unwrap();
            let (a, _) = policy.forward(&e, &feature).unwrap();
            let want = [
                scene.goal_pos[0] - scene.object_pos[0],
                scene.goal_pos[1] - scene.object_pos[1],
            ];
            let wn = (want[0] * want[0] + want[1] * want[1]).sqrt();
            let an = (a[0] * a[0] + a[1] * a[1]).sqrt();
            if an > 1e-9 {
                cos_sum += (a[0] * want[0] + a[1] * want[1]) / (an * wn);
            }
            mag_sum += an;
        }
        (cos_sum / n as f64, mag_sum / n as f64)
    };

    let eval_success = |policy: &PolicyState, domain: Domain, seed: u64| -> f64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut hits = 0;
        let n = 30;
        for _ in 0..n {
            let scene = cfg.scenario.sample_scene(domain, &mut rng).unwrap();
            let t = rollout(
                policy, &encoder, &command, &scene,
                ScenarioSpec::effector_start(&scene),
                cfg.scenario.horizon, cfg.scenario.chunk_len, &xprs::simenv::ControlFrame::default(), &cfg.success,
            ).unwrap();
            if t.success { hits += 1; }
        }
        hits as f64 / n as f64
    };

    let (cs, ms) = diag(&policy, Domain::Source, 100);
    let (ct, mt) = diag(&policy, Domain::Target, 200);
    println!("pretrained: src cos {cs:.3} |a| {ms:.3} | tgt cos {ct:.3} |a| {mt:.3}");
    println!("  success: src {:.2} tgt {:.2}", eval_success(&policy, Domain::Source, 300), eval_success(&policy, Domain::Target, 400));

    // Adaptation cycles on Target demos.
    let mut buffers = DualBuffers::new(50, 50);
    let mut cycle = 0u64;
    let mut demo_rng = ChaCha12Rng::seed_from_u64(77);
    let mut adapt_rng = ChaCha12Rng::seed_from_u64(78);
    let ctx = AdaptContext {
        encoder: &encoder,
        thcl: cfg.thcl,
        train: &train,
        decay: &cfg.decay,
        switches: VariantSwitches::default(),
    };
    for c in 0..6 {
        let collected: Vec<CollectedTrajectory> = (0..12)
            .map(|_| {
                let scene = cfg.scenario.sample_scene(Domain::Target, &mut demo_rng).unwrap();
                let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &xprs::simenv::ControlFrame::default(), &cfg.success).unwrap();
                CollectedTrajectory { trajectory: demo, command: command.clone() }
            })
            .collect();
        // Check: how similar are stored embeddings to a fresh target query?
        if c == 0 {
            let scene = cfg.scenario.sample_scene(Domain::Target, &mut demo_rng.clone()).unwrap();
            let obs = xprs::simenv::render(&scene, &ScenarioSpec::effector_start(&scene));
            let q = encoder.encode_normalized(&obs).unwrap();
            let e0 = encoder.encode_normalized(collected[0].trajectory.initial_observation().unwrap()).unwrap();
            println!("  q-demo sim {:.4}", similarity(&q, &e0).unwrap());
        }
        let report = run_adaptation_cycle(&collected, &mut policy, &mut buffers, &mut cycle, &ctx, &mut adapt_rng).unwrap();
        let (ct, mt) = diag(&policy, Domain::Target, 200);
        let (cs2, _) = diag(&policy, Domain::Source, 100);
        println!(
            "cycle {c}: bc {:.4} total {:.4} steps {} | tgt cos {ct:.3} |a| {mt:.3} src cos {cs2:.3} | tgt succ {:.2}",
            report.adapt_loss_metric, report.mean_total_loss, report.optimizer_steps,
            eval_success(&policy, Domain::Target, 400)
        );
    }
    // Upper bound: what loss does the TRUE expert mean action produce?
    let mut rng = ChaCha12Rng::seed_from_u64(500);
    let scene = cfg.scenario.sample_scene(Domain::Target, &mut rng).unwrap();
    let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &xprs::simenv::ControlFrame::default(), &cfg.success).unwrap();
    let acts = demo.expert_actions.as_ref().unwrap();
    let mean_a = Array1::from_shape_fn(7, |i| acts.row(i).sum() / acts.ncols() as f64);
    let (best_bc, _) = bc_repeated(&mean_a, acts).unwrap();
    println!("expert-mean bc on its own demo: {best_bc:.4} (T={})", acts.ncols());
}
