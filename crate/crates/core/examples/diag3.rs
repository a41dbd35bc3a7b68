// Scratch diagnostic: can the adapter path fit 12 rotated demos in isolation?
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use xprs::adapt::lr_schedule;
use xprs::config::RunConfig;
use xprs::encoder::{command_feature, CommandTokens, Encoder};
use xprs::loss::{bc_repeated, loss_gradients, ThclConfig};
use xprs::policy::PolicyState;
use xprs::retrieval::{CurrentItem, TrainBatch};
use xprs::simenv::{expert_demo, ControlFrame, Domain, ScenarioSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let sigma: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let rank: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(16);

    let mut cfg = RunConfig::default();
    cfg.scenario.goal_distance = [0.10, 0.20];
    cfg.scenario.start_box_half = 0.15;
    cfg.scenario.chunk_len = Some(4);
    cfg.scenario.target_style.background_intensity = 0.35;
    cfg.scenario.target_frame = ControlFrame { gain: 1.0, rotation_deg: 95.0 };
    cfg.policy.lora_rank = rank;
    cfg.policy.adapted_layers = vec![0, 1, 2];
    cfg.policy.lora_init_sigma = sigma;

    let encoder = Encoder::from_config(&cfg.encoder).unwrap();
    let mut policy = PolicyState::new(&cfg.policy, encoder.params().d_e()).unwrap();
    let command = CommandTokens::new(cfg.scenario.command_tokens.clone(), 32).unwrap();
    let feature = command_feature(&command, policy.d_c());

    // Quick pretrain on Source.
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let mut items = Vec::new();
    for _ in 0..200 {
        let scene = cfg.scenario.sample_scene(Domain::Source, &mut rng).unwrap();
        let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &ControlFrame::default(), &cfg.success).unwrap();
        let e = encoder.encode_normalized(demo.initial_observation().unwrap()).unwrap();
        items.push((e, demo.expert_actions.unwrap()));
    }
    let total = 80 * items.len();
    let mut step = 0;
    for _ in 0..80 {
        for (e, acts) in &items {
            let trace = policy.forward_trace(e, &feature).unwrap();
            let (_, mut g) = bc_repeated(&trace.action, acts).unwrap();
            g.mapv_inplace(|v| v / acts.ncols() as f64);
            let full = policy.backward(&trace, &g, None);
            policy.apply_base_update(&full, lr_schedule(step, total, 0.2));
            step += 1;
        }
    }
    policy.quantize_base_f32();

    // Twelve rotated Target demos.
    let mut demo_rng = ChaCha12Rng::seed_from_u64(9);
    let demos: Vec<CurrentItem> = (0..12)
        .map(|_| {
            let scene = cfg.scenario.sample_scene(Domain::Target, &mut demo_rng).unwrap();
            let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &cfg.scenario.target_frame, &cfg.success).unwrap();
            let e = encoder.encode_normalized(demo.initial_observation().unwrap()).unwrap();
            CurrentItem { embedding: e, command: command.clone(), expert_actions: demo.expert_actions.unwrap() }
        })
        .collect();

    let thcl = ThclConfig { contrastive_weight: 0.0, ..Default::default() };
    let mean_bc = |policy: &PolicyState, demos: &[CurrentItem]| -> f64 {
        demos.iter().map(|d| {
            let trace = policy.forward_trace(&d.embedding, &feature).unwrap();
            bc_repeated(&trace.action, &d.expert_actions).unwrap().0
        }).sum::<f64>() / demos.len() as f64
    };
    println!("start: train bc {:.5}", mean_bc(&policy, &demos));
    for it in 0..500 {
        for d in &demos {
            let batch = TrainBatch {
                current: d.clone(),
                positives: vec![],
                negatives: vec![],
                success_uniform_fallback: false,
                failure_uniform_fallback: false,
            };
            let (_report, mut grads) = loss_gradients(&batch, &policy, &thcl).unwrap();
            xprs::adapt::clip_gradients(&mut grads, 1.0).unwrap();
            policy.apply_adapter_update(&grads, lr, 1e-4);
        }
        if it % 50 == 49 || it < 3 {
            println!("iter {}: train bc {:.6}", it + 1, mean_bc(&policy, &demos));
        }
    }
}
