// Scratch diagnostic: failure modes of Source eval rollouts.
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use xprs::adapt::lr_schedule;
use xprs::config::RunConfig;
use xprs::encoder::{command_feature, CommandTokens, Encoder};
use xprs::loss::bc_repeated;
use xprs::policy::PolicyState;
use xprs::simenv::{expert_demo, rollout, Domain, ScenarioSpec};

fn main() {
    let mut cfg = RunConfig::default();
    cfg.scenario.goal_distance = [0.18, 0.3];
    cfg.scenario.start_box_half = 0.15;
    cfg.scenario.chunk_len = Some(5);
    let pdemos = 300;
    let pep = 150;

    let encoder = Encoder::from_config(&cfg.encoder).unwrap();
    let mut policy = PolicyState::new(&cfg.policy, encoder.params().d_e()).unwrap();
    let command = CommandTokens::new(cfg.scenario.command_tokens.clone(), 32).unwrap();
    let feature = command_feature(&command, policy.d_c());

    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let stride = 5usize;
    let mut items = Vec::new();
    for _ in 0..pdemos {
        let scene = cfg.scenario.sample_scene(Domain::Source, &mut rng).unwrap();
        let demo = expert_demo(&scene, ScenarioSpec::effector_start(&scene), &xprs::simenv::ControlFrame::default(), &cfg.success).unwrap();
        let acts = demo.expert_actions.as_ref().unwrap().clone();
        let mut k = 0;
        while k < demo.len() {
            let e = encoder.encode_normalized(&demo.steps[k].observation).unwrap();
            let end = (k + stride).min(demo.len());
            items.push((e, acts.slice(ndarray::s![.., k..end]).to_owned()));
            k += stride;
        }
    }
    println!("pretrain samples: {}", items.len());
    let total = pep * items.len();
    let mut step = 0;
    for _ in 0..pep {
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

    let mut eval_rng = ChaCha12Rng::seed_from_u64(300);
    let mut fails = 0;
    for i in 0..40 {
        let scene = cfg.scenario.sample_scene(Domain::Source, &mut eval_rng).unwrap();
        let t = rollout(
            &policy, &encoder, &command, &scene,
            ScenarioSpec::effector_start(&scene),
            cfg.scenario.horizon, cfg.scenario.chunk_len, &xprs::simenv::ControlFrame::default(), &cfg.success,
        ).unwrap();
        if !t.success {
            fails += 1;
            // Closest approach of the effector to the goal (object follows).
            let goal = scene.goal_pos;
            let closest = t.steps.iter()
                .map(|s| {
                    let d = [s.effector_pos[0]-goal[0], s.effector_pos[1]-goal[1], s.effector_pos[2]-goal[2]];
                    (d[0]*d[0]+d[1]*d[1]+d[2]*d[2]).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            let final_obj = t.final_object_pos;
            let df = [final_obj[0]-goal[0], final_obj[1]-goal[1], final_obj[2]-goal[2]];
            let final_d = (df[0]*df[0]+df[1]*df[1]+df[2]*df[2]).sqrt();
            let obj_moved = {
                let d = [final_obj[0]-scene.object_pos[0], final_obj[1]-scene.object_pos[1], final_obj[2]-scene.object_pos[2]];
                (d[0]*d[0]+d[1]*d[1]+d[2]*d[2]).sqrt()
            };
            println!(
                "fail {i}: steps {} closest_eff {:.3} final_obj_d {:.3} obj_moved {:.3} force_end {:.2}",
                t.len(), closest, final_d, obj_moved, t.steps.last().unwrap().gripper_force
            );
        }
    }
    println!("fails: {fails}/40");
}
