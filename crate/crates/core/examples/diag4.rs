// Scratch diagnostic: cross-domain retrieval composition.
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use xprs::config::RunConfig;
use xprs::encoder::{CommandTokens, Encoder};
use xprs::memory::{DecayConfig, DualBuffers, Experience};
use xprs::retrieval::top_k;
use xprs::simenv::{expert_demo, ControlFrame, Domain, ScenarioSpec};

fn main() {
    let mut cfg = RunConfig::default();
    cfg.scenario.goal_distance = [0.10, 0.20];
    cfg.scenario.start_box_half = 0.15;
    cfg.scenario.target_style.background_intensity = 0.2;
    cfg.scenario.target_style.object_hue = 0.12;
    cfg.scenario.target_style.goal_hue = 0.45;
    cfg.scenario.target_style.effector_hue = 0.75;
    cfg.scenario.target_style.layout_offset = [6, -5];

    let encoder = Encoder::from_config(&cfg.encoder).unwrap();
    let command = CommandTokens::new(vec![1], 32).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut bufs = DualBuffers::new(100, 100);
    let mut n_source = 0usize;
    for (domain, cycle, count) in [(Domain::Source, 0u64, 25), (Domain::Target, 1u64, 25)] {
        for _ in 0..count {
            let scene = cfg.scenario.sample_scene(domain, &mut rng).unwrap();
            let demo = expert_demo(
                &scene,
                ScenarioSpec::effector_start(&scene),
                &ControlFrame::default(),
                &cfg.success,
            )
            .unwrap();
            let e = encoder
                .encode_normalized(demo.initial_observation().unwrap())
                .unwrap();
            bufs.insert(
                Experience::new(e, command.clone(), demo.expert_actions.unwrap(), true, cycle)
                    .unwrap(),
            )
            .unwrap();
            if domain == Domain::Source {
                n_source += 1;
            }
        }
    }
    println!("buffer: {} source then {} target", n_source, bufs.success.len() - n_source);

    let decay = DecayConfig::default();
    let mut src_hits = 0usize;
    let mut total = 0usize;
    let mut sims_src = Vec::new();
    let mut sims_tgt = Vec::new();
    for q in 0..20 {
        let scene = cfg.scenario.sample_scene(Domain::Target, &mut rng).unwrap();
        let demo = expert_demo(
            &scene,
            ScenarioSpec::effector_start(&scene),
            &ControlFrame::default(),
            &cfg.success,
        )
        .unwrap();
        let query = encoder
            .encode_normalized(demo.initial_observation().unwrap())
            .unwrap();
        let got = top_k(&bufs.success, &query, 5, 2, &decay).unwrap();
        for s in &got {
            total += 1;
            if s.index < n_source {
                src_hits += 1;
                sims_src.push(s.similarity);
            } else {
                sims_tgt.push(s.similarity);
            }
        }
        if q < 3 {
            let mix: Vec<String> = got
                .iter()
                .map(|s| {
                    format!(
                        "{}{:.3}",
                        if s.index < n_source { "S" } else { "T" },
                        s.similarity
                    )
                })
                .collect();
            println!("query {q}: top5 = {mix:?}");
        }
    }
    println!(
        "source fraction of retrieved: {:.2} ({src_hits}/{total})",
        src_hits as f64 / total as f64
    );
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!(
        "mean sim of retrieved: source {:.4} target {:.4}",
        mean(&sims_src),
        mean(&sims_tgt)
    );
}
