use mmkgl::data::{generate_synthetic, make_splits, SynthConfig};
use mmkgl::train::{train_fold, ModelConfig, TrainConfig};
use std::time::Instant;

fn main() {
    let synth = generate_synthetic(&SynthConfig::default()).unwrap();
    let plan = make_splits(&synth.dataset, 5, 1).unwrap();
    for lr in [1e-3, 5e-4, 3e-4, 2e-4] {
        let t0 = Instant::now();
        let mut worst_rise = 0.0f64;
        let mut accs = Vec::new();
        for round in 0..5 {
            let tc = TrainConfig { learning_rate: lr, max_epochs: 300, patience: 50, ..TrainConfig::default() };
            let o = train_fold(&synth.dataset, &plan.rounds[round], &ModelConfig::default(), &tc, round as u64).unwrap();
            let h = &o.history;
            for e in 0..h.len().saturating_sub(20) {
                worst_rise = worst_rise.max((h[e + 20] - h[e]) / h[e]);
            }
            accs.push(o.metrics.acc);
        }
        let mean: f64 = accs.iter().sum::<f64>() / 5.0;
        println!("lr {lr:.0e}: mean test acc {mean:.3}, worst window rise {worst_rise:.3e}, wall {:.1?}", t0.elapsed());
    }
}
