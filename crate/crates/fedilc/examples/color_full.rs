use fedilc::experiment::{DatasetKind, ExperimentConfig};
use fedilc::federation::{run_experiment, AlgoMode};

fn main() {
    let mut cfg = ExperimentConfig::preset(DatasetKind::ColorDigits);
    cfg.mnist_images = Some("data/train-images-idx3-ubyte".into());
    cfg.mnist_labels = Some("data/train-labels-idx1-ubyte".into());
    let t0 = std::time::Instant::now();
    for mode in [AlgoMode::FedSgd, AlgoMode::FishrInterGeo] {
        let mut best = Vec::new();
        for seed in 1..=5u64 {
            let data = cfg.build_dataset(seed).unwrap();
            let spec = cfg.model_spec(&data).unwrap();
            let mut rc = cfg.round_config(seed);
            rc.mode = mode;
            let log = run_experiment(&data, &spec, &rc).unwrap();
            let b = log.best();
            println!("  {mode} seed {seed}: best round {} ood {:.4} acc {:.4} auroc {:.4} auprc {:.4}  [{:?}]",
                b.round, b.ood.loss, b.ood.accuracy, b.ood.auroc, b.ood.auprc, t0.elapsed());
            best.push(b.ood.loss);
        }
        let mean = best.iter().sum::<f64>() / best.len() as f64;
        println!("{mode}: mean min-OOD {mean:.4}");
    }
    println!("total {:?}", t0.elapsed());
}
