// temporary development probe; not part of the deliverable
use s3charq::config::RunConfig;
use s3charq::data::{generate_splits, PerceptualProjector};
use s3charq::harq::{run_transmission, LinkSystem, Policy};
use s3charq::rng::{purpose, stream_rng};
use s3charq::training::load_system;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    num / (da.sqrt() * db.sqrt())
}

fn main() {
    let path = std::env::args().nth(1).expect("ckpt");
    let cfg = RunConfig::load(std::path::Path::new(&std::env::args().nth(2).expect("cfg"))).unwrap();
    let loaded = load_system(std::path::Path::new(&path), &cfg).unwrap();
    let projector = PerceptualProjector::new(cfg.data.seed, cfg.data.feature_count, 1, 16, 16);
    let system = LinkSystem { codec: loaded.codec, retx: loaded.retx, projector, channel_kind: cfg.channel.kind };
    let (train, _, test) = generate_splits(cfg.data.seed, (cfg.data.codec_train, 4, 512), 1, 16, 16).unwrap();
    for (name, split) in [("train", &train.images[..512]), ("test", &test.images[..])] {
        let (mut est, mut gt) = (Vec::new(), Vec::new());
        for (si, &snr) in cfg.channel.snr_db_grid.iter().enumerate() {
            for (i, img) in split.iter().enumerate() {
                let mut rng = stream_rng(424242, purpose::EVAL, (si * 1_000_000 + i) as u64);
                let rec = run_transmission(&system, i, img, snr, cfg.eval.ratio, cfg.eval.ratio2, &Policy::Never, 0.5, &mut rng).unwrap();
                est.push(rec.estimate_r1);
                gt.push(rec.score_r1);
            }
        }
        println!("{name}: pooled r = {:.4} over {} pairs", pearson(&est, &gt), est.len());
    }
}
