// temporary development probe; not part of the deliverable
use s3charq::channel::ChannelRealization;
use s3charq::codec::{adaptive_mask, power_normalize};
use s3charq::config::RunConfig;
use s3charq::data::{generate_splits, PerceptualProjector};
use s3charq::harq::{run_transmission, LinkSystem, Policy};
use s3charq::rng::{purpose, stream_rng};
use s3charq::training::load_system;

fn mean(v: &[f64]) -> f64 { v.iter().sum::<f64>() / v.len() as f64 }

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut num, mut da, mut db) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    num / (da.sqrt() * db.sqrt())
}
fn main() {
    let path = std::env::args().nth(1).expect("ckpt path");
    let cfg_path = std::env::args().nth(2);
    let cfg = match cfg_path {
        Some(p) => RunConfig::load(std::path::Path::new(&p)).unwrap(),
        None => RunConfig::default(),
    };
    let loaded = load_system(std::path::Path::new(&path), &cfg).unwrap();
    let projector = PerceptualProjector::new(cfg.data.seed, cfg.data.feature_count, 1, 16, 16);
    let system = LinkSystem { codec: loaded.codec, retx: loaded.retx, projector, channel_kind: cfg.channel.kind };
    let (_, _, test) = generate_splits(cfg.data.seed, (4, 4, cfg.data.test), 1, 16, 16).unwrap();

    // ablation at 1 dB
    let codec = &system.codec;
    let k = codec.dims.check_dim;
    let (mut with_c, mut no_c) = (Vec::new(), Vec::new());
    let (mut est, mut gt) = (Vec::new(), Vec::new());
    for (i, img) in test.images.iter().enumerate() {
        let mut rng = stream_rng(8, purpose::EVAL, i as u64);
        let x = codec.encode(img, cfg.eval.ratio, 1.0).unwrap();
        let m = adaptive_mask(&x, cfg.eval.ratio).unwrap();
        let (z, _) = power_normalize(&m.values, m.active_count).unwrap();
        let ch = ChannelRealization::draw(system.channel_kind, 1.0, &mut rng);
        let z_recv = ch.transmit(&z, m.active_count, &mut rng);
        let cw = codec.check_encode::<rand_chacha::ChaCha8Rng>(&x, cfg.eval.ratio, 1.0, None).unwrap();
        let (c, _) = power_normalize(&cw.sample, k).unwrap();
        let ch2 = ChannelRealization::draw(system.channel_kind, 1.0, &mut rng);
        let c_recv = ch2.transmit(&c, k, &mut rng);
        let full = codec.joint_decode(&z_recv, &c_recv, 1.0).unwrap();
        let abl = codec.joint_decode(&z_recv, &vec![0.0; k], 1.0).unwrap();
        with_c.push(s3charq::data::psnr(img, &full).unwrap());
        no_c.push(s3charq::data::psnr(img, &abl).unwrap());
    }
    println!("ablation@1dB: with {:.3} dB, zeroed {:.3} dB, gap {:.3} dB", mean(&with_c), mean(&no_c), mean(&with_c) - mean(&no_c));

    // estimator correlation pooled over grid
    for (si, &snr) in cfg.channel.snr_db_grid.iter().enumerate() {
        for (i, img) in test.images.iter().enumerate() {
            let mut rng = stream_rng(cfg.eval.seed, purpose::EVAL, (si * 1_000_000 + i) as u64);
            let rec = run_transmission(&system, i, img, snr, cfg.eval.ratio, cfg.eval.ratio2, &Policy::Never, 0.5, &mut rng).unwrap();
            est.push(rec.estimate_r1);
            gt.push(rec.score_r1);
        }
    }
    println!("estimator pearson r = {:.4} over {} pairs", pearson(&est, &gt), est.len());

    // per-snr correlation and score spread
    let n_test = test.images.len();
    for (si, &snr) in cfg.channel.snr_db_grid.iter().enumerate() {
        let e = &est[si * n_test..(si + 1) * n_test];
        let g = &gt[si * n_test..(si + 1) * n_test];
        let gm = mean(g);
        let gs = (g.iter().map(|v| (v - gm) * (v - gm)).sum::<f64>() / g.len() as f64).sqrt();
        println!("  snr {snr:>4}: per-snr r = {:.4}, score mean {:.4} std {:.4}", pearson(e, g), gm, gs);
    }

    // check-codeword sigma magnitude at eval ratio across snr
    for &snr in &cfg.channel.snr_db_grid {
        let mut sig = Vec::new();
        for img in test.images.iter().take(64) {
            let x = codec.encode(img, cfg.eval.ratio, snr).unwrap();
            let cw = codec.check_encode::<rand_chacha::ChaCha8Rng>(&x, cfg.eval.ratio, snr, None).unwrap();
            sig.push(mean(&cw.sigma));
            let _ = cw.mu;
        }
        let mu_pow: f64 = test.images.iter().take(64).map(|img| {
            let x = codec.encode(img, cfg.eval.ratio, snr).unwrap();
            let cw = codec.check_encode::<rand_chacha::ChaCha8Rng>(&x, cfg.eval.ratio, snr, None).unwrap();
            cw.mu.iter().map(|v| v * v).sum::<f64>() / cw.mu.len() as f64
        }).sum::<f64>() / 64.0;
        println!("  snr {snr:>4}: mean sigma {:.4}, mean mu power {:.4}", mean(&sig), mu_pow);
    }

    // channel-free ceiling and per-ratio score spreads
    for &ratio in &[0.25f64, 0.5, 0.75] {
        let mut free_scores = Vec::new();
        for img in test.images.iter().take(128) {
            let recon = system.channel_free_decode(img, ratio, 13.0).unwrap();
            free_scores.push(system.projector.score(img, &recon).unwrap());
        }
        let mut by_snr = Vec::new();
        for (si, &snr) in cfg.channel.snr_db_grid.iter().enumerate() {
            let mut sc = Vec::new();
            for (i, img) in test.images.iter().take(256).enumerate() {
                let mut rng = stream_rng(555, purpose::EVAL, (si * 1_000_000 + i) as u64);
                let rec = run_transmission(&system, i, img, snr, ratio, ratio, &Policy::Never, 0.5, &mut rng).unwrap();
                sc.push(rec.score_r1);
            }
            by_snr.push(mean(&sc));
        }
        println!("ratio {ratio}: channel-free ceiling score {:.4}, mean score by snr {:?}",
                 mean(&free_scores),
                 by_snr.iter().map(|v| (v * 10000.0).round() / 10000.0).collect::<Vec<_>>());
    }

    // variance decomposition at 1 dB: image difficulty vs noise realization
    {
        let snr = 1.0;
        let mut image_means = Vec::new();
        let mut within_var = 0.0;
        for (i, img) in test.images.iter().take(64).enumerate() {
            let mut scores = Vec::new();
            for t in 0..32u64 {
                let mut rng = stream_rng(4242, purpose::EVAL, (i as u64) * 1000 + t);
                let rec = run_transmission(&system, i, img, snr, cfg.eval.ratio, cfg.eval.ratio2, &Policy::Never, 0.5, &mut rng).unwrap();
                scores.push(rec.score_r1);
            }
            let m = mean(&scores);
            within_var += scores.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / scores.len() as f64;
            image_means.push(m);
        }
        within_var /= 64.0;
        let gm = mean(&image_means);
        let between_var = image_means.iter().map(|v| (v - gm) * (v - gm)).sum::<f64>() / 64.0;
        println!("variance@1dB: between-image {:.6}, within-image(noise) {:.6}, difficulty share {:.3}",
                 between_var, within_var, between_var / (between_var + within_var));
    }

    // per-SNR mean PSNR and score with the full check path
    for &snr in &cfg.channel.snr_db_grid {
        let (mut p, mut s) = (Vec::new(), Vec::new());
        for (i, img) in test.images.iter().enumerate() {
            let mut rng = stream_rng(cfg.eval.seed, purpose::EVAL, 3_000_000 + i as u64 + ((snr as u64) << 8));
            let rec = run_transmission(&system, i, img, snr, cfg.eval.ratio, cfg.eval.ratio2, &Policy::Never, 0.5, &mut rng).unwrap();
            p.push(rec.psnr_r1); s.push(rec.score_r1);
        }
        println!("snr {snr:>4}: mean psnr {:.3} dB, mean score {:.4}", mean(&p), mean(&s));
    }
}
// appended: sigma + per-snr correlation diagnostics
