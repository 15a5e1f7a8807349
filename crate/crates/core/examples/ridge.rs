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

fn features(rec: &s3charq::harq::TransmissionRecord, k_mask: usize) -> Vec<f64> {
    let mut f = vec![1.0, rec.snr_db / 13.0, (rec.snr_db / 13.0) * (rec.snr_db / 13.0)];
    f.extend_from_slice(&rec.recv_jscc);
    f.extend_from_slice(&rec.recv_check);
    f.extend(rec.recv_jscc.iter().map(|v| v * v));
    f.extend(rec.recv_check.iter().map(|v| v * v));
    let ez: f64 = rec.recv_jscc.iter().map(|v| v * v).sum::<f64>() / k_mask as f64;
    let ec: f64 = rec.recv_check.iter().map(|v| v * v).sum::<f64>() / rec.recv_check.len() as f64;
    f.push(ez);
    f.push(ec);
    f.push(ez * rec.snr_db / 13.0);
    f
}

fn main() {
    let path = std::env::args().nth(1).expect("ckpt");
    let cfg = RunConfig::load(std::path::Path::new(&std::env::args().nth(2).expect("cfg"))).unwrap();
    let loaded = load_system(std::path::Path::new(&path), &cfg).unwrap();
    let projector = PerceptualProjector::new(cfg.data.seed, cfg.data.feature_count, 1, 16, 16);
    let system = LinkSystem { codec: loaded.codec, retx: loaded.retx, projector, channel_kind: cfg.channel.kind };
    let (train, _, test) = generate_splits(cfg.data.seed, (cfg.data.codec_train, 4, 1024), 1, 16, 16).unwrap();

    let collect = |imgs: &[s3charq::data::Image], tag: u64| -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (si, &snr) in cfg.channel.snr_db_grid.iter().enumerate() {
            for (i, img) in imgs.iter().enumerate() {
                let mut rng = stream_rng(9000 + tag, purpose::EVAL, (si * 1_000_000 + i) as u64);
                let rec = run_transmission(&system, i, img, snr, cfg.eval.ratio, cfg.eval.ratio2, &Policy::Never, 0.5, &mut rng).unwrap();
                xs.push(features(&rec, rec.k_mask));
                ys.push(rec.score_r1);
            }
        }
        (xs, ys)
    };
    let (xtr, ytr) = collect(&train.images, 1);
    let (xte, yte) = collect(&test.images, 2);
    let d = xtr[0].len();

    // ridge: (X^T X + lambda I) b = X^T y
    let mut xtx = vec![0.0f64; d * d];
    let mut xty = vec![0.0f64; d];
    for (f, &y) in xtr.iter().zip(&ytr) {
        for a in 0..d {
            xty[a] += f[a] * y;
            for b in a..d {
                xtx[a * d + b] += f[a] * f[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[a * d + b] = xtx[b * d + a];
        }
    }
    let lambda = 1e-3 * xtr.len() as f64 / d as f64;
    for a in 0..d {
        xtx[a * d + a] += lambda;
    }
    // gaussian elimination
    let mut m: Vec<f64> = vec![0.0; d * (d + 1)];
    for a in 0..d {
        for b in 0..d {
            m[a * (d + 1) + b] = xtx[a * d + b];
        }
        m[a * (d + 1) + d] = xty[a];
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&a, &b| m[a * (d + 1) + col].abs().partial_cmp(&m[b * (d + 1) + col].abs()).unwrap()).unwrap();
        for b in 0..=d {
            m.swap(col * (d + 1) + b, piv * (d + 1) + b);
        }
        let dv = m[col * (d + 1) + col];
        for b in col..=d {
            m[col * (d + 1) + b] /= dv;
        }
        for a in 0..d {
            if a != col {
                let f = m[a * (d + 1) + col];
                for b in col..=d {
                    m[a * (d + 1) + b] -= f * m[col * (d + 1) + b];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..d).map(|a| m[a * (d + 1) + d]).collect();
    let pred = |xs: &[Vec<f64>]| -> Vec<f64> {
        xs.iter().map(|f| f.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect()
    };
    let ptr = pred(&xtr);
    let pte = pred(&xte);
    println!("ridge(quadratic features, d={d}): train r = {:.4}, test r = {:.4}", pearson(&ptr, &ytr), pearson(&pte, &yte));
    // per-snr breakdown on test
    let n_img = 1024;
    for (si, &snr) in cfg.channel.snr_db_grid.iter().enumerate() {
        let e = &pte[si * n_img..(si + 1) * n_img];
        let g = &yte[si * n_img..(si + 1) * n_img];
        println!("  snr {snr:>4}: ridge test r = {:.4}", pearson(e, g));
    }
}
