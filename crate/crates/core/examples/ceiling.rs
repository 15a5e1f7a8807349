// temporary development probe; not part of the deliverable
use s3charq::config::RunConfig;
use s3charq::data::{generate_splits, PerceptualProjector};
use s3charq::harq::{run_transmission, LinkSystem, Policy};
use s3charq::rng::{purpose, stream_rng};
use s3charq::training::load_system;

fn mean(v: &[f64]) -> f64 { v.iter().sum::<f64>() / v.len() as f64 }

fn main() {
    let path = std::env::args().nth(1).expect("ckpt");
    let cfg_path = std::env::args().nth(2).expect("cfg");
    let cfg = RunConfig::load(std::path::Path::new(&cfg_path)).unwrap();
    let loaded = load_system(std::path::Path::new(&path), &cfg).unwrap();
    let projector = PerceptualProjector::new(cfg.data.seed, cfg.data.feature_count, 1, 16, 16);
    let system = LinkSystem { codec: loaded.codec, retx: loaded.retx, projector, channel_kind: cfg.channel.kind };
    let (_, _, test) = generate_splits(cfg.data.seed, (4, 4, 512), 1, 16, 16).unwrap();
    let snr = 1.0;

    // per-image difficulty: mean score over 16 draws
    let n_img = 256;
    let draws = 16;
    let mut difficulty = vec![0.0; n_img];
    let mut rows: Vec<(f64, f64, f64, usize)> = Vec::new(); // (score, nz2, nc2, img)
    for i in 0..n_img {
        for t in 0..draws {
            let mut rng = stream_rng(31337, purpose::EVAL, (i * 1000 + t) as u64);
            let rec = run_transmission(&system, i, &test.images[i], snr, cfg.eval.ratio, cfg.eval.ratio2, &Policy::Never, 0.5, &mut rng).unwrap();
            let nz2: f64 = rec.sent_jscc.iter().zip(&rec.recv_jscc).map(|(s, r)| (s - r) * (s - r)).sum();
            let nc2: f64 = rec.sent_check.iter().zip(&rec.recv_check).map(|(s, r)| (s - r) * (s - r)).sum();
            difficulty[i] += rec.score_r1 / draws as f64;
            rows.push((rec.score_r1, nz2, nc2, i));
        }
    }
    // OLS score ~ 1 + difficulty + nz2 + nc2 via normal equations (4x4)
    let n = rows.len();
    let feats: Vec<[f64; 4]> = rows.iter().map(|&(_, nz, nc, i)| [1.0, difficulty[i], nz, nc]).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut xtx = [[0.0f64; 4]; 4];
    let mut xty = [0.0f64; 4];
    for (f, &y) in feats.iter().zip(&ys) {
        for a in 0..4 { for b in 0..4 { xtx[a][b] += f[a] * f[b]; } xty[..4].iter_mut().zip(f).for_each(|_| {}); }
        for a in 0..4 { xty[a] += f[a] * y; }
    }
    // gaussian elimination
    let mut m = [[0.0f64; 5]; 4];
    for a in 0..4 { for b in 0..4 { m[a][b] = xtx[a][b]; } m[a][4] = xty[a]; }
    for col in 0..4 {
        let piv = (col..4).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap()).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for b in col..5 { m[col][b] /= d; }
        for a in 0..4 { if a != col { let f = m[a][col]; for b in col..5 { m[a][b] -= f * m[col][b]; } } }
    }
    let beta: Vec<f64> = (0..4).map(|a| m[a][4]).collect();
    let preds: Vec<f64> = feats.iter().map(|f| f.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    let ym = mean(&ys);
    let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    let ss_res: f64 = ys.iter().zip(&preds).map(|(y, p)| (y - p) * (y - p)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    println!("within-SNR OLS (difficulty + realized noise energies): R^2 = {r2:.4}, r = {:.4}", r2.sqrt());
    println!("  (n = {n}, coefficients {beta:?})");

    // difficulty-only model
    let preds2: Vec<f64> = rows.iter().map(|&(_, _, _, i)| difficulty[i]).collect();
    let ss_res2: f64 = ys.iter().zip(&preds2).map(|(y, p)| (y - p) * (y - p)).sum();
    println!("difficulty-only R^2 = {:.4}", 1.0 - ss_res2 / ss_tot);
}
