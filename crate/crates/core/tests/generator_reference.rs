//! The generator forward pass against a straight-line evaluation written with
//! plain nested vectors, sharing no code with the crate's kernels.

use protogen_core::generator::{generate_prototype, AttentionConfig, GeneratorParams, Mode};
use protogen_core::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn to_mat(m: &Matrix) -> Mat {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn reference_prototype(p: &GeneratorParams, x: &Mat) -> Vec<f64> {
    let c = &p.config;
    let k = x.len();
    let mut concat: Mat = vec![Vec::new(); k];
    for h in 0..c.heads {
        let q = mul(x, &to_mat(&p.w_q[h]));
        let kk = mul(x, &to_mat(&p.w_k[h]));
        let v = mul(x, &to_mat(&p.w_v[h]));
        for i in 0..k {
            let logits: Vec<f64> = (0..k)
                .map(|j| q[i].iter().zip(&kk[j]).map(|(a, b)| a * b).sum::<f64>() / (c.d_k as f64).sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut z = vec![0.0; c.d_v];
            for j in 0..k {
                for (zz, vv) in z.iter_mut().zip(&v[j]) {
                    *zz += exps[j] / total * vv;
                }
            }
            concat[i].extend(z);
        }
    }
    let zstar = mul(&concat, &to_mat(&p.w_o));
    let proj = mul(&zstar, &to_mat(&p.w_fc));
    let mut proto = vec![0.0; c.d_model];
    for i in 0..k {
        let r: Vec<f64> = x[i].iter().zip(&proj[i]).map(|(a, b)| a + b).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64;
        for (d, v) in r.iter().enumerate() {
            let ln = p.ln_gamma.data()[d] * (v - mean) / (var + c.layer_norm_eps).sqrt() + p.ln_beta.data()[d];
            proto[d] += ln / k as f64;
        }
    }
    proto
}

fn random_supports(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Mat {
    (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

#[test]
fn matches_reference_evaluation() {
    let config = AttentionConfig {
        heads: 2,
        d_model: 8,
        d_k: 4,
        d_v: 4,
        dropout_rate: 0.0,
        layer_norm_eps: 1e-5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..20 {
        let mut params = GeneratorParams::init(config, trial).unwrap();
        for x in params.ln_gamma.data_mut().iter_mut().chain(params.ln_beta.data_mut()) {
            *x += rng.random_range(-0.3..0.3);
        }
        let x = random_supports(&mut rng, 5, 8);
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let got = generate_prototype(&params, &refs, Mode::Eval).unwrap().prototype;
        let want = reference_prototype(&params, &x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn support_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let k = rng.random_range(1..8);
        let heads = [1, 2, 4][trial % 3];
        let config = AttentionConfig {
            heads,
            d_model: 8,
            d_k: 2,
            d_v: 3,
            dropout_rate: 0.0,
            layer_norm_eps: 1e-5,
        };
        let params = GeneratorParams::init(config, trial as u64).unwrap();
        let mut x = random_supports(&mut rng, k, 8);
        let a = {
            let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
            generate_prototype(&params, &refs, Mode::Eval).unwrap().prototype
        };
        x.shuffle(&mut rng);
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let b = generate_prototype(&params, &refs, Mode::Eval).unwrap().prototype;
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}
