//! Analytic gradients against central differences of a plain f64 reference.

use gauntlet::layers::{
    conv2d_backward, conv2d_forward, cross_entropy, dense_forward, dense_input_grad, dense_param_grads,
    max_pool2_backward, max_pool2_forward, relu_backward, relu_forward,
};
use gauntlet::network::{loss_and_gradients, Architecture, ClassifierWeights};
use gauntlet::rng::seeded;
use gauntlet::tensor::Tensor;
use rand::Rng;

const H: f64 = 1e-3;
const REL: f64 = 1e-3;
const INSTANCES: u64 = 50;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

#[derive(Default)]
struct Tally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

impl Tally {
    fn record(&mut self, analytic: f64, numeric: f64, what: &str) {
        let e = rel_err(analytic, numeric);
        self.worst = self.worst.max(e);
        self.checked += 1;
        assert!(e <= REL, "{what}: analytic {analytic} vs numeric {numeric} (rel {e:.2e})");
    }

    fn finish(&self, name: &str) {
        let total = self.checked + self.skipped;
        assert!(total > 0);
        assert!(
            (self.skipped as f64) < 0.05 * total as f64,
            "{name}: skipped {} of {total} coordinates at kinks",
            self.skipped
        );
        eprintln!("{name}: {} checked, {} skipped, worst rel {:.2e}", self.checked, self.skipped, self.worst);
    }
}

/// Naive cross-correlation over `[H,W,C]` with `[k,k,C,O]` kernels.
fn conv_ref(x: &[f64], dims: [usize; 3], k: &[f64], kk: usize, out_c: usize, b: &[f64], stride: usize, pad: usize) -> (Vec<f64>, [usize; 3]) {
    let [h, w, c] = dims;
    let oh = (h + 2 * pad - kk) / stride + 1;
    let ow = (w + 2 * pad - kk) / stride + 1;
    let mut out = vec![0.0; oh * ow * out_c];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..out_c {
                let mut s = b[o];
                for dy in 0..kk {
                    for dx in 0..kk {
                        let y = (oy * stride + dy) as isize - pad as isize;
                        let xx = (ox * stride + dx) as isize - pad as isize;
                        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            let xi = (y as usize * w + xx as usize) * c + ci;
                            let ki = ((dy * kk + dx) * c + ci) * out_c + o;
                            s += x[xi] * k[ki];
                        }
                    }
                }
                out[(oy * ow + ox) * out_c + o] = s;
            }
        }
    }
    (out, [oh, ow, out_c])
}

fn relu_ref(v: &mut [f64], sig: &mut Vec<u32>) {
    for x in v {
        sig.push(u32::from(*x > 0.0));
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn pool_ref(x: &[f64], dims: [usize; 3], sig: &mut Vec<u32>) -> (Vec<f64>, [usize; 3]) {
    let [h, w, c] = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (j, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = x[((2 * oy + dy) * w + 2 * ox + dx) * c + ch];
                    if v > best {
                        best = v;
                        arg = j as u32;
                    }
                }
                out[(oy * ow + ox) * c + ch] = best;
                sig.push(arg);
            }
        }
    }
    (out, [oh, ow, c])
}

fn dense_ref(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut out = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for j in 0..n {
            out[j] += xi * w[i * n + j];
        }
    }
    out
}

fn ce_ref(z: &[f64], label: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    lse - z[label]
}

/// Cross-entropy of the whole classifier in f64, plus the pattern of active
/// units and pooling winners.
fn network_ref(arch: &Architecture, params: &[Vec<f64>], x: &[f64], label: usize) -> (f64, Vec<u32>) {
    let k = arch.kernel;
    let [c1, c2, c3] = arch.conv_channels;
    let mut sig = Vec::new();
    let (mut a1, d1) = conv_ref(x, arch.input, &params[0], k, c1, &params[1], 1, 0);
    relu_ref(&mut a1, &mut sig);
    let (mut a2, d2) = conv_ref(&a1, d1, &params[2], k, c2, &params[3], 1, 0);
    relu_ref(&mut a2, &mut sig);
    let (p1, dp1) = pool_ref(&a2, d2, &mut sig);
    let (mut a3, d3) = conv_ref(&p1, dp1, &params[4], k, c3, &params[5], 1, 0);
    relu_ref(&mut a3, &mut sig);
    let (flat, _) = pool_ref(&a3, d3, &mut sig);
    let mut hidden = dense_ref(&flat, &params[6], &params[7]);
    relu_ref(&mut hidden, &mut sig);
    let logits = dense_ref(&hidden, &params[8], &params[9]);
    (ce_ref(&logits, label), sig)
}

fn tiny() -> Architecture {
    Architecture {
        input: [12, 12, 1],
        kernel: 3,
        conv_channels: [2, 3, 3],
        hidden: 8,
        classes: 4,
    }
}

#[test]
pub fn conv2d_matches_reference() {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = seeded(seed);
        let (stride, pad) = [(1, 0), (1, 1), (2, 0), (2, 1)][seed as usize % 4];
        let dims = [rng.random_range(4..8), rng.random_range(4..8), rng.random_range(1..4)];
        let (kk, out_c) = (3, rng.random_range(1..4));
        let x = random_vec(&mut rng, dims.iter().product(), 0.0, 1.0);
        let k = random_vec(&mut rng, kk * kk * dims[2] * out_c, -1.0, 1.0);
        let b = random_vec(&mut rng, out_c, -0.5, 0.5);
        let (y, ydims) = conv_ref(&x, dims, &k, kk, out_c, &b, stride, pad);
        let up = random_vec(&mut rng, y.len(), -1.0, 1.0);

        let xt = Tensor::new(dims.to_vec(), to_f32(&x)).unwrap();
        let kt = Tensor::new(vec![kk, kk, dims[2], out_c], to_f32(&k)).unwrap();
        let bt = Tensor::new(vec![out_c], to_f32(&b)).unwrap();
        let fwd = conv2d_forward(&xt, &kt, &bt, stride, pad).unwrap();
        assert_eq!(fwd.dims(), &ydims);
        for (a, r) in fwd.data().iter().zip(&y) {
            assert!((f64::from(*a) - r).abs() < 1e-5);
        }
        let grads = conv2d_backward(&xt, &kt, stride, pad, &Tensor::new(ydims.to_vec(), to_f32(&up)).unwrap()).unwrap();

        let objective = |x: &[f64], k: &[f64], b: &[f64]| -> f64 {
            conv_ref(x, dims, k, kk, out_c, b, stride, pad).0.iter().zip(&up).map(|(a, u)| a * u).sum()
        };
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += H;
            m[i] -= H;
            let n = (objective(&p, &k, &b) - objective(&m, &k, &b)) / (2.0 * H);
            tally.record(f64::from(grads.input.data()[i]), n, "conv dx");
        }
        for i in 0..k.len() {
            let (mut p, mut m) = (k.clone(), k.clone());
            p[i] += H;
            m[i] -= H;
            let n = (objective(&x, &p, &b) - objective(&x, &m, &b)) / (2.0 * H);
            tally.record(f64::from(grads.kernel.data()[i]), n, "conv dk");
        }
        for i in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[i] += H;
            m[i] -= H;
            let n = (objective(&x, &k, &p) - objective(&x, &k, &m)) / (2.0 * H);
            tally.record(f64::from(grads.bias.data()[i]), n, "conv db");
        }
    }
    tally.finish("conv2d");
}

#[test]
pub fn dense_matches_reference() {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = seeded(100 + seed);
        let (n_in, n_out) = (rng.random_range(1..12), rng.random_range(1..8));
        let x = random_vec(&mut rng, n_in, -1.0, 1.0);
        let w = random_vec(&mut rng, n_in * n_out, -1.0, 1.0);
        let b = random_vec(&mut rng, n_out, -1.0, 1.0);
        let up = random_vec(&mut rng, n_out, -1.0, 1.0);
        let y = dense_forward(&to_f32(&x), &to_f32(&w), &to_f32(&b));
        for (a, r) in y.iter().zip(dense_ref(&x, &w, &b)) {
            assert!((f64::from(*a) - r).abs() < 1e-5);
        }
        let mut dw = vec![0.0f32; w.len()];
        let mut db = vec![0.0f32; n_out];
        dense_param_grads(&to_f32(&x), &to_f32(&up), &mut dw, &mut db);
        let dx = dense_input_grad(&to_f32(&w), &to_f32(&up), n_in);
        let objective = |x: &[f64], w: &[f64], b: &[f64]| -> f64 { dense_ref(x, w, b).iter().zip(&up).map(|(a, u)| a * u).sum() };
        for i in 0..n_in {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += H;
            m[i] -= H;
            tally.record(f64::from(dx[i]), (objective(&p, &w, &b) - objective(&m, &w, &b)) / (2.0 * H), "dense dx");
        }
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += H;
            m[i] -= H;
            tally.record(f64::from(dw[i]), (objective(&x, &p, &b) - objective(&x, &m, &b)) / (2.0 * H), "dense dw");
        }
        for i in 0..n_out {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[i] += H;
            m[i] -= H;
            tally.record(f64::from(db[i]), (objective(&x, &w, &p) - objective(&x, &w, &m)) / (2.0 * H), "dense db");
        }
    }
    tally.finish("dense");
}

#[test]
pub fn relu_and_pool_match_reference() {
    let mut relu = Tally::default();
    let mut pool = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = seeded(200 + seed);
        let dims = [2 * rng.random_range(1..5), 2 * rng.random_range(1..5), rng.random_range(1..3)];
        let n: usize = dims.iter().product();
        let x = random_vec(&mut rng, n, -1.0, 1.0);

        let mut out = to_f32(&x);
        relu_forward(&mut out);
        let up = random_vec(&mut rng, n, -1.0, 1.0);
        let mut g = to_f32(&up);
        relu_backward(&out, &mut g);
        let relu_obj = |x: &[f64]| -> (f64, Vec<u32>) {
            let mut v = x.to_vec();
            let mut sig = Vec::new();
            relu_ref(&mut v, &mut sig);
            (v.iter().zip(&up).map(|(a, u)| a * u).sum(), sig)
        };
        for i in 0..n {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += H;
            m[i] -= H;
            let ((fp, sp), (fm, sm)) = (relu_obj(&p), relu_obj(&m));
            if sp != sm {
                relu.skipped += 1;
                continue;
            }
            relu.record(f64::from(g[i]), (fp - fm) / (2.0 * H), "relu");
        }

        let (pooled, arg, odims) = max_pool2_forward(&to_f32(&x), dims);
        let mut sig = Vec::new();
        let (reference, rdims) = pool_ref(&x, dims, &mut sig);
        assert_eq!(odims, rdims);
        assert_eq!(pooled, to_f32(&reference));
        let up = random_vec(&mut rng, pooled.len(), -1.0, 1.0);
        let g = max_pool2_backward(&to_f32(&up), &arg, n);
        let pool_obj = |x: &[f64]| -> (f64, Vec<u32>) {
            let mut sig = Vec::new();
            let (v, _) = pool_ref(x, dims, &mut sig);
            (v.iter().zip(&up).map(|(a, u)| a * u).sum(), sig)
        };
        for i in 0..n {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += H;
            m[i] -= H;
            let ((fp, sp), (fm, sm)) = (pool_obj(&p), pool_obj(&m));
            if sp != sm {
                pool.skipped += 1;
                continue;
            }
            pool.record(f64::from(g[i]), (fp - fm) / (2.0 * H), "pool");
        }
    }
    relu.finish("relu");
    pool.finish("max-pool");
}

#[test]
pub fn cross_entropy_matches_reference() {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = seeded(300 + seed);
        let n = rng.random_range(2..12);
        let label = rng.random_range(0..n);
        let z = random_vec(&mut rng, n, -5.0, 5.0);
        let (loss, grad) = cross_entropy(&to_f32(&z), label);
        assert!((loss - ce_ref(&z, label)).abs() < 1e-5);
        for i in 0..n {
            let (mut p, mut m) = (z.clone(), z.clone());
            p[i] += H;
            m[i] -= H;
            tally.record(f64::from(grad[i]), (ce_ref(&p, label) - ce_ref(&m, label)) / (2.0 * H), "cross-entropy");
        }
    }
    tally.finish("cross-entropy");
}

#[test]
pub fn whole_network_matches_reference() {
    let arch = tiny();
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = seeded(400 + seed);
        let mut weights = ClassifierWeights::init_he(arch, &mut rng).unwrap();
        for (i, p) in weights.params_mut().iter_mut().enumerate() {
            if i % 2 == 1 {
                for v in p.data_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let params: Vec<Vec<f64>> = weights.params().iter().map(|t| to_f64(t.data())).collect();
        let x = random_vec(&mut rng, 144, 0.0, 1.0);
        let label = rng.random_range(0..arch.classes);
        let xt = Tensor::new(arch.input.to_vec(), to_f32(&x)).unwrap();
        let (loss, grads) = loss_and_gradients(&weights, &xt, label).unwrap();
        assert!((loss - network_ref(&arch, &params, &x, label).0).abs() < 1e-4);

        let mut check = |analytic: f32, plus: (f64, Vec<u32>), minus: (f64, Vec<u32>), what: &str| {
            if plus.1 != minus.1 {
                tally.skipped += 1;
            } else {
                tally.record(f64::from(analytic), (plus.0 - minus.0) / (2.0 * H), what);
            }
        };
        for i in (0..x.len()).step_by(7) {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += H;
            m[i] -= H;
            check(
                grads.input_grad.data()[i],
                network_ref(&arch, &params, &p, label),
                network_ref(&arch, &params, &m, label),
                "network dx",
            );
        }
        for (t, tensor) in params.iter().enumerate() {
            let stride = (tensor.len() / 12).max(1);
            for i in (0..tensor.len()).step_by(stride) {
                let (mut p, mut m) = (params.clone(), params.clone());
                p[t][i] += H;
                m[t][i] -= H;
                check(
                    grads.parameter_grads[t].data()[i],
                    network_ref(&arch, &p, &x, label),
                    network_ref(&arch, &m, &x, label),
                    "network parameter",
                );
            }
        }
    }
    tally.finish("network");
}
