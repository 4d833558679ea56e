//! Minimal reverse-mode autodiff over row-major tensors.

pub mod graph;
pub mod optim;
pub mod params;

pub use graph::{gelu, GeluKind, Grads, Graph, Var};
pub use optim::{AdamW, StepSchedule};
pub use params::{ParamId, ParamSet};
pub mod gradcheck;

pub use gradcheck::{check_gradients, weighted_sum, GradCheck};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe(g: &mut Graph<f64>, x: Var) -> Var {
        let n = g.value(x).len();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 6.0).collect();
        weighted_sum(g, x, &w)
    }

    fn assert_ok(report: &[GradCheck], tol: f64) {
        for r in report {
            assert!(r.rel_error < tol, "{}: rel error {}", r.name, r.rel_error);
        }
    }

    #[test]
    fn conv_linear_norm_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::<f64>::new();
        let x = p.uniform("x", &[2, 3, 7, 6], 1.0, &mut rng);
        let w = p.uniform("w", &[4, 3, 3, 3], 0.5, &mut rng);
        let b = p.uniform("b", &[4], 0.5, &mut rng);
        let lw = p.uniform("lw", &[4, 5], 0.5, &mut rng);
        let lb = p.uniform("lb", &[5], 0.5, &mut rng);
        let gm = p.uniform("gamma", &[5], 1.0, &mut rng);
        let bt = p.uniform("beta", &[5], 1.0, &mut rng);
        let report = check_gradients(&p, 1e-6, |g, p| {
            let (x, w, b) = (g.param(p, x), g.param(p, w), g.param(p, b));
            let y = g.conv2d(x, w, b, 2, 1);
            let y = g.gelu(y, GeluKind::Exact);
            let t = g.tokens(y);
            let (lw, lb) = (g.param(p, lw), g.param(p, lb));
            let z = g.linear(t, lw, Some(lb));
            let (gm, bt) = (g.param(p, gm), g.param(p, bt));
            let z = g.layer_norm(z, gm, bt);
            let z = g.gelu(z, GeluKind::Tanh);
            probe(g, z)
        });
        assert_ok(&report, 1e-6);
    }

    #[test]
    fn attention_and_broadcast_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::<f64>::new();
        let q = p.uniform("q", &[3, 4], 1.0, &mut rng);
        let mem = p.uniform("mem", &[2, 4, 3, 2], 1.0, &mut rng);
        let mem2 = p.uniform("mem2", &[2, 4, 1, 2], 1.0, &mut rng);
        let t = p.uniform("t", &[2, 4], 1.0, &mut rng);
        let report = check_gradients(&p, 1e-6, |g, p| {
            let t = g.param(p, t);
            let q = g.param(p, q);
            let q = g.tile(q, 2);
            let q = g.add_rows(q, t);
            let m = g.param(p, mem);
            let m = g.add_channels(m, t);
            let m = g.tokens(m);
            let m2 = g.param(p, mem2);
            let m2 = g.tokens(m2);
            let m = g.concat_tokens(&[m, m2]);
            let s = g.sigmoid(m);
            let a = g.attention(q, m, s, 2);
            let c = g.cols(a, 1, 3);
            let e = g.exp(c);
            let e = g.scale(e, 0.5);
            let r = g.relu(a);
            let r = g.reshape(r, &[24]);
            let pr = probe(g, r);
            let pe = probe(g, e);
            let w: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
            let mix = g.mix_tokens(s, w, 2);
            let pm = probe(g, mix);
            let sum = g.add(pe, pr);
            g.add(sum, pm)
        });
        assert_ok(&report, 1e-6);
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut g = Graph::<f64>::new();
        let q = g.input(vec![1.0, 0.0, 0.0, 1.0], &[1, 2, 2]);
        let k = g.input(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[1, 3, 2]);
        let v = g.input(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], &[1, 3, 2]);
        let o = g.attention(q, k, v, 1);
        assert!(g.value(o).iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn adamw_decays_and_descends() {
        let mut p = ParamSet::<f64>::new();
        let id = p.add("x", &[2], vec![1.0, -2.0]);
        let mut opt = AdamW::new(&p, 0.0);
        for _ in 0..500 {
            let grad: Vec<f64> = p.value(id).iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[Some(grad)], 0.05, &[]);
        }
        assert!(p.value(id).iter().all(|x| x.abs() < 0.05));
        let mut q = ParamSet::<f64>::new();
        let id = q.add("x", &[1], vec![1.0]);
        let mut opt = AdamW::new(&q, 0.1);
        opt.step(&mut q, &[None], 0.5, &[]);
        assert!((q.value(id)[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn step_schedule_rescales_milestones() {
        let s = StepSchedule::scaled(2e-4, 0.5, &[85, 125, 165, 205], 250, 30);
        assert_eq!(s.milestones, vec![10, 15, 20, 25]);
        assert_eq!(s.lr_at(0), 2e-4);
        assert_eq!(s.lr_at(10), 1e-4);
        assert_eq!(s.lr_at(29), 2e-4 / 16.0);
    }
}
