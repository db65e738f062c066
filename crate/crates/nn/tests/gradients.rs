use lastraj_nn::gradcheck::{check_gradients, layer_suite, REL_TOL};
use lastraj_nn::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sum_of_parameters_has_unit_gradient() {
    let mut t = Tape::new();
    let p = t.param(Tensor::row(&[0.3, -1.0, 7.0]));
    let s = t.sum(p);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(p).unwrap().data, vec![1.0; 3]);
}

#[test]
fn squared_product_hand_chain_rule() {
    let mut t = Tape::new();
    let w = t.param(Tensor::scalar(3.0));
    let x = t.constant(Tensor::scalar(2.0));
    let wx = t.matmul(w, x);
    let l = t.square(wx);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(w).unwrap().item(), 24.0);
}

#[test]
fn disconnected_parameter_gets_no_gradient() {
    let mut t = Tape::new();
    let a = t.param(Tensor::scalar(1.0));
    let b = t.param(Tensor::scalar(2.0));
    let l = t.square(a);
    let g = t.backward(l).unwrap();
    assert!(g.get(b).is_none());
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut r = |n: usize, c: usize| Tensor::new(n, c, (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let x = r(3, 2);
    let inputs = vec![r(2, 4), r(1, 4), r(4, 2), r(1, 2)];
    assert_eq!(inputs.iter().map(Tensor::len).sum::<usize>(), 22);
    let res = check_gradients(&inputs, |t, v| {
        let xv = t.constant(x.clone());
        let h = t.matmul(xv, v[0]);
        let h = t.add_row(h, v[1]);
        let h = t.tanh(h);
        let o = t.matmul(h, v[2]);
        let o = t.add_row(o, v[3]);
        let o = t.square(o);
        Ok(t.mean(o))
    })
    .unwrap();
    assert_eq!(res.skipped, 0);
    assert!(res.worst <= REL_TOL, "{res:?}");
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let a = Tensor::new(2, 3, (0..6).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap();
        let b = Tensor::new(2, 3, (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let c = Tensor::new(2, 1, (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let res = check_gradients(&[a, b, c], |t, v| {
            let l = t.log(v[0]);
            let e = t.exp(v[1]);
            let s = t.sigmoid(v[1]);
            let sp = t.softplus(v[1]);
            let ab = t.abs(v[1]);
            let cl = t.clamp(v[1], -1.0, 1.0);
            let lr = t.leaky_relu(v[1], 0.2);
            let mc = t.mul_col(v[0], v[2]);
            let sm = t.softmax_rows(v[1]);
            let mr = t.mean_rows(v[0]);
            let tr = t.tile_rows(mr, 2);
            let rr = t.repeat_rows(v[2], 3);
            let parts = [l, e, s, sp, ab, cl, lr, mc, sm, tr];
            let mut acc = t.sub(parts[0], parts[1]);
            for (k, &p) in parts.iter().enumerate().skip(2) {
                let sc = t.affine(p, 0.5 + k as f64 * 0.1, 0.3);
                acc = t.mul(acc, sc);
            }
            let cols = t.concat_cols(&[acc, v[2]]);
            let rows = t.concat_rows(&[cols, cols]);
            let sl = t.slice_rows(rows, 1, 2);
            let sc = t.slice_cols(sl, 1, 3);
            let g = t.gather_rows(&[(sc, 1), (sc, 0), (sc, 1)]);
            let s1 = t.sum(g);
            let s2 = t.sum(rr);
            let s2 = t.square(s2);
            Ok(t.add(s1, s2))
        })
        .unwrap();
        assert!(res.worst <= REL_TOL, "{res:?}");
        assert!(res.checked > 0);
    }
}

#[test]
fn every_layer_matches_finite_differences() {
    for (name, res) in layer_suite(2024, 50).unwrap() {
        assert!(res.worst <= REL_TOL, "{name}: {res:?}");
        assert!(res.skipped * 100 <= res.checked, "{name}: too many kinks {res:?}");
    }
}
