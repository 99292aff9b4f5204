//! Every primitive's vector-Jacobian product against central differences.

use noisyact::autodiff::{Tape, VarId};
use noisyact::gradcheck::{check_gradient, FD_TOLERANCE};
use noisyact::{Result, RngStream, Tensor};

const POINTS: usize = 100;
const KINK_BAND: f64 = 1e-4;

type Op<'a> = dyn Fn(&mut Tape, &[VarId]) -> Result<VarId> + 'a;

/// Random point away from every kink in `kinks`.
fn sample(rng: &mut RngStream, lo: f64, hi: f64, kinks: &[f64]) -> f64 {
    loop {
        let v = rng.uniform(lo, hi);
        if kinks.iter().all(|k| (v - k).abs() > KINK_BAND) {
            return v;
        }
    }
}

fn random_tensor(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64, kinks: &[f64]) -> Tensor {
    Tensor::from_fn(shape, |_| sample(rng, lo, hi, kinks))
}

/// Scalarizes `op` as `sum(w ∘ op(inputs))` with fixed random `w` and checks
/// the gradient with respect to every input.
fn check(name: &str, op: &Op<'_>, inputs: &[Tensor], weight_seed: u64) {
    let mut probe = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| probe.leaf(t.clone())).collect();
    let out = op(&mut probe, &ids).unwrap();
    let out_shape = probe.value(out).shape().to_vec();
    let mut wr = RngStream::new(weight_seed);
    let w = random_tensor(&mut wr, &out_shape, -1.0, 1.0, &[]);

    let loss = |vals: &[Tensor]| -> (Tape, Vec<VarId>, VarId) {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &ids).unwrap();
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).unwrap();
        let root = tape.sum(prod).unwrap();
        (tape, ids, root)
    };

    let (tape, ids, root) = loss(inputs);
    let grads = tape.backward(root).unwrap();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).unwrap().clone();
        let f = |probe: &Tensor| {
            let mut vals = inputs.to_vec();
            vals[k] = probe.clone();
            let (t, _, r) = loss(&vals);
            t.value(r).data()[0]
        };
        if let Err(m) = check_gradient(f, &inputs[k], &analytic, FD_TOLERANCE) {
            panic!("{name} input {k}: {m:?}");
        }
    }
}

fn unary(name: &str, op: impl Fn(&mut Tape, VarId) -> Result<VarId>, lo: f64, hi: f64, kinks: &[f64]) {
    let mut rng = RngStream::new(name.len() as u64);
    let x = random_tensor(&mut rng, &[POINTS], lo, hi, kinks);
    check(name, &|t, ids| op(t, ids[0]), &[x], 1);
}

#[test]
fn elementwise_unary() {
    unary("scale", |t, x| t.scale(x, -2.5), -3.0, 3.0, &[]);
    unary("shift", |t, x| t.shift(x, 0.75), -3.0, 3.0, &[]);
    unary("clip", |t, x| t.clip(x, -1.0, 1.0), -3.0, 3.0, &[-1.0, 1.0]);
    unary("clip01", |t, x| t.clip(x, 0.0, 1.0), -2.0, 2.0, &[0.0, 1.0]);
    unary("sigmoid", |t, x| t.sigmoid(x), -8.0, 8.0, &[]);
    unary("tanh", |t, x| t.tanh(x), -4.0, 4.0, &[]);
    unary("exp", |t, x| t.exp(x), -3.0, 3.0, &[]);
    unary("log", |t, x| t.log(x), 0.05, 5.0, &[]);
    unary("square", |t, x| t.square(x), -3.0, 3.0, &[]);
    unary("abs", |t, x| t.abs(x), -3.0, 3.0, &[0.0]);
    unary("sign", |t, x| t.sign(x), -3.0, 3.0, &[0.0]);
    unary("relu", |t, x| t.relu(x), -3.0, 3.0, &[0.0]);
}

#[test]
fn elementwise_binary() {
    let mut rng = RngStream::new(7);
    let a = random_tensor(&mut rng, &[POINTS], -2.0, 2.0, &[]);
    let b = random_tensor(&mut rng, &[POINTS], -2.0, 2.0, &[]);
    check("add", &|t, v| t.add(v[0], v[1]), &[a.clone(), b.clone()], 2);
    check("sub", &|t, v| t.sub(v[0], v[1]), &[a.clone(), b.clone()], 3);
    check("mul", &|t, v| t.mul(v[0], v[1]), &[a.clone(), b.clone()], 4);
    let mask: Vec<bool> = (0..POINTS).map(|_| rng.below(2) == 1).collect();
    check("select", &move |t, v| t.select(mask.clone(), v[0], v[1]), &[a, b], 5);
}

#[test]
fn linear_algebra() {
    let mut rng = RngStream::new(11);
    let a = random_tensor(&mut rng, &[10, 7], -1.0, 1.0, &[]);
    let b = random_tensor(&mut rng, &[7, 10], -1.0, 1.0, &[]);
    check("matmul", &|t, v| t.matmul(v[0], v[1]), &[a.clone(), b], 6);
    let bias = random_tensor(&mut rng, &[7], -1.0, 1.0, &[]);
    check("add_bias", &|t, v| t.add_bias(v[0], v[1]), &[a.clone(), bias], 7);
    check("sum", &|t, v| t.sum(v[0]), std::slice::from_ref(&a), 8);
    check("mean_axis0", &|t, v| t.mean_axis(v[0], 0), std::slice::from_ref(&a), 9);
    check("mean_axis1", &|t, v| t.mean_axis(v[0], 1), &[a], 10);
    let s = random_tensor(&mut rng, &[1], -1.0, 1.0, &[]);
    check("broadcast_scalar", &|t, v| t.broadcast(v[0], &[10, 10]), &[s], 11);
    let row = random_tensor(&mut rng, &[10], -1.0, 1.0, &[]);
    check("broadcast_row", &|t, v| t.broadcast(v[0], &[10, 10]), &[row], 12);
}

#[test]
fn softmax_cross_entropy() {
    let mut rng = RngStream::new(13);
    let logits = random_tensor(&mut rng, &[20, 5], -4.0, 4.0, &[]);
    let targets: Vec<usize> = (0..20).map(|_| rng.below(5)).collect();
    check(
        "softmax_cross_entropy",
        &move |t, v| t.softmax_cross_entropy(v[0], &targets),
        &[logits],
        14,
    );
}

#[test]
fn composite_graph_with_reuse() {
    // x feeds several paths, so gradient accumulation is exercised.
    let mut rng = RngStream::new(17);
    let x = random_tensor(&mut rng, &[POINTS], -2.0, 2.0, &[-1.0, 1.0]);
    let op = |t: &mut Tape, v: &[VarId]| -> Result<VarId> {
        let s = t.sigmoid(v[0])?;
        let c = t.clip(v[0], -1.0, 1.0)?;
        let m = t.mul(s, c)?;
        let e = t.tanh(m)?;
        let sq = t.square(v[0])?;
        t.add(e, sq)
    };
    check("composite", &op, &[x], 18);
}

#[test]
fn kink_conventions() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 1.0, 0.0, 0.5, 2.0]));
    let c = tape.clip(x, -1.0, 1.0).unwrap();
    let s = tape.sum(c).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0, 0.0]);

    for (name, f) in [
        ("abs", Tape::abs as fn(&mut Tape, VarId) -> Result<VarId>),
        ("relu", Tape::relu),
        ("sign", Tape::sign),
    ] {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]));
        let y = f(&mut tape, x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0], "{name}'(0)");
    }
}
