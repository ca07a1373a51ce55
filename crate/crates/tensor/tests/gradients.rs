use cafu_tensor::gradcheck::check;
use cafu_tensor::ops::Conv2dSpec;
use cafu_tensor::{Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces `y` to a scalar through fixed pseudo-random weights so every
/// output element contributes a distinct sensitivity.
fn project(y: &Var) -> Result<Var> {
    let w = Tensor::randn(y.shape(), 1.0, &mut rng(99));
    Ok(y.mul(&Var::constant(w))?.sum_all())
}

fn assert_grad(name: &str, f: impl Fn(&[Var]) -> Result<Var>, inputs: &[Tensor]) {
    let report = check(f, inputs, STEP).unwrap();
    assert!(
        report.max_rel_err() < TOL,
        "{name}: rel err {:?}",
        report.rel_err
    );
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

#[test]
fn broadcasting_binary_ops() {
    let a = randn(&[2, 3, 4], 1);
    let b = randn(&[3, 1], 2);
    let pos = randn(&[3, 1], 3).map(|v| v.abs() + 0.5);
    assert_grad("add", |v| project(&v[0].add(&v[1])?), &[a.clone(), b.clone()]);
    assert_grad("sub", |v| project(&v[0].sub(&v[1])?), &[a.clone(), b.clone()]);
    assert_grad("mul", |v| project(&v[0].mul(&v[1])?), &[a.clone(), b]);
    assert_grad("div", |v| project(&v[0].div(&v[1])?), &[a, pos]);
}

#[test]
fn unary_ops() {
    // Keep relu inputs away from the kink.
    let x = randn(&[3, 5], 4).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let pos = x.map(|v| v.abs() + 0.1);
    assert_grad("relu", |v| project(&v[0].relu()), std::slice::from_ref(&x));
    assert_grad("sigmoid", |v| project(&v[0].sigmoid()), std::slice::from_ref(&x));
    assert_grad("silu", |v| project(&v[0].silu()), std::slice::from_ref(&x));
    assert_grad("gelu", |v| project(&v[0].gelu()), std::slice::from_ref(&x));
    assert_grad("softplus", |v| project(&v[0].softplus()), std::slice::from_ref(&x));
    assert_grad("exp", |v| project(&v[0].exp()), std::slice::from_ref(&x));
    assert_grad("ln", |v| project(&v[0].ln()), &[pos]);
    assert_grad("square", |v| project(&v[0].square()), std::slice::from_ref(&x));
    assert_grad("affine", |v| project(&v[0].scale(-2.5).add_scalar(1.0)), &[x]);
}

#[test]
fn reductions() {
    let x = randn(&[2, 3, 4], 5);
    assert_grad("sum_all", |v| Ok(v[0].sum_all().square()), std::slice::from_ref(&x));
    assert_grad("mean_all", |v| Ok(v[0].mean_all().square()), std::slice::from_ref(&x));
    assert_grad("sum_axes", |v| project(&v[0].sum_axes(&[0, 2])?.square()), std::slice::from_ref(&x));
    assert_grad("mean_axes", |v| project(&v[0].mean_axes(&[1])?.square()), std::slice::from_ref(&x));
    assert_grad("max_axis", |v| project(&v[0].max_axis(1)?), &[x]);
}

#[test]
fn shape_ops() {
    let x = randn(&[2, 3, 4], 6);
    let y = randn(&[2, 2, 4], 7);
    assert_grad("reshape", |v| project(&v[0].reshape(&[6, 4])?.square()), std::slice::from_ref(&x));
    assert_grad("permute", |v| project(&v[0].permute(&[2, 0, 1])?.square()), std::slice::from_ref(&x));
    assert_grad("concat", |v| project(&Var::concat(&[&v[0], &v[1]], 1)?.square()), &[x.clone(), y]);
    assert_grad("narrow", |v| project(&v[0].narrow(2, 1, 2)?.square()), std::slice::from_ref(&x));
    assert_grad("flip", |v| project(&v[0].flip(1)?.square()), &[x]);
}

#[test]
fn matmul_variants() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { randn(&[2, 4, 3], 8) } else { randn(&[2, 3, 4], 8) };
        let b = if tb { randn(&[2, 5, 4], 9) } else { randn(&[2, 4, 5], 9) };
        assert_grad("bmm", |v| project(&v[0].matmul_t(&v[1], ta, tb)?), &[a, b]);
    }
    let a = randn(&[2, 3, 4], 10);
    let shared = randn(&[4, 5], 11);
    assert_grad("shared rhs", |v| project(&v[0].matmul(&v[1])?), &[a, shared]);
    let x = randn(&[2, 3, 4], 12);
    let w = randn(&[6, 4], 13);
    let b = randn(&[6], 14);
    assert_grad("linear", |v| project(&v[0].linear(&v[1], Some(&v[2]))?), &[x, w, b]);
}

#[test]
fn convolutions() {
    let cases = [
        ([1, 3, 5, 5], [4, 3, 3, 3], Conv2dSpec::new(1, 1)),
        ([2, 2, 6, 5], [3, 2, 3, 3], Conv2dSpec::new(2, 1)),
        ([1, 2, 4, 4], [3, 2, 1, 1], Conv2dSpec::default()),
        ([1, 3, 5, 5], [3, 1, 3, 3], Conv2dSpec::new(1, 1).grouped(3)),
        ([1, 4, 5, 5], [2, 2, 3, 3], Conv2dSpec::new(1, 0).grouped(2)),
        ([1, 2, 9, 9], [2, 2, 7, 7], Conv2dSpec::new(4, 3)),
    ];
    for (i, (xs, ws, spec)) in cases.into_iter().enumerate() {
        let x = randn(&xs, 20 + i as u64);
        let w = randn(&ws, 30 + i as u64);
        let b = randn(&[ws[0]], 40 + i as u64);
        assert_grad("conv2d", |v| project(&v[0].conv2d(&v[1], Some(&v[2]), spec)?), &[x, w, b]);
    }
}

#[test]
fn pooling_and_resize() {
    let x = randn(&[1, 2, 6, 6], 50);
    assert_grad("max_pool 2/2", |v| project(&v[0].max_pool2d(2, 2, 0)?), std::slice::from_ref(&x));
    assert_grad("max_pool 3/2/1", |v| project(&v[0].max_pool2d(3, 2, 1)?), std::slice::from_ref(&x));
    assert_grad("adaptive avg", |v| project(&v[0].adaptive_avg_pool2d(4, 3)?), std::slice::from_ref(&x));
    assert_grad("bilinear up", |v| project(&v[0].upsample_bilinear(2)?), std::slice::from_ref(&x));
    assert_grad("bilinear down", |v| project(&v[0].resize_bilinear(4, 5)?), &[x]);
}

#[test]
fn normalisation_and_softmax() {
    let x = randn(&[2, 3, 2, 2], 60);
    let g = randn(&[3], 61);
    let b = randn(&[3], 62);
    assert_grad(
        "batch_norm train",
        |v| project(&v[0].batch_norm(&v[1], &v[2], None, 1e-5)?.0),
        &[x.clone(), g.clone(), b.clone()],
    );
    let (rm, rv) = (vec![0.1, -0.2, 0.3], vec![1.5, 0.7, 2.0]);
    assert_grad(
        "batch_norm eval",
        |v| project(&v[0].batch_norm(&v[1], &v[2], Some((&rm, &rv)), 1e-5)?.0),
        &[x.clone(), g.clone(), b.clone()],
    );
    assert_grad(
        "layer_norm",
        |v| project(&v[0].layer_norm(1, &v[1], &v[2], 1e-6)?),
        &[x.clone(), g, b],
    );
    assert_grad("softmax", |v| project(&v[0].softmax(1)?), std::slice::from_ref(&x));
    assert_grad("log_softmax", |v| project(&v[0].log_softmax(1)?), &[x]);
}

#[test]
fn untracked_inputs_record_nothing() {
    let a = Var::constant(randn(&[2, 2], 70));
    let y = a.relu().exp().sum_all();
    assert!(!y.is_tracked());
}

#[test]
fn shared_subexpressions_accumulate() {
    let tape = cafu_tensor::Tape::new();
    let x = tape.leaf(Tensor::new(&[1], vec![3.0]).unwrap());
    let y = x.mul(&x).unwrap().add(&x).unwrap();
    let grads = tape.backward(&y).unwrap();
    assert_eq!(grads.get(&x).unwrap().data(), &[7.0]);
}
