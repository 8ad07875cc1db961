use gridctl::netmodel::*;
use gridctl::stochastic::*;
use gridctl::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn plain(a0: DMatrix<f64>, b0: DMatrix<f64>, c0: DMatrix<f64>) -> LinearModel<f64> {
    LinearModel::from_matrices(a0, b0, c0).unwrap()
}

fn no_noise(m: usize) -> UncertaintySpec<f64> {
    UncertaintySpec::multiplicative(vec![0.0; m])
}

#[test]
fn zero_gain_keeps_open_loop() {
    let case = load_case(data("case9.json")).unwrap();
    let eq = solve_equilibrium::<f64>(&case, &case.nominal_injection()).unwrap();
    let lm = linearize(&case, &eq, &MeasSelection::Full).unwrap();
    let k0 = DMatrix::zeros(lm.m(), lm.s());
    let cl = assemble_closed_loop(&lm, &k0, &no_noise(lm.m()), &vec![0.0; lm.m()]).unwrap();
    assert_eq!(cl.a, lm.a0);
    assert!(cl.c.iter().all(|v| *v == 0.0));
    let spec = UncertaintySpec::multiplicative(vec![5.0; lm.m()]);
    let cl = cl.with_spec(spec).unwrap();
    assert!(multiplicative_channels(&cl).iter().all(|c| !c.active));
}

#[test]
fn smib_omega_feedback() {
    let case = load_case(data("smib.json")).unwrap();
    let eq = solve_equilibrium::<f64>(&case, &case.nominal_injection()).unwrap();
    let lm = linearize(&case, &eq, &"rows=0".parse().unwrap()).unwrap();
    let k0 = DMatrix::from_element(1, 1, 0.5);
    let cl = assemble_closed_loop(&lm, &k0, &no_noise(1), &[0.0]).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let want = lm.a0[(i, j)] - if j == 0 { 0.5 * lm.b0[(i, 0)] } else { 0.0 };
            assert_eq!(cl.a[(i, j)], want);
        }
    }
}

#[test]
fn dimension_errors() {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let m = plain(-&i2, i2.clone(), i2.clone());
    assert!(matches!(assemble_closed_loop(&m, &DMatrix::zeros(1, 2), &no_noise(2), &[0.0, 0.0]), Err(Error::Dimension(_))));
    assert!(matches!(assemble_closed_loop(&m, &i2, &no_noise(3), &[0.0, 0.0]), Err(Error::Dimension(_))));
    assert!(matches!(assemble_closed_loop(&m, &i2, &no_noise(2), &[0.0]), Err(Error::Dimension(_))));
    let neg = UncertaintySpec::multiplicative(vec![-1.0, 0.0]);
    assert!(matches!(assemble_closed_loop(&m, &i2, &neg, &[0.0, 0.0]), Err(Error::Validation { .. })));
}

#[test]
fn channel_extraction() {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let ch = channels_from(&i2, &c);
    assert_eq!(ch[0].b.as_slice(), &[1.0, 0.0]);
    assert_eq!(ch[0].c.as_slice(), &[1.0, 2.0]);
    assert_eq!(ch[1].b.as_slice(), &[0.0, 1.0]);
    assert_eq!(ch[1].c.as_slice(), &[3.0, 4.0]);
    assert!(ch.iter().all(|c| c.active));

    let m = plain(-&i2, i2.clone(), i2.clone());
    let cl = assemble_closed_loop(&m, &c, &UncertaintySpec::multiplicative(vec![1.0, 0.0]), &[0.0, 0.0]).unwrap();
    let ch = multiplicative_channels(&cl);
    assert!(ch[0].active && !ch[1].active);
}

#[test]
fn channels_reconstruct_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let sum = channels_from(&b, &c).iter().fold(DMatrix::zeros(3, 3), |acc, ch| acc + ch.outer());
        assert!((sum - &b * &c).amax() <= 1e-14);
    }
}

#[test]
fn shift_zero_input_is_identity() {
    let case = load_case(data("smib.json")).unwrap();
    let eq = solve_equilibrium::<f64>(&case, &case.nominal_injection()).unwrap();
    let lm = linearize(&case, &eq, &MeasSelection::Full).unwrap();
    let cl = assemble_closed_loop(&lm, &DMatrix::zeros(1, 3), &no_noise(1), &[0.0]).unwrap();
    let sh = shift_coordinates(&cl).unwrap();
    assert!(sh.z_offset.iter().all(|v| *v == 0.0));
    assert!(sh.forcing.iter().all(|f| f.iter().all(|v| *v == 0.0)));
}

#[test]
fn shift_residual_on_random_hurwitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = 4;
        let a0 = DMatrix::from_fn(n, n, |i, j| rng.random_range(-1.0..1.0) - if i == j { 4.0 } else { 0.0 });
        let b0 = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let lm = plain(a0, b0, DMatrix::identity(n, n));
        let k0 = DMatrix::from_fn(2, n, |_, _| rng.random_range(-0.2..0.2));
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let cl = assemble_closed_loop(&lm, &k0, &no_noise(2), &p).unwrap();
        let sh = shift_coordinates(&cl).unwrap();
        let bp = &cl.b * DVector::from_column_slice(&p);
        let r = &cl.a * (-&sh.z_offset) + &bp;
        assert!(r.amax() <= 1e-12 * bp.amax().max(1.0));
        assert!((&cl.a - (&lm.a0 - &lm.b0 * &k0 * &lm.c0)).amax() == 0.0);
    }
}

#[test]
fn shift_rejects_unstable_loop() {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let cl = assemble_closed_loop(&plain(i2.clone(), i2.clone(), i2.clone()), &DMatrix::zeros(2, 2), &no_noise(2), &[1.0, 0.0]).unwrap();
    match shift_coordinates(&cl) {
        Err(Error::Precondition(msg)) => assert!(msg.contains("shift undefined")),
        other => panic!("{other:?}"),
    }
}
