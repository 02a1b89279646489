use super::*;
use crate::error::Error;
use crate::gradcheck;

fn store() -> ParamStore {
    ParamStore::new()
}

#[test]
fn elementwise_mul_example() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let a = t.constant(Tensor::row(&[1.0, 2.0]));
    let b = t.constant(Tensor::row(&[3.0, 4.0]));
    let c = t.mul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[3.0, 8.0]);
}

#[test]
fn rotate_is_complex_product() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let a = t.constant(Tensor::row(&[1.0, 0.0]));
    let b = t.constant(Tensor::row(&[0.0, 1.0]));
    let c = t.rotate(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[0.0, 1.0]);

    let a = t.constant(Tensor::row(&[2.0, 3.0, 1.0, -1.0]));
    let b = t.constant(Tensor::row(&[4.0, -5.0, 0.5, 2.0]));
    let c = t.rotate(a, b).unwrap();
    // (2+3i)(4-5i) = 23+2i ; (1-i)(0.5+2i) = 2.5+1.5i
    assert_eq!(t.value(c).data(), &[23.0, 2.0, 2.5, 1.5]);
}

#[test]
fn rotate_rejects_odd_width() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let a = t.constant(Tensor::row(&[1.0, 2.0, 3.0]));
    assert!(matches!(t.rotate(a, a), Err(Error::Dimension { .. })));
}

#[test]
fn segment_sum_example() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let v = t.constant(Tensor::column(&[1.0, 2.0, 3.0]));
    let s = t
        .segment_reduce(v, &[0, 0, 1], 2, SegmentMode::Sum)
        .unwrap();
    assert_eq!(t.value(s).data(), &[3.0, 3.0]);
}

#[test]
fn segment_modes_and_empty_segments() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let v = t.leaf(Tensor::column(&[4.0, 4.0, 1.0, 6.0]));
    let mean = t
        .segment_reduce(v, &[0, 0, 2, 2], 3, SegmentMode::Mean)
        .unwrap();
    assert_eq!(t.value(mean).data(), &[4.0, 0.0, 3.5]);
    let max = t
        .segment_reduce(v, &[0, 0, 2, 2], 3, SegmentMode::Max)
        .unwrap();
    assert_eq!(t.value(max).data(), &[4.0, 0.0, 6.0]);
    // Tie in segment 0 routes to the first row.
    let loss = t.sum(max).unwrap();
    let g = t.backward(loss).unwrap();
    assert_eq!(g.wrt(v).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn segment_ids_must_be_sorted() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let v = t.constant(Tensor::column(&[1.0, 2.0]));
    assert!(t.segment_reduce(v, &[1, 0], 2, SegmentMode::Sum).is_err());
}

#[test]
fn square_gradient() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let x = t.leaf(Tensor::scalar(3.0));
    let y = t.mul(x, x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[6.0]);
}

#[test]
fn repeated_gather_accumulates_into_param() {
    let mut ps = store();
    let table = ps.insert("table", Tensor::from_vec(2, 3, vec![1.0; 6]).unwrap());
    let mut t = Tape::new(&ps);
    let tv = t.param(table);
    let rows = t.gather_rows(tv, &[0, 0]).unwrap();
    let loss = t.sum(rows).unwrap();
    let grads = t.backward(loss).unwrap().param_grads(&t);
    assert_eq!(
        grads.get(table).unwrap().data(),
        &[2.0, 2.0, 2.0, 0.0, 0.0, 0.0]
    );
}

#[test]
fn backward_on_non_scalar_is_contract_error() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let x = t.leaf(Tensor::row(&[1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(Error::Contract(_))));
}

#[test]
fn nan_is_a_numeric_error() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let x = t.leaf(Tensor::scalar(-1.0));
    assert!(matches!(t.log(x), Err(Error::Numeric(_))));
}

#[test]
fn straight_through_rejects_bad_probability() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let x = t.leaf(Tensor::row(&[1.0, 2.0]));
    for bad in [0.0, 1.5, -0.2] {
        let p = t.constant(Tensor::scalar(bad));
        assert!(matches!(t.straight_through(x, p), Err(Error::Contract(_))));
    }
}

#[test]
fn every_primitive_passes_finite_difference_check() {
    for seed in [1, 2, 3] {
        for (name, rep) in gradcheck::primitive_suite(seed).unwrap() {
            assert!(rep.max_rel_err < 1e-4, "{name} seed {seed}: {:?}", rep);
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let ps = store();
    let build = |t: &mut Tape<'_>, x: Var| {
        let a = t.tanh(x).unwrap();
        let b = t.exp(x).unwrap();
        let la = t.sum(a).unwrap();
        let lb = t.sum(b).unwrap();
        (la, lb)
    };
    let input = Tensor::row(&[0.3, -0.7, 1.1]);

    let mut t = Tape::new(&ps);
    let x = t.leaf(input.clone());
    let (la, lb) = build(&mut t, x);
    let total = t.add(la, lb).unwrap();
    let g_total = t.backward(total).unwrap().wrt(x).unwrap().clone();
    let g_a = t.backward(la).unwrap().wrt(x).unwrap().clone();
    let g_b = t.backward(lb).unwrap().wrt(x).unwrap().clone();
    for k in 0..3 {
        let sum = g_a.data()[k] + g_b.data()[k];
        assert!((g_total.data()[k] - sum).abs() < 1e-15);
    }
}

#[test]
fn softmax_and_plackett_luce_values() {
    let ps = store();
    let mut t = Tape::new(&ps);
    let s = t.constant(Tensor::column(&[0.0, (2.0f64).ln(), 0.0]));
    let p = t.softmax(s).unwrap();
    let pv = t.value(p).data().to_vec();
    assert!((pv[0] - 0.25).abs() < 1e-15 && (pv[1] - 0.5).abs() < 1e-15);
    // P(1 then 0) = 0.5 * 0.25 / 0.5
    let lp = t.plackett_luce_log_prob(s, &[1, 0]).unwrap();
    assert!((t.scalar(lp) - (0.25f64).ln()).abs() < 1e-12);
    assert!(t.plackett_luce_log_prob(s, &[1, 1]).is_err());
}
