//! Central finite-difference checks for tape gradients.
//!
//! Only forward evaluations are used to build the numeric estimate, so the
//! check stays independent of the backward rules it validates.

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Worst coordinate seen by a check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub coords: usize,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    fn new() -> Self {
        GradReport {
            max_rel_err: 0.0,
            coords: 0,
            worst: None,
        }
    }

    fn record(&mut self, input: usize, coord: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.coords += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = err;
            self.worst = Some((input, coord, analytic, numeric));
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-3)`; coordinates with gradients far below
/// the step size are judged on absolute error instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Checks the gradient of a scalar function of free inputs.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let empty = ParamStore::new();
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new(&empty);
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new(&empty);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradReport::new();
    let mut xs = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        for k in 0..inputs[i].len() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[k] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[k] = orig;
            report.record(i, k, analytic.data()[k], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar function with respect to the listed
/// parameters (all parameters when `ids` is empty).
pub fn check_params<F>(params: &ParamStore, ids: &[ParamId], h: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let eval = |ps: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(ps);
        let out = build(&mut tape)?;
        Ok(tape.scalar(out))
    };

    let analytic = {
        let mut tape = Tape::new(params);
        let out = build(&mut tape)?;
        tape.backward(out)?.param_grads(&tape)
    };

    let ids: Vec<ParamId> = if ids.is_empty() {
        params.ids().collect()
    } else {
        ids.to_vec()
    };
    let mut report = GradReport::new();
    let mut ps = params.clone();
    for id in ids {
        let n = ps.get(id).len();
        for k in 0..n {
            let orig = ps.get(id).data()[k];
            ps.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&ps)?;
            ps.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&ps)?;
            ps.get_mut(id).data_mut()[k] = orig;
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            report.record(id.index(), k, a, (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Finite-difference check of every tape primitive on seeded random inputs.
/// Inputs are kept away from the kinks of relu, clamp and max.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradReport)>> {
    use crate::autodiff::SegmentMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_t = |r: usize, c: usize| -> Tensor {
        let data = (0..r * c)
            .map(|_| {
                let x: f64 = rng.gen_range(0.2..1.5);
                if rng.gen_bool(0.5) {
                    x
                } else {
                    -x
                }
            })
            .collect();
        Tensor::from_vec(r, c, data).expect("shape")
    };
    let a = rand_t(3, 4);
    let b = rand_t(3, 4);
    let row = rand_t(1, 4);
    let w = rand_t(4, 2);
    let col = rand_t(3, 1);
    let pos = a.map(|x| x.abs() + 0.5);
    let probs = col.map(|x| 0.1 + 0.8 * (x.abs() / 1.5));
    let seg_in = rand_t(5, 2);
    let weights = rand_t(3, 4);
    let scores = rand_t(5, 1);
    // Weighted sums turn matrix outputs into scalars without symmetry.
    let weighted = |t: &mut Tape<'_>, v: Var| -> Result<Var> {
        let (r, c) = t.value(v).shape();
        let wts: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect();
        let wv = t.constant(Tensor::from_vec(r, c, wts)?);
        let m = t.mul(v, wv)?;
        t.sum(m)
    };

    let mut out = Vec::new();
    macro_rules! check {
        ($name:expr, [$($x:expr),*], |$t:ident, $v:ident| $body:expr) => {{
            let inputs = [$($x.clone()),*];
            let rep = check_inputs(&inputs, H, |$t, $v| {
                let y = $body?;
                weighted($t, y)
            })?;
            out.push(($name, rep));
        }};
    }
    check!("add", [a, b], |t, v| t.add(v[0], v[1]));
    check!("sub", [a, b], |t, v| t.sub(v[0], v[1]));
    check!("mul", [a, b], |t, v| t.mul(v[0], v[1]));
    check!("add_row", [a, row], |t, v| t.add_row(v[0], v[1]));
    check!("rotate", [a, b], |t, v| t.rotate(v[0], v[1]));
    check!("matmul", [a, w], |t, v| t.matmul(v[0], v[1]));
    check!("affine", [a, w, rand_t(1, 2)], |t, v| t
        .affine(v[0], v[1], v[2]));
    check!("scale_rows", [a, col], |t, v| t.scale_rows(v[0], v[1]));
    check!("scale", [a], |t, v| t.scale(v[0], -1.7));
    check!("add_scalar", [a], |t, v| t.add_scalar(v[0], 0.4));
    check!("relu", [a], |t, v| t.relu(v[0]));
    check!("tanh", [a], |t, v| t.tanh(v[0]));
    check!("sigmoid", [a], |t, v| t.sigmoid(v[0]));
    check!("exp", [a], |t, v| t.exp(v[0]));
    check!("log", [pos], |t, v| t.log(v[0]));
    check!("clamp", [a], |t, v| t.clamp(v[0], -0.9, 0.9));
    check!("gather_rows", [a], |t, v| t
        .gather_rows(v[0], &[2, 0, 2, 1]));
    for (name, mode) in [
        ("segment_sum", SegmentMode::Sum),
        ("segment_mean", SegmentMode::Mean),
        ("segment_max", SegmentMode::Max),
    ] {
        check!(name, [seg_in], |t, v| t.segment_reduce(
            v[0],
            &[0, 0, 1, 3, 3],
            4,
            mode
        ));
    }
    check!("concat_cols", [a, col], |t, v| t.concat_cols(&[v[0], v[1]]));
    check!("concat_rows", [a, row], |t, v| t.concat_rows(&[v[0], v[1]]));
    check!("sum", [a], |t, v| t.sum(v[0]));
    check!("mean", [a], |t, v| t.mean(v[0]));
    out.push((
        "straight_through",
        check_straight_through(&weights, &probs, H)?,
    ));
    check!("softmax", [scores], |t, v| t.softmax(v[0]));
    check!("plackett_luce_log_prob", [scores], |t, v| t
        .plackett_luce_log_prob(v[0], &[3, 0, 4]));
    Ok(out)
}

/// The straight-through output is `rep` in value, so a plain finite
/// difference in `p` is zero. The reference here differentiates the explicit
/// multiplier `(1 − p₀ + p)·rep` with `p₀` frozen at the evaluation point.
pub fn check_straight_through(rep: &Tensor, p: &Tensor, h: f64) -> Result<GradReport> {
    let empty = ParamStore::new();
    let wts: Vec<f64> = (0..rep.len()).map(|i| 0.3 + 0.17 * i as f64).collect();
    let wts = Tensor::from_vec(rep.rows(), rep.cols(), wts)?;

    let mut tape = Tape::new(&empty);
    let rv = tape.leaf(rep.clone());
    let pv = tape.leaf(p.clone());
    let st = tape.straight_through(rv, pv)?;
    let wv = tape.constant(wts.clone());
    let m = tape.mul(st, wv)?;
    let out = tape.sum(m)?;
    let grads = tape.backward(out)?;

    // p₀ is captured once, before perturbation.
    let frozen = p.clone();
    let explicit = |rep: &Tensor, p: &Tensor| -> Result<f64> {
        let mut t = Tape::new(&empty);
        let r = t.constant(rep.clone());
        let pv = t.constant(p.clone());
        let p0 = t.constant(frozen.clone());
        let diff = t.sub(pv, p0)?;
        let mult = t.add_scalar(diff, 1.0)?;
        let scaled = t.scale_rows(r, mult)?;
        let wv = t.constant(wts.clone());
        let m = t.mul(scaled, wv)?;
        let s = t.sum(m)?;
        Ok(t.scalar(s))
    };

    let mut report = GradReport::new();
    let mut xs = [rep.clone(), p.clone()];
    for (i, var) in [rv, pv].into_iter().enumerate() {
        let analytic = grads.wrt(var).cloned().expect("leaf gradient");
        for k in 0..xs[i].len() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + h;
            let up = explicit(&xs[0], &xs[1])?;
            xs[i].data_mut()[k] = orig - h;
            let down = explicit(&xs[0], &xs[1])?;
            xs[i].data_mut()[k] = orig;
            report.record(i, k, analytic.data()[k], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}
