use cal_core::linalg::Matrix;
use cal_core::model::CalModel;
use cal_core::rng::SeededRng;
use cal_core::trainer::{step_loss, NegativePools, StepInputs};

const TAU: f64 = 0.5;
const H: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
// Floor on the relative-error denominator. Central differences at H carry
// ~1e-10 of round-off, so tiny gradients are compared to 1e-9 absolute.
const SCALE_FLOOR: f64 = 1e-5;

fn unit_rows(rows: usize, d: usize, rng: &mut SeededRng) -> Matrix<f64> {
    let mut m = Matrix::from_fn(rows, d, |_, _| rng.normal());
    for r in 0..rows {
        let row = m.row_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    m
}

fn random_model(d: usize, hidden: usize, rng: &mut SeededRng) -> CalModel<f64> {
    let mut model = CalModel::<f32>::init(d, hidden, rng).unwrap().cast::<f64>();
    // Move LayerNorm and the gate off their initial values so every
    // parameter kind carries a non-trivial gradient.
    for (_, t) in model.tensors_mut() {
        for x in t.iter_mut() {
            *x += 0.3 * rng.normal();
        }
    }
    model.alpha_logit = rng.normal();
    model
}

fn loss_of(model: &CalModel<f64>, step: &StepInputs<f64>) -> f64 {
    step_loss(model, step, TAU).unwrap().0
}

fn check(model: &CalModel<f64>, step: &StepInputs<f64>, label: &str) {
    let (_, _, grads) = step_loss(model, step, TAU).unwrap();
    let analytic: Vec<f64> = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter().copied())
        .chain(std::iter::once(grads.alpha_logit))
        .collect();
    let n_params = analytic.len();
    assert_eq!(n_params, model.parameter_count());
    for p in 0..n_params {
        let mut plus = model.clone();
        let mut minus = model.clone();
        nudge(&mut plus, p, H);
        nudge(&mut minus, p, -H);
        let numeric = (loss_of(&plus, step) - loss_of(&minus, step)) / (2.0 * H);
        let a = analytic[p];
        let scale = a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        let rel = (a - numeric).abs() / scale;
        assert!(rel < REL_TOL, "{label}: parameter {p}: analytic {a:e} numeric {numeric:e} rel {rel:e}");
    }
}

fn nudge(model: &mut CalModel<f64>, index: usize, by: f64) {
    let mut i = index;
    for (_, t) in model.tensors_mut() {
        if i < t.len() {
            t[i] += by;
            return;
        }
        i -= t.len();
    }
    assert_eq!(i, 0);
    model.alpha_logit += by;
}

fn shapes(rng: &mut SeededRng) -> (usize, usize, usize) {
    let d = 2 + rng.index(3);
    let hidden = 2 + rng.index(5);
    let b = 2 + rng.index(3);
    (d, hidden, b)
}

#[test]
fn in_batch_loss_gradients_match_central_differences() {
    let mut rng = SeededRng::new(2024);
    for case in 0..20 {
        let (d, hidden, b) = shapes(&mut rng);
        let model = random_model(d, hidden, &mut rng);
        let step = StepInputs {
            anchors: unit_rows(b, d, &mut rng),
            partners: unit_rows(b, d, &mut rng),
            negatives: None,
        };
        check(&model, &step, &format!("in-batch case {case} (d={d}, h={hidden}, B={b})"));
    }
}

#[test]
fn sampled_loss_gradients_match_central_differences() {
    let mut rng = SeededRng::new(77);
    for case in 0..20 {
        let (d, hidden, b) = shapes(&mut rng);
        let k = 1 + rng.index(4);
        let model = random_model(d, hidden, &mut rng);
        let mask = |rng: &mut SeededRng| (0..b * k).map(|_| rng.next_f64() < 0.25).collect::<Vec<bool>>();
        let negatives = NegativePools {
            partner_pool: unit_rows(k, d, &mut rng),
            anchor_pool: unit_rows(k, d, &mut rng),
            partner_mask: mask(&mut rng),
            anchor_mask: mask(&mut rng),
        };
        let step = StepInputs {
            anchors: unit_rows(b, d, &mut rng),
            partners: unit_rows(b, d, &mut rng),
            negatives: Some(negatives),
        };
        check(&model, &step, &format!("sampled case {case} (d={d}, h={hidden}, B={b}, k={k})"));
    }
}
