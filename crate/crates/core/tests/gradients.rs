//! Finite-difference checks of every analytic gradient path.

use rand::Rng;
use sparc_core::agent::{Agent, Hyper, Method};
use sparc_core::nn::{grad_check, relative_error, LayerSpec, ParameterSet, Sequential, Tensor};
use sparc_core::policy::{squashed_log_prob, PolicyDims, PolicyInputs, TANH_EPS};
use sparc_core::qrsac::{quantile_huber_loss, CriticDims, CriticNet};
use sparc_core::replay::{Batch, Transition};
use sparc_core::rng::{stream_rng, Rng as ChaCha};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(shape: &[usize], rng: &mut ChaCha) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn activation(rng: &mut ChaCha) -> Option<LayerSpec> {
    match rng.random_range(0..3) {
        0 => Some(LayerSpec::Relu),
        1 => Some(LayerSpec::Tanh),
        _ => None,
    }
}

/// Random dense stack, or a conv stack followed by flatten and dense.
fn random_net(rng: &mut ChaCha) -> (Sequential, Vec<usize>) {
    let batch = rng.random_range(1..4);
    if rng.random_bool(0.5) {
        let depth = rng.random_range(1..4);
        let mut dims = vec![rng.random_range(1..6)];
        let mut layers = Vec::new();
        for _ in 0..depth {
            let out = rng.random_range(1..7);
            layers.push(LayerSpec::dense(*dims.last().unwrap(), out));
            layers.extend(activation(rng));
            dims.push(out);
        }
        (Sequential::new("net", layers), vec![batch, dims[0]])
    } else {
        let len: usize = rng.random_range(3..13);
        let channels: usize = rng.random_range(1..4);
        let mut layers = Vec::new();
        let (mut l, mut c) = (len, channels);
        for _ in 0..rng.random_range(1..3) {
            let kernel = rng.random_range(1..6);
            let stride = rng.random_range(1..4);
            let out = rng.random_range(1..4);
            layers.push(LayerSpec::conv1d(c, out, kernel, stride));
            layers.extend(activation(rng));
            l = l.div_ceil(stride);
            c = out;
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::dense(l * c, rng.random_range(1..4)));
        (Sequential::new("net", layers), vec![batch, len, channels])
    }
}

#[test]
fn every_layer_kind_matches_finite_differences() {
    let mut rng = stream_rng(2024, 0);
    let mut kinds = [0usize; 5];
    for instance in 0..100 {
        let (net, input) = random_net(&mut rng);
        for l in net.layers() {
            kinds[match l {
                LayerSpec::Dense { .. } => 0,
                LayerSpec::Conv1d { .. } => 1,
                LayerSpec::Relu => 2,
                LayerSpec::Tanh => 3,
                LayerSpec::Flatten => 4,
            }] += 1;
        }
        let mut params = ParameterSet::new();
        net.init(&mut params, &mut rng).unwrap();
        let x = random_tensor(&input, &mut rng);
        let report = grad_check(&net, &params, &x, EPS).unwrap();
        assert!(
            report.max_error() <= TOL,
            "instance {instance} {:?}: {:?}",
            net.layers(),
            report
        );
    }
    assert!(kinds.iter().all(|&k| k > 0), "layer coverage {kinds:?}");
}

#[test]
fn zero_network_has_zero_parameter_gradients_past_the_first_layer() {
    let net = Sequential::mlp("zero", &[3, 4, 2], None);
    let mut params = ParameterSet::new();
    net.init_zeros::<f64>(&mut params).unwrap();
    let x = Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap();
    let report = grad_check(&net, &params, &x, EPS).unwrap();
    assert!(report.max_error() <= TOL, "{report:?}");
    let (y, _) = net.forward(&params, &x).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn history_adapter_geometry_passes_gradient_check() {
    // the full conv stack at a reduced width
    let net = Sequential::new(
        "adapter",
        vec![
            LayerSpec::dense(3, 4),
            LayerSpec::Relu,
            LayerSpec::conv1d(4, 3, 8, 4),
            LayerSpec::Relu,
            LayerSpec::conv1d(3, 3, 5, 1),
            LayerSpec::Relu,
            LayerSpec::conv1d(3, 3, 5, 1),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::dense(3 * 5, 4),
            LayerSpec::Relu,
        ],
    );
    let mut rng = stream_rng(7, 0);
    let mut params = ParameterSet::new();
    net.init(&mut params, &mut rng).unwrap();
    let x = random_tensor(&[2, 20, 3], &mut rng);
    let report = grad_check(&net, &params, &x, EPS).unwrap();
    assert!(report.max_error() <= TOL, "{report:?}");
}

fn small_dims(h: usize) -> PolicyDims {
    PolicyDims {
        width: 12,
        latent: 6,
        history_embed: 5,
        conv_channels: 4,
        ..PolicyDims::desk(3, 2, 2, h)
    }
}

fn small_hyper(h: usize) -> Hyper {
    Hyper {
        history_len: h,
        batch_size: 4,
        quantiles: 4,
        ..Hyper::default()
    }
}

fn batch(h: usize, n: usize, rng: &mut ChaCha) -> Batch<f64> {
    let items: Vec<Transition> = (0..n)
        .map(|i| Transition {
            obs: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.random_range(-0.9..0.9)).collect(),
            reward: rng.random_range(-1.0..1.0),
            next_obs: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: i % 3 == 0,
            terminal: i % 3 == 0,
            history: (0..h * 5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            context: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            worker: 0,
            episode: 0,
            episode_step: i as u32,
            snapshot_version: 0,
        })
        .collect();
    let refs: Vec<&Transition> = items.iter().collect();
    Batch::from_transitions(&refs, h).unwrap()
}

/// Central difference of `f` along one coordinate, or `None` when halving the
/// step changes the estimate (a kink lies inside the stencil).
fn smooth_difference(mut f: impl FnMut(f64) -> f64, x0: f64) -> Option<f64> {
    let d = |h: f64, f: &mut dyn FnMut(f64) -> f64| (f(x0 + h) - f(x0 - h)) / (2.0 * h);
    let a = d(EPS, &mut f);
    let b = d(EPS / 2.0, &mut f);
    (relative_error(a, b) < 1e-5 || (a - b).abs() < 1e-9).then_some(a)
}

/// Compares `grads` against finite differences of `loss` on every entry of
/// the parameter set selected by `pick`. Returns the worst relative error
/// and the number of coordinates skipped at kinks.
fn check_params<A: Clone>(
    subject: &A,
    pick: impl Fn(&mut A) -> &mut ParameterSet<f64>,
    grads: &sparc_core::nn::Grads<f64>,
    loss: impl Fn(&A) -> f64,
) -> (f64, usize, usize) {
    let mut probe = subject.clone();
    let names: Vec<String> = pick(&mut probe).names().map(String::from).collect();
    let (mut worst, mut skipped, mut checked) = (0.0f64, 0, 0);
    for name in names {
        let n = pick(&mut probe).get(&name).unwrap().len();
        for i in 0..n {
            let x0 = pick(&mut probe).get(&name).unwrap().data()[i];
            let numeric = smooth_difference(
                |x| {
                    let mut s = subject.clone();
                    pick(&mut s).get_mut(&name).unwrap().data_mut()[i] = x;
                    loss(&s)
                },
                x0,
            );
            let analytic = grads.get(&name).map_or(0.0, |g| g.data()[i]);
            match numeric {
                Some(num) => {
                    worst = worst.max(relative_error(analytic, num));
                    checked += 1;
                }
                None => skipped += 1,
            }
        }
    }
    (worst, skipped, checked)
}

#[test]
fn adapter_loss_gradient_matches_and_stops_at_psi() {
    let h = 8;
    let mut rng = stream_rng(3, 0);
    let agent = Agent::<f64>::new(Method::Sparc, small_dims(h), small_hyper(h), 3).unwrap();
    let b = batch(h, 4, &mut rng);
    let (loss, grads) = agent.adapter_loss_and_grads(&b).unwrap();
    assert!(loss > 0.0);

    // no entry of the gradient belongs to the expert's context encoder
    assert!(grads.keys().all(|k| k.starts_with("history_adapter")), "{:?}", grads.keys());

    let (worst, skipped, checked) = check_params(
        &agent,
        |a| a.adapter.as_mut().unwrap(),
        &grads,
        |a| a.adapter_loss_and_grads(&b).unwrap().0,
    );
    assert!(worst <= TOL, "adapter gradient rel err {worst}");
    assert!(checked > 10 * skipped.max(1), "checked {checked}, skipped {skipped}");

    // the loss does depend on psi, so the zero gradient above is a detach
    let mut moved = agent.clone();
    let w = moved.actor.get_mut("context_encoder.0.w").unwrap();
    w.data_mut().iter_mut().for_each(|v| *v += 0.3);
    assert_ne!(moved.adapter_loss_and_grads(&b).unwrap().0, loss);

    let before = agent.actor.clone();
    let mut stepped = agent.clone();
    stepped.adapter_regression(&b).unwrap();
    assert_eq!(stepped.actor, before);
}

#[test]
fn adapter_step_descends_on_a_fixed_batch() {
    let h = 8;
    let mut rng = stream_rng(4, 0);
    let hyper = Hyper {
        lr_adapter: 1e-4,
        ..small_hyper(h)
    };
    let mut agent = Agent::<f64>::new(Method::Rma, small_dims(h), hyper, 4).unwrap();
    let b = batch(h, 8, &mut rng);
    for _ in 0..5 {
        let before = agent.adapter_loss_and_grads(&b).unwrap().0;
        agent.adapter_regression(&b).unwrap();
        let after = agent.adapter_loss_and_grads(&b).unwrap().0;
        assert!(after < before, "{after} >= {before}");
    }
}

#[test]
fn critic_loss_gradient_on_two_quantile_critic() {
    let mut rng = stream_rng(5, 0);
    let net = CriticNet::new(CriticDims {
        obs: 3,
        action: 2,
        context: 2,
        width: 6,
        latent: 4,
        quantiles: 2,
    });
    let params: ParameterSet<f64> = net.init(&mut rng).unwrap();
    let obs = random_tensor(&[5, 3], &mut rng);
    let act = random_tensor(&[5, 2], &mut rng);
    let ctx = random_tensor(&[5, 2], &mut rng);
    let targets = random_tensor(&[5, 3], &mut rng);
    let loss = |p: &ParameterSet<f64>| {
        let q = net.infer(p, &obs, &act, Some(&ctx)).unwrap();
        quantile_huber_loss(&q, &targets, 1.0).unwrap().0
    };
    let (q, tape) = net.forward(&params, &obs, &act, Some(&ctx)).unwrap();
    let (_, d_q) = quantile_huber_loss(&q, &targets, 1.0).unwrap();
    let mut grads = Default::default();
    let d_act = net.backward(&params, tape, &d_q, Some(&mut grads)).unwrap();
    let (worst, _, checked) = check_params(&params, |p| p, &grads, loss);
    assert!(worst <= TOL && checked > 100, "rel err {worst} over {checked}");

    for i in 0..act.len() {
        let numeric = smooth_difference(
            |x| {
                let mut a = act.clone();
                a.data_mut()[i] = x;
                let q = net.infer(&params, &obs, &a, Some(&ctx)).unwrap();
                quantile_huber_loss(&q, &targets, 1.0).unwrap().0
            },
            act.data()[i],
        );
        if let Some(num) = numeric {
            assert!(relative_error(d_act.data()[i], num) <= TOL);
        }
    }
}

#[test]
fn critic_update_gradient_matches_finite_differences() {
    let h = 6;
    let mut rng = stream_rng(6, 0);
    let agent = Agent::<f64>::new(Method::Sparc, small_dims(h), small_hyper(h), 6).unwrap();
    let b = batch(h, 4, &mut rng);
    let (_, grads) = agent.critic_loss_and_grads(&b, &mut stream_rng(60, 0)).unwrap();
    for k in 0..2 {
        let (worst, _, checked) = check_params(
            &agent,
            |a| &mut a.critics[k],
            &grads[k],
            |a| a.critic_loss_and_grads(&b, &mut stream_rng(60, 0)).unwrap().0,
        );
        assert!(worst <= TOL && checked > 100, "critic {k}: rel err {worst}");
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let h = 6;
    for method in [Method::Sparc, Method::OnlyObs, Method::HistoryInput, Method::Oracle] {
        let mut rng = stream_rng(8, 0);
        let agent = Agent::<f64>::new(method, small_dims(h), small_hyper(h), 8).unwrap();
        let b = batch(h, 4, &mut rng);
        let loss = |a: &Agent<f64>| a.actor_loss_and_grads(&b, &mut stream_rng(80, 0)).unwrap().0;
        let (_, _, grads) = agent.actor_loss_and_grads(&b, &mut stream_rng(80, 0)).unwrap();
        let (worst, skipped, checked) = check_params(&agent, |a| &mut a.actor, &grads, loss);
        assert!(
            worst <= TOL && checked > 10 * skipped.max(1),
            "{method:?}: rel err {worst}, checked {checked}, skipped {skipped}"
        );
    }
}

#[test]
fn actor_gradient_vanishes_for_constant_critics_without_entropy() {
    let h = 4;
    let hyper = Hyper {
        alpha: 0.0,
        ..small_hyper(h)
    };
    let mut agent = Agent::<f64>::new(Method::OnlyObs, small_dims(h), hyper, 9).unwrap();
    for c in agent.critics.iter_mut() {
        *c = agent.critic_net.init_zeros().unwrap();
    }
    let b = batch(h, 4, &mut stream_rng(9, 0));
    let (loss, _, grads) = agent.actor_loss_and_grads(&b, &mut stream_rng(90, 0)).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.values().all(|g| g.data().iter().all(|&v| v == 0.0)));
}

/// Standard normal density integrated with Simpson's rule.
fn normal_mass(lo: f64, hi: f64, mean: f64, std: f64) -> f64 {
    let n = 2000;
    let h = (hi - lo) / n as f64;
    let pdf = |u: f64| (-0.5 * ((u - mean) / std).powi(2)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = pdf(lo) + pdf(hi);
    for i in 1..n {
        s += pdf(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn squashed_log_prob_matches_change_of_variables() {
    let (mean, log_std) = (0.4, (0.7f64).ln());
    let std = log_std.exp();
    let delta = 1e-6;
    for i in 1..40 {
        let a = -0.975 + i as f64 * 0.05 - 0.05;
        // probability of a small interval around a, mapped back through atanh
        let mass = normal_mass((a - delta).atanh(), (a + delta).atanh(), mean, std);
        let numeric = (mass / (2.0 * delta)).ln();
        let eps = (a.atanh() - mean) / std;
        // undo the guard inside the log to get the exact change of variables
        let guard = (1.0 - a * a + TANH_EPS).ln() - (1.0 - a * a).ln();
        let analytic = squashed_log_prob(&[eps], &[log_std], &[a]) + guard;
        assert!(
            (analytic - numeric).abs() < 1e-6,
            "a={a}: {analytic} vs {numeric}"
        );
    }
}

#[test]
fn copied_adapter_with_matching_latent_acts_like_the_expert() {
    let h = 8;
    let mut agent = Agent::<f64>::new(Method::Sparc, small_dims(h), small_hyper(h), 11).unwrap();
    let mut rng = stream_rng(11, 0);
    let obs = random_tensor(&[1, 3], &mut rng);
    let ctx = random_tensor(&[1, 2], &mut rng);
    let hist = random_tensor(&[1, h, 5], &mut rng);

    // perturb the shared layers so the copy is observable, then sync
    for (name, v) in agent.actor.clone().iter() {
        if name.starts_with("decision") {
            let mut t = v.clone();
            t.data_mut().iter_mut().for_each(|x| *x *= 1.5);
            *agent.actor.get_mut(name).unwrap() = t;
        }
    }
    agent.sync_adapter().unwrap();

    let expert_in = PolicyInputs {
        obs: &obs,
        context: Some(&ctx),
        history: None,
    };
    let z = agent.actor_net.encode(&agent.actor, &expert_in).unwrap().unwrap().0;
    // make φ constant and equal to ψ(c): zero the last dense weights, bias = z
    let adapter_net = agent.adapter_net.clone().unwrap();
    let last = adapter_net
        .conditioner()
        .unwrap()
        .layers()
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Dense { .. }))
        .unwrap();
    let cond = adapter_net.conditioner().unwrap();
    let adapter = agent.adapter.as_mut().unwrap();
    adapter.get_mut(&cond.weight_name(last)).unwrap().data_mut().fill(0.0);
    adapter
        .get_mut(&cond.bias_name(last))
        .unwrap()
        .data_mut()
        .copy_from_slice(z.data());

    let expert = agent.actor_net.infer(&agent.actor, &expert_in).unwrap();
    let adapted = adapter_net
        .infer(
            agent.adapter.as_ref().unwrap(),
            &PolicyInputs {
                obs: &obs,
                context: None,
                history: Some(&hist),
            },
        )
        .unwrap();
    assert_eq!(expert.mean, adapted.mean);
    assert_eq!(expert.log_std, adapted.log_std);
}
