use super::*;
use crate::data::{LocalTrajectory, ReplayBuffer, TeamEpisode};
use crate::learner::AgentLearner;
use crate::nn::Params;
use crate::seeding;

fn tr(reward: f64, terminal: bool) -> TabularTransition {
    TabularTransition {
        obs: 0,
        action: 1,
        reward,
        next_obs: 1,
        terminal,
    }
}

#[test]
fn hysteretic_examples() {
    let rates = HystereticRates::new(0.1, 0.01).unwrap();
    // positive error 1.0 moves by alpha
    let mut q = vec![0.0; 4];
    let psi = hysteretic_update(&mut q, 2, &tr(1.0, true), rates, 0.9);
    assert_eq!(psi, 1.0);
    assert!((q[1] - 0.1).abs() < 1e-15);
    // negative error -1.0 moves by beta
    let mut q = vec![0.0; 4];
    hysteretic_update(&mut q, 2, &tr(-1.0, true), rates, 0.9);
    assert!((q[1] + 0.01).abs() < 1e-15);
    // zero error leaves the table alone
    let mut q = vec![0.0, 0.5, 0.0, 0.0];
    let psi = hysteretic_update(&mut q, 2, &tr(0.5, true), rates, 0.9);
    assert_eq!(psi, 0.0);
    assert_eq!(q, vec![0.0, 0.5, 0.0, 0.0]);
    // bootstrap from the next row
    let mut q = vec![0.0, 0.0, 2.0, 1.0];
    let psi = hysteretic_update(&mut q, 2, &tr(0.0, false), rates, 0.5);
    assert_eq!(psi, 1.0);
}

#[test]
fn rates_are_validated() {
    assert!(HystereticRates::new(0.1, 0.2).is_err());
    assert!(HystereticRates::new(0.1, 0.0).is_err());
    assert!(HystereticRates::new(f64::NAN, 0.1).is_err());
    assert!(HystereticRates::new(0.1, 0.1).is_ok());
}

#[test]
fn magnitude_ratio_is_alpha_over_beta() {
    let rates = HystereticRates::new(0.3, 0.05).unwrap();
    let mut up = vec![0.0; 4];
    let mut down = vec![0.0; 4];
    hysteretic_update(&mut up, 2, &tr(0.7, true), rates, 0.9);
    hysteretic_update(&mut down, 2, &tr(-0.7, true), rates, 0.9);
    assert_eq!(up[1] / -down[1], (0.3 * 0.7) / (0.05 * 0.7));
}

proptest::proptest! {
    #[test]
    fn equal_rates_match_q_learning(
        lr in 0.001f64..1.0,
        table in proptest::collection::vec(-5.0f64..5.0, 6),
        steps in proptest::collection::vec((0usize..3, 0usize..2, -1.0f64..1.0, 0usize..3, proptest::bool::ANY), 1..40),
    ) {
        let rates = HystereticRates::new(lr, lr).unwrap();
        let mut a = table.clone();
        let mut b = table;
        for (obs, action, reward, next_obs, terminal) in steps {
            let t = TabularTransition { obs, action, reward, next_obs, terminal };
            let pa = hysteretic_update(&mut a, 2, &t, rates, 0.95);
            let pb = q_learning_update(&mut b, 2, &t, lr, 0.95);
            proptest::prop_assert_eq!(pa.to_bits(), pb.to_bits());
        }
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        proptest::prop_assert_eq!(bits(&a), bits(&b));
    }
}

fn episode(marker: f32, len: usize, terminated: bool) -> LocalTrajectory {
    LocalTrajectory {
        observations: (0..=len).map(|t| vec![marker, t as f32 / 4.0]).collect(),
        actions: (0..len).map(|t| (t * 2 + marker as usize) % 3).collect(),
        rewards: (0..len).map(|t| if t + 1 == len { 1.0 } else { -0.1 * t as f64 }).collect(),
        terminated,
        belief: None,
    }
}

#[test]
fn episode_batch_layout() {
    let a = episode(0.0, 3, true);
    let b = episode(1.0, 5, false);
    let batch = EpisodeBatch::from_episodes(&[&a, &b], 2, 3).unwrap();
    assert_eq!(batch.batch_size(), 2);
    assert_eq!(batch.steps(), 5);
    assert_eq!(batch.inputs.len(), 6);
    // first step carries no action
    assert_eq!(batch.inputs[0].row(1).to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    let prev = b.actions[1];
    assert_eq!(batch.inputs[2][[1, 2 + prev]], 1.0);
    assert_eq!(batch.mask.row(0).to_vec(), vec![1.0, 1.0, 1.0, 0.0, 0.0]);
    assert_eq!(batch.not_done[[0, 2]], 0.0);
    assert_eq!(batch.not_done.row(1).sum(), 5.0);
    let rows = batch.flat(&batch.rewards);
    assert_eq!(rows[2 * 2 + 0], a.rewards[2]);
    assert_eq!(rows[4 * 2 + 1], b.rewards[4]);
    assert!(EpisodeBatch::from_episodes(&[], 2, 3).is_err());
    assert!(EpisodeBatch::from_episodes(&[&a], 3, 3).is_err());
}

#[test]
fn step_stacking_round_trips() {
    let outs: Vec<Array2<f64>> = (0..4).map(|k| Array2::from_elem((2, 3), k as f64)).collect();
    let (cur, next) = stack_steps(&outs);
    assert_eq!(cur.dim(), (6, 3));
    assert_eq!(next[[0, 0]], 1.0);
    let back = unstack_steps(&cur, Some(&next), 2, 3);
    let expect = [0.0, 1.0 + 1.0, 2.0 + 2.0, 3.0];
    for (k, e) in expect.iter().enumerate() {
        assert!(back[k].iter().all(|v| v == e));
    }
}

fn check_gradient<P: Params + Clone>(params: &P, grad: &P, loss: impl Fn(&P) -> f64) {
    let flat = params.flat();
    let g = grad.flat();
    let eps = 1e-6;
    let mut probe = params.clone();
    for k in 0..flat.len() {
        let mut v = flat.clone();
        v[k] = flat[k] + eps;
        probe.set_flat(&v).unwrap();
        let up = loss(&probe);
        v[k] = flat[k] - eps;
        probe.set_flat(&v).unwrap();
        let down = loss(&probe);
        let fd = (up - down) / (2.0 * eps);
        let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
        assert!(rel < 1e-4 || (fd - g[k]).abs() < 1e-9, "param {k}: fd {fd} analytic {}", g[k]);
    }
}

fn small_batch() -> EpisodeBatch {
    let eps = [episode(0.0, 3, true), episode(1.0, 4, false), episode(2.0, 2, true)];
    let refs: Vec<&LocalTrajectory> = eps.iter().collect();
    EpisodeBatch::from_episodes(&refs, 2, 3).unwrap()
}

#[test]
fn rec_i2q_gradients_match_finite_differences() {
    let mut rng = seeding::rng(3);
    let nets = RecI2qNetworks::new(2, 3, 4, &[6], &mut rng);
    let batch = small_batch();
    let (_, grad) = rec_i2q_losses(&nets, &batch, 0.9, 0.5);
    let with = |f: &dyn Fn(&mut RecI2qNetworks)| {
        let mut n = nets.clone();
        f(&mut n);
        n
    };
    check_gradient(&nets.qss, &grad.qss, |p| {
        rec_i2q_losses(&with(&|n| n.qss = p.clone()), &batch, 0.9, 0.5).0.qss
    });
    check_gradient(&nets.f, &grad.f, |p| rec_i2q_losses(&with(&|n| n.f = p.clone()), &batch, 0.9, 0.5).0.f);
    check_gradient(&nets.q, &grad.q, |p| rec_i2q_losses(&with(&|n| n.q = p.clone()), &batch, 0.9, 0.5).0.q);
    // with gamma = 0 the targets do not depend on the encoder
    let (_, grad) = rec_i2q_losses(&nets, &batch, 0.0, 0.5);
    check_gradient(&nets.encoder, &grad.encoder, |p| {
        let l = rec_i2q_losses(&with(&|n| n.encoder = p.clone()), &batch, 0.0, 0.5).0;
        l.qss + l.q
    });
}

#[test]
fn hysteretic_gradients_match_finite_differences() {
    let mut rng = seeding::rng(5);
    let mut nets = RecHystNetworks::new(2, 3, 4, &[6], &mut rng);
    // distinct targets
    nets.q_target = crate::nn::Mlp::new(4, &[6], 3, &mut rng);
    let batch = small_batch();
    let rates = HystereticRates::new(1.0, 0.1).unwrap();
    let (_, grad) = hyst_losses(&nets, &batch, 0.9, rates);
    check_gradient(&nets.q, &grad.q, |p| {
        let mut n = nets.clone();
        n.q = p.clone();
        hyst_losses(&n, &batch, 0.9, rates).0
    });
    check_gradient(&nets.encoder, &grad.encoder, |p| {
        let mut n = nets.clone();
        n.encoder = p.clone();
        hyst_losses(&n, &batch, 0.9, rates).0
    });
    assert_eq!(grad.q_target.flat().iter().map(|v| v.abs()).sum::<f64>(), 0.0);
}

#[test]
fn hysteresis_downweights_negative_errors() {
    let mut rng = seeding::rng(1);
    let nets = RecHystNetworks::new(2, 3, 4, &[6], &mut rng);
    let batch = small_batch();
    let equal = hyst_losses(&nets, &batch, 0.9, HystereticRates::new(1.0, 1.0).unwrap()).0;
    let hyst = hyst_losses(&nets, &batch, 0.9, HystereticRates::new(1.0, 0.1).unwrap()).0;
    assert!(hyst < equal);
    assert!(hyst >= 0.1 * equal);
}

fn run_agent(agent: &mut dyn AgentLearner, episodes: usize) -> Vec<crate::learner::LossSummary> {
    let mut buffer = ReplayBuffer::new(10).unwrap();
    let mut rng = seeding::rng(0);
    let mut out = Vec::new();
    for ep in 0..episodes {
        let mut traj = episode(0.0, 3 + ep, true);
        agent.begin_episode(&traj.observations[0]).unwrap();
        for t in 0..traj.len() {
            let a = agent.act(0.3, &mut rng).unwrap();
            assert!(a < 3);
            traj.actions[t] = a;
            agent.observe(a, &traj.observations[t + 1]).unwrap();
        }
        assert!(agent.end_episode().is_none());
        buffer.push(TeamEpisode::new(vec![traj]));
        out.push(agent.update(buffer.view(0)).unwrap());
    }
    out
}

#[test]
fn recurrent_agents_train_after_warmup() {
    let config = RecurrentConfig {
        gru_hidden: 4,
        hidden: vec![8],
        warmup_episodes: 2,
        batch_episodes: 2,
        ..RecurrentConfig::default()
    };
    let mut rec = RecI2qAgent::new(0, 2, 3, config.clone(), 7);
    let summaries = run_agent(&mut rec, 3);
    assert!(summaries[0].q.is_none());
    assert!(summaries[1].qss.is_some() && summaries[2].f.is_some());
    assert_eq!(rec.checkpoint().kind, "rec_i2q_agent");

    let mut hyst = RecHystIqlAgent::new(0, 2, 3, config, 7);
    let summaries = run_agent(&mut hyst, 3);
    assert!(summaries[0].q.is_none() && summaries[2].q.is_some());
    assert!(summaries[2].qss.is_none());
    assert!(hyst.checkpoint().get("encoder_target").is_ok());
}

#[test]
fn acting_needs_an_episode() {
    let mut agent = RecHystIqlAgent::new(0, 2, 3, RecurrentConfig::default(), 0);
    assert!(agent.act(0.0, &mut seeding::rng(0)).is_err());
    assert!(agent.begin_episode(&[0.0; 3]).is_err());
}

#[test]
fn rollout_hidden_matches_batch_encoding() {
    // the hidden state used to act equals the training-time encoding
    let config = RecurrentConfig {
        gru_hidden: 4,
        hidden: vec![8],
        ..RecurrentConfig::default()
    };
    let mut agent = RecHystIqlAgent::new(0, 2, 3, config, 2);
    let traj = episode(1.0, 3, true);
    agent.begin_episode(&traj.observations[0]).unwrap();
    for t in 0..3 {
        agent.observe(traj.actions[t], &traj.observations[t + 1]).unwrap();
    }
    let live = agent.rollout_hidden().unwrap().clone();
    let nets = agent.networks();
    let batch = EpisodeBatch::from_episodes(&[&traj], 2, 3).unwrap();
    let (outs, _) = nets.encoder.forward_seq(&nets.encoder.initial_state(1), &batch.inputs);
    for (x, y) in live.iter().zip(outs[3].iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}
