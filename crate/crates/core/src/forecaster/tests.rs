use super::*;
use crate::synthgen::{generate_dataset, split_dataset, GeneratorConfig, SplitSpec};

fn small(seed: u64) -> ForecasterConfig {
    ForecasterConfig { hidden_dim: 16, n_heads: 4, batch_size: 8, chunk_size: 3, seed, ..Default::default() }
}

#[test]
fn defaults_match_training_configuration() {
    let c = ForecasterConfig::default();
    assert_eq!((c.hidden_dim, c.encoder_layers, c.history_days, c.n_heads), (128, 2, 3, 4));
    assert_eq!((c.batch_size, c.epochs, c.learning_rate), (32, 30, 1e-3));
    assert_eq!(c.tf_ratio(0), 0.8);
    assert_eq!(c.tf_ratio(29), 0.2);
    for e in 1..30 {
        assert!(c.tf_ratio(e) <= c.tf_ratio(e - 1));
    }
}

#[test]
fn config_rejects_bad_heads_and_schedule() {
    let c = ForecasterConfig { n_heads: 3, ..Default::default() };
    assert!(matches!(c.validate(), Err(Error::Config { path, .. }) if path == "forecaster.n_heads"));
    let c = ForecasterConfig { tf_start: 0.1, tf_end: 0.2, ..Default::default() };
    assert!(c.validate().is_err());
}

#[test]
fn zero_parameters_give_zero_states() {
    let mut m = Forecaster::new(small(1)).unwrap();
    for id in 0..m.params().len() {
        m.params_mut().value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let s = random_samples(&m, 1, 2).unwrap();
    let d = m.layout.enc_input() * 24;
    let (states, emb) = m.encode_day(&s[0].history[..d]).unwrap();
    assert!(states.data().iter().chain(emb.data()).all(|&x| x == 0.0));
}

#[test]
fn default_shapes() {
    let m = Forecaster::new(ForecasterConfig::default()).unwrap();
    let s = random_samples(&m, 1, 3).unwrap();
    let d = m.layout.enc_input() * 24;
    let (states, emb) = m.encode_day(&s[0].history[..d]).unwrap();
    assert_eq!(states.shape(), &[24, 128]);
    assert_eq!(emb.shape(), &[128]);
    assert!(m.encode_day(&s[0].history[..d - 1]).is_err());
}

#[test]
fn hour_order_matters() {
    let m = Forecaster::new(small(4)).unwrap();
    let s = random_samples(&m, 1, 5).unwrap();
    let w = m.layout.enc_input();
    let day = &s[0].history[..24 * w];
    let mut rev = Vec::with_capacity(day.len());
    for t in (0..24).rev() {
        rev.extend_from_slice(&day[t * w..(t + 1) * w]);
    }
    let (_, a) = m.encode_day(day).unwrap();
    let (_, b) = m.encode_day(&rev).unwrap();
    assert_ne!(a.data(), b.data());
}

#[test]
fn positional_encoding_separates_identical_days() {
    let m = Forecaster::new(small(6)).unwrap();
    let emb = Tensor::from_vec(&[3, 16], [0.3; 16].repeat(3)).unwrap();
    let (out, weights) = m.attend_days(&emb).unwrap();
    let rows: Vec<&[f64]> = out.data().chunks(16).collect();
    assert_ne!(rows[0], rows[1]);
    assert_ne!(rows[1], rows[2]);
    for head in &weights {
        for row in head.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    assert!(m.attend_days(&Tensor::zeros(&[2, 16])).is_err());
}

#[test]
fn single_history_day_gets_full_weight() {
    let m = Forecaster::new(ForecasterConfig { history_days: 1, ..small(7) }).unwrap();
    let (_, weights) = m.attend_days(&Tensor::from_vec(&[1, 16], vec![0.1; 16]).unwrap()).unwrap();
    assert!(weights.iter().all(|w| w == &vec![1.0]));
}

#[test]
fn decoder_shapes_teacher_feed_and_attention() {
    let m = Forecaster::new(ForecasterConfig { hidden_dim: 8, ..small(8) }).unwrap();
    let mem = Tensor::from_vec(&[72, 8], (0..576).map(|i| ((i * 37) % 11) as f64 / 11.0).collect()).unwrap();
    let env: Vec<f64> = (0..24 * 8).map(|i| (i % 5) as f64 / 5.0).collect();
    let teacher: Vec<ActionId> = (0..24).map(|t| ActionId((t % 6) as u8)).collect();
    let out = m.decode_day(&mem, &env, Some(&teacher), 1.0, 1).unwrap();
    assert_eq!(out.logits.shape(), &[24, 6]);
    assert_eq!(out.fed[0], None);
    for t in 1..24 {
        assert_eq!(out.fed[t], Some(teacher[t - 1]));
    }
    for w in &out.attention {
        assert_eq!(w.len(), 72);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(m.decode_day(&mem, &env, Some(&teacher), 1.5, 1).is_err());
    let free = m.decode_day(&mem, &env, None, 0.0, 1).unwrap();
    for t in 1..24 {
        let row = &free.logits.data()[(t - 1) * 6..t * 6];
        assert_eq!(free.fed[t], Some(ActionId(model::argmax(row) as u8)));
    }
}

#[test]
fn micro_gradient_matches_finite_differences() {
    let report = gradcheck_micro(6, 11, usize::MAX, Exec::Parallel).unwrap();
    assert!(report.coords_checked > 1000);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn parallel_and_sequential_gradients_identical() {
    let mut a = Forecaster::new(small(12)).unwrap();
    let mut b = a.clone();
    let data = random_samples(&a, 7, 13).unwrap();
    let coins: Vec<Vec<bool>> = data.iter().map(|s| teacher_coins(1, 0, s.day as u64, 24, 0.5)).collect();
    let la = a.loss_and_grad(&data, &coins, Exec::Parallel).unwrap();
    let lb = b.loss_and_grad(&data, &coins, Exec::Sequential).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(a.params().grads(), b.params().grads());
    let l = a.loss(&data, &coins, Exec::Sequential).unwrap();
    assert_eq!(l.to_bits(), la.to_bits());
}

fn toy() -> (Vec<DayRecord>, Splits) {
    let days = generate_dataset(&GeneratorConfig::with(20, 6, 3)).unwrap();
    let splits = split_dataset(&days, &SplitSpec::proportional(20, 3).unwrap()).unwrap();
    (days, splits)
}

#[test]
fn toy_training_loss_decreases() {
    let (days, splits) = toy();
    let cfg = ForecasterConfig { epochs: 11, learning_rate: 1e-2, ..small(14) };
    let ck = train_forecaster(&days, &splits, &cfg, Exec::Parallel, |_| {}).unwrap();
    assert_eq!(ck.train_loss.len(), 11);
    assert!(ck.train_loss[10] < ck.train_loss[0], "{:?}", ck.train_loss);
    let best = ck.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(ck.val_loss[ck.epoch], best);
}

#[test]
fn training_rejects_mismatched_actions() {
    let days = generate_dataset(&GeneratorConfig::with(20, 7, 3)).unwrap();
    let splits = split_dataset(&days, &SplitSpec::proportional(20, 3).unwrap()).unwrap();
    let has_six = days.iter().flat_map(|d| &d.hours).any(|r| r.action.index() == 6);
    let cfg = ForecasterConfig { epochs: 1, ..small(1) };
    let r = train_forecaster(&days, &splits, &cfg, Exec::Sequential, |_| {});
    assert_eq!(r.is_err(), has_six);
    let empty = Splits { train: vec![], ..splits };
    assert!(train_forecaster(&days, &empty, &cfg, Exec::Sequential, |_| {}).is_err());
}

#[test]
fn predictions_are_valid_and_deterministic() {
    let (days, _) = toy();
    let m = Forecaster::new(small(15)).unwrap();
    let env = days[10].envs();
    for mode in [DecodeMode::Greedy, DecodeMode::Sample { seed: 3, min_prob: 0.0 }] {
        let p = m.predict_day(&days[7..10], &env, mode).unwrap();
        assert_eq!(p.actions.len(), 24);
        assert!(p.actions.iter().all(|a| a.index() < 6));
        for row in &p.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(p, m.predict_day(&days[7..10], &env, mode).unwrap());
    }
    assert!(m.predict_day(&days[8..10], &env, DecodeMode::Greedy).is_err());
}

#[test]
fn greedy_prediction_emits_argmax() {
    let (days, _) = toy();
    let m = Forecaster::new(small(16)).unwrap();
    let p = m.predict_day(&days[0..3], &days[3].envs(), DecodeMode::Greedy).unwrap();
    for (a, row) in p.actions.iter().zip(&p.probs) {
        assert_eq!(a.index(), model::argmax(row));
    }
}

#[test]
fn truncated_draw_respects_floor() {
    let p = [0.5, 0.3, 0.15, 0.05];
    assert_eq!(model::truncated_draw(&p, 0.0, 0.1), 0);
    assert_eq!(model::truncated_draw(&p, 0.999, 0.1), 2);
    assert_eq!(model::truncated_draw(&p, 0.999, 0.0), 3);
    // 0.5 / 0.95 of the kept mass lies below 0.52.
    assert_eq!(model::truncated_draw(&p, 0.52, 0.1), 0);
    assert_eq!(model::truncated_draw(&p, 0.53, 0.1), 1);
}

#[test]
fn from_params_checks_shapes() {
    let m = Forecaster::new(small(17)).unwrap();
    assert!(Forecaster::from_params(small(17), m.params().clone()).is_ok());
    let other = ForecasterConfig { hidden_dim: 8, ..small(17) };
    assert!(Forecaster::from_params(other, m.params().clone()).is_err());
}

#[test]
fn double_double_loss_agrees_with_batched_loss() {
    for (cfg, n) in [(ForecasterConfig::micro(7, 21), 5), (small(22), 3)] {
        let m = Forecaster::new(cfg).unwrap();
        let data = random_samples(&m, n, 23).unwrap();
        let coins: Vec<Vec<bool>> =
            data.iter().map(|s| teacher_coins(2, 1, s.day as u64, m.layout.hours, 0.5)).collect();
        let fast = m.loss(&data, &coins, Exec::Sequential).unwrap();
        let slow = crate::numkit::dd::to_f64(reference::loss_dd(&m.layout, m.params(), &data, &coins));
        assert!((fast - slow).abs() < 1e-12 * slow.abs(), "{fast} vs {slow}");
    }
}
