mod common;

use std::sync::Arc;

use common::*;
use plan_iv::apps::{AppRecipe, BanditRecipe, NoncompliantRecipe, RegressionRecipe};
use plan_iv::env::{
    best_response, collect_dataset, make_confounded_linear_env, step, AgentModel, AgentUtility, BehaviorPolicy, Block,
    ConfounderMap, EnvRecipe, Gain, InitialState, LinearChannel, ObservableTrajectory, ObservationChannel,
    OfflineDataset, TypeDistribution,
};
use plan_iv::rng::rng_from_seed;

fn quadratic_utility(w: &[Vec<f64>], a: &[f64], b: &[f64]) -> f64 {
    // (Wb)ᵀa - ½|b|², the type offset z drops out of the maximizer
    let wb: Vec<f64> = w
        .iter()
        .map(|row| row.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect();
    wb.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() - 0.5 * b.iter().map(|x| x * x).sum::<f64>()
}

#[test]
fn closed_form_response_matches_finite_difference_maximum() {
    let w = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
    let mut st = copy_stage(1, 2, point_type(vec![0.0]), Block::action(), Block::action());
    st.agent = AgentModel::ClosedFormLinear {
        action_range: None,
        gain: Gain::Fixed { w: w.clone() },
    };
    let env = structure(vec![st], 1, vec![vec![1.0, 1.0]], 0.0, vec![0.0]);
    let a = [1.0, 1.0];
    let b = best_response(&env, 0, &[0.0], &a, &[0.0]).unwrap();
    assert_eq!(b, vec![1.0, 2.0]);
    let best = quadratic_utility(&w, &a, &b);
    let h = 1e-4;
    for k in 0..2 {
        for sign in [-1.0, 1.0] {
            let mut p = b.clone();
            p[k] += sign * h;
            assert!(quadratic_utility(&w, &a, &p) < best);
        }
    }
}

#[test]
fn zero_gain_gives_zero_effort() {
    let mut st = copy_stage(1, 2, point_type(vec![0.0]), Block::action(), Block::action());
    st.agent = AgentModel::ClosedFormLinear {
        action_range: None,
        gain: Gain::Fixed {
            w: vec![vec![0.0; 2]; 2],
        },
    };
    let env = structure(vec![st], 1, vec![vec![3.0, -1.0]], 0.0, vec![0.0]);
    assert_eq!(
        best_response(&env, 0, &[0.0], &[3.0, -1.0], &[0.0]).unwrap(),
        vec![0.0, 0.0]
    );
}

#[test]
fn finite_argmax_enumerates_candidates() {
    let mut st = copy_stage(1, 1, point_type(vec![0.0]), Block::action(), Block::action());
    st.agent = AgentModel::FiniteArgmax {
        candidates: vec![vec![-1.0], vec![0.0], vec![1.0]],
        utility: AgentUtility::Custom(Arc::new(|_, _, _, _, b: &[f64]| -(b[0] - 0.4).powi(2))),
    };
    let env = structure(vec![st], 1, vec![vec![1.0]], 0.0, vec![0.0]);
    // brute force: utilities -1.96, -0.16, -0.36
    assert_eq!(best_response(&env, 0, &[0.0], &[1.0], &[0.0]).unwrap(), vec![0.0]);
}

#[test]
fn finite_argmax_breaks_ties_by_lowest_index() {
    let mut st = copy_stage(1, 1, point_type(vec![0.0]), Block::action(), Block::action());
    st.agent = AgentModel::FiniteArgmax {
        candidates: vec![vec![-1.0], vec![1.0]],
        utility: AgentUtility::Custom(Arc::new(|_, _, _, _, b: &[f64]| -b[0].abs())),
    };
    let env = structure(vec![st], 1, vec![vec![1.0]], 0.0, vec![0.0]);
    assert_eq!(best_response(&env, 0, &[0.0], &[1.0], &[0.0]).unwrap(), vec![-1.0]);
}

/// `o = a`, features `(o₁, s₁)`, reward weights `(1, 0)`.
fn noise_free_spec(f1_identity: bool) -> plan_iv::env::StrategicMdpSpec {
    let types = if f1_identity {
        TypeDistribution::Gaussian {
            mean: vec![0.0],
            std: vec![1.0],
        }
    } else {
        point_type(vec![0.0])
    };
    let mut st = copy_stage(
        1,
        1,
        types,
        Block::Concat(vec![Block::obs(), Block::state()]),
        Block::action(),
    );
    if f1_identity {
        st.reward_confounder = ConfounderMap::Linear {
            weights: vec![vec![1.0]],
            center: vec![0.0],
        };
    }
    let env = structure(vec![st], 1, vec![vec![3.0], vec![-1.0]], 0.0, vec![2.0]);
    spec(env, vec![vec![1.0, 0.0]], vec![vec![vec![0.5, -0.25]]], 0.0)
}

#[test]
fn noise_free_step_is_the_forward_map() {
    let sp = noise_free_spec(false);
    let out = step(&sp, 0, &[2.0], &[3.0], &mut rng_from_seed(1)).unwrap();
    assert_eq!(out.observation, vec![3.0]);
    assert_eq!(out.reward, 3.0);
    assert_eq!(out.next_state, vec![0.5 * 3.0 - 0.25 * 2.0]);
}

#[test]
fn reward_confounder_averages_out() {
    let sp = noise_free_spec(true);
    let mut rng = rng_from_seed(11);
    let n = 100_000;
    let rs: Vec<f64> = (0..n)
        .map(|_| step(&sp, 0, &[2.0], &[3.0], &mut rng).unwrap().reward)
        .collect();
    let (m, se) = mean_and_se(&rs);
    assert!((m - 3.0).abs() <= 5.0 * se, "mean {m}, se {se}");
}

#[test]
fn step_replays_bit_for_bit() {
    let r = EnvRecipe::calibration_1d();
    let sp = make_confounded_linear_env(&EnvRecipe {
        sigma: 0.3,
        eps_scale: 0.2,
        ..r
    })
    .unwrap();
    let a = step(&sp, 0, &[0.0], &[1.0], &mut rng_from_seed(5)).unwrap();
    let b = step(&sp, 0, &[0.0], &[1.0], &mut rng_from_seed(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_trajectory_equals_one_step() {
    let sp = noise_free_spec(false);
    let ds = collect_dataset(&sp, &BehaviorPolicy::Fixed(vec![1.0, 0.0]), 1, 9).unwrap();
    let out = step(&sp, 0, &[2.0], &[3.0], &mut rng_from_seed(0)).unwrap();
    let t = &ds.observed[0];
    assert_eq!(t.states, vec![vec![2.0], out.next_state.clone()]);
    assert_eq!(t.observations[0], out.observation);
    assert_eq!(t.rewards[0], out.reward);
    assert_eq!(ds.hidden[0].agent_actions[0], out.agent_action);
}

#[test]
fn uniform_behavior_frequencies() {
    let mut r = EnvRecipe::calibration_1d();
    r.action_set = vec![vec![-1.0], vec![-0.5], vec![0.5], vec![1.0]];
    let sp = make_confounded_linear_env(&r).unwrap();
    let ds = collect_dataset(&sp, &BehaviorPolicy::Uniform, 1000, 3).unwrap();
    let mut counts = [0usize; 4];
    for t in &ds.observed {
        counts[t.action_indices[0]] += 1;
    }
    for c in counts {
        let f = c as f64 / 1000.0;
        assert!((f - 0.25).abs() <= 0.05, "frequency {f}");
    }
}

#[test]
fn datasets_serialize_identically_and_round_trip() {
    let sp = AppRecipe::NoncompliantRec(NoncompliantRecipe::default())
        .build()
        .unwrap()
        .spec;
    let a = collect_dataset(&sp, &BehaviorPolicy::Uniform, 50, 21).unwrap();
    let b = collect_dataset(&sp, &BehaviorPolicy::Uniform, 50, 21).unwrap();
    let text = a.to_ndjson_string().unwrap();
    assert_eq!(text, b.to_ndjson_string().unwrap());
    assert_eq!(text.lines().count(), 50);
    let back = OfflineDataset::read_ndjson(text.as_bytes()).unwrap();
    assert_eq!(back, a);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first.get("hidden").is_some());
    let obs = first.get("obs").unwrap().as_object().unwrap();
    let mut keys: Vec<&str> = obs.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["action_indices", "actions", "observations", "rewards", "states"]);
}

#[test]
fn observable_records_reject_hidden_fields() {
    let json = r#"{"states":[[0.0],[1.0]],"actions":[[1.0]],"action_indices":[0],"observations":[[1.0]],"rewards":[1.0],"types":[[0.3]]}"#;
    assert!(serde_json::from_str::<ObservableTrajectory>(json).is_err());
}

#[test]
fn seventeen_significant_digits() {
    let sp = make_confounded_linear_env(&EnvRecipe {
        eps_scale: 0.7,
        ..EnvRecipe::calibration_1d()
    })
    .unwrap();
    let ds = collect_dataset(&sp, &BehaviorPolicy::Uniform, 20, 4).unwrap();
    let text = ds.to_ndjson_string().unwrap();
    let back = OfflineDataset::read_ndjson(text.as_bytes()).unwrap();
    for (x, y) in ds.observed.iter().zip(&back.observed) {
        assert_eq!(x.rewards[0].to_bits(), y.rewards[0].to_bits());
    }
}

#[test]
fn recipe_without_confounding_has_zero_confounders() {
    let sp = make_confounded_linear_env(&EnvRecipe {
        confounding_kappa: 0.0,
        ..EnvRecipe::calibration_1d()
    })
    .unwrap();
    let st = sp.structure.stage(0);
    assert!(st.reward_confounder.is_zero());
    assert!(st.transition_confounder.is_zero());
}

#[test]
fn recipe_seed_fixes_parameters() {
    let r = EnvRecipe {
        horizon: 2,
        state_dim: 2,
        action_set: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        feature_map: "state_obs_intercept".into(),
        confounding_kappa: 0.5,
        sigma: 0.1,
        eps_scale: 0.1,
        param_seed: 77,
        reward_params: None,
        transition_params: None,
        channel_noise: 0.1,
        initial_state: None,
    };
    let a = make_confounded_linear_env(&r).unwrap();
    let b = make_confounded_linear_env(&r).unwrap();
    assert_eq!(a.reward_params, b.reward_params);
    assert_eq!(a.transition_params, b.transition_params);
    let c = make_confounded_linear_env(&EnvRecipe { param_seed: 78, ..r }).unwrap();
    assert_ne!(a.reward_params, c.reward_params);
}

#[test]
fn recipe_rejects_mismatched_dimensions() {
    let mut r = EnvRecipe::calibration_1d();
    r.reward_params = Some(vec![vec![1.0, 2.0]]);
    assert!(make_confounded_linear_env(&r).is_err());
    let mut r = EnvRecipe::calibration_1d();
    r.action_set = vec![vec![1.0], vec![1.0, 2.0]];
    assert!(make_confounded_linear_env(&r).is_err());
}

#[test]
fn calibration_recipe_has_half_unit_ols_bias() {
    let sp = make_confounded_linear_env(&EnvRecipe::calibration_1d()).unwrap();
    let st = sp.structure.stage(0);
    // population moments: o = a + u, r = θ o + κ u with a = ±1 and u ~ N(0, 1)
    let kappa = match &st.reward_confounder {
        ConfounderMap::Linear { weights, .. } => weights[0][0],
        other => panic!("unexpected confounder {other:?}"),
    };
    let var_u = match &st.types {
        TypeDistribution::Gaussian { std, .. } => std[0] * std[0],
        other => panic!("unexpected types {other:?}"),
    };
    let var_a = sp.structure.action_set.iter().map(|a| a[0] * a[0]).sum::<f64>() / 2.0;
    let bias = kappa * var_u / (var_a + var_u);
    assert!((bias - 0.5).abs() < 1e-12);

    let ds = collect_dataset(&sp, &BehaviorPolicy::Uniform, 200_000, 8).unwrap();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for t in &ds.observed {
        sxy += t.observations[0][0] * t.rewards[0];
        sxx += t.observations[0][0].powi(2);
    }
    assert!((sxy / sxx - 1.5).abs() < 0.02, "empirical OLS slope {}", sxy / sxx);
}

#[test]
fn moment_equations_hold_on_data() {
    let sp = make_confounded_linear_env(&EnvRecipe {
        eps_scale: 0.5,
        sigma: 0.2,
        ..EnvRecipe::calibration_1d()
    })
    .unwrap();
    let ds = collect_dataset(&sp, &BehaviorPolicy::Uniform, 100_000, 2).unwrap();
    let st = sp.structure.stage(0);
    let xs: Vec<f64> = ds
        .observed
        .iter()
        .map(|t| {
            let x = st.phi_x.eval(&t.states[0], &t.actions[0], &t.observations[0]);
            let z = st.psi_z.eval(&t.states[0], &t.actions[0], &[0.0]);
            (t.rewards[0] - x[0] * sp.reward_params[0][0]) * z[0]
        })
        .collect();
    let (m, se) = mean_and_se(&xs);
    assert!(m.abs() <= 5.0 * se, "moment {m}, se {se}");
}

#[test]
fn transition_noise_is_centered_given_everything() {
    let ty = vec![0.8];
    let mut st = copy_stage(
        1,
        1,
        point_type(ty.clone()),
        Block::Concat(vec![Block::obs(), Block::state()]),
        Block::action(),
    );
    st.transition_confounder = ConfounderMap::Linear {
        weights: vec![vec![1.5]],
        center: vec![0.0],
    };
    let env = structure(vec![st], 1, vec![vec![1.0]], 0.4, vec![0.5]);
    let sp = spec(env, vec![vec![1.0, 0.0]], vec![vec![vec![0.3, 0.6]]], 0.1);
    let mut rng = rng_from_seed(17);
    let n = 100_000;
    let resid: Vec<f64> = (0..n)
        .map(|_| {
            let out = step(&sp, 0, &[0.5], &[1.0], &mut rng).unwrap();
            out.next_state[0] - (0.3 * out.observation[0] + 0.6 * 0.5) - 1.5 * out.agent_type[0]
        })
        .collect();
    let (m, _) = mean_and_se(&resid);
    assert!(m.abs() <= 5.0 * 0.4 / (n as f64).sqrt(), "mean residual {m}");
}

#[test]
fn application_confounders_have_mean_zero() {
    let apps = [
        AppRecipe::StrategicRegression(RegressionRecipe::default()),
        AppRecipe::StrategicBandit(BanditRecipe::default()),
        AppRecipe::NoncompliantRec(NoncompliantRecipe::default()),
        AppRecipe::RawEnv(EnvRecipe::calibration_1d()),
    ];
    let n = 100_000;
    for app in apps {
        let inst = app.build().unwrap();
        for st in &inst.ctx().stages {
            let mut rng = rng_from_seed(99);
            let draws: Vec<Vec<f64>> = (0..n).map(|_| st.types.sample(&mut rng)).collect();
            let mut series: Vec<Vec<f64>> = vec![draws.iter().map(|i| st.reward_confounder.eval(i)[0]).collect()];
            for j in 0..st.transition_confounder.out_dim() {
                series.push(draws.iter().map(|i| st.transition_confounder.eval(i)[j]).collect());
            }
            for s in series {
                let (m, se) = mean_and_se(&s);
                assert!(m.abs() <= 5.0 * se + 1e-12, "{}: mean {m}, se {se}", inst.name);
            }
        }
    }
}

#[test]
fn behavior_rows_must_be_distributions() {
    let sp = noise_free_spec(false);
    assert!(collect_dataset(&sp, &BehaviorPolicy::Fixed(vec![0.7, 0.2]), 3, 0).is_err());
    assert!(collect_dataset(&sp, &BehaviorPolicy::Fixed(vec![1.2, -0.2]), 3, 0).is_err());
    assert!(collect_dataset(&sp, &BehaviorPolicy::Fixed(vec![0.5]), 3, 0).is_err());
    assert!(collect_dataset(&sp, &BehaviorPolicy::Fixed(vec![0.5, 0.5]), 3, 0).is_ok());
}

#[test]
fn history_dependent_behavior_sees_past_observations() {
    let r = EnvRecipe {
        horizon: 2,
        ..EnvRecipe::calibration_1d()
    };
    let r = EnvRecipe {
        reward_params: Some(vec![vec![1.0]; 2]),
        transition_params: Some(vec![vec![vec![0.0]]; 2]),
        ..r
    };
    let sp = make_confounded_linear_env(&r).unwrap();
    // second action follows the sign of the first observation
    let pol = BehaviorPolicy::Custom {
        tag: "follow".into(),
        f: Arc::new(|h, hist: &[f64], _s: &[f64]| {
            assert_eq!(hist.len(), 3);
            if h == 0 {
                vec![0.5, 0.5]
            } else if hist[2] >= 0.0 {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        }),
    };
    let ds = collect_dataset(&sp, &pol, 200, 5).unwrap();
    assert_eq!(ds.behavior_policy_tag, "follow");
    for t in &ds.observed {
        assert_eq!(t.action_indices[1], usize::from(t.observations[0][0] >= 0.0));
    }
}

#[test]
fn invalid_structures_are_rejected() {
    let mut st = copy_stage(1, 1, point_type(vec![0.0]), Block::obs(), Block::action());
    st.channel = ObservationChannel::Linear(LinearChannel {
        obs_dim: 2,
        ..Default::default()
    });
    let env = structure(vec![st], 1, vec![vec![1.0]], 0.0, vec![0.0]);
    assert!(plan_iv::env::StrategicMdpSpec::new(env, vec![vec![1.0]], vec![vec![vec![0.0]]], 0.0).is_err());

    let st = copy_stage(1, 1, point_type(vec![0.0]), Block::obs(), Block::action());
    let mut env = structure(vec![st], 1, vec![vec![1.0]], -1.0, vec![0.0]);
    assert!(env.validate().is_err());
    env.sigma = 0.0;
    env.initial_state = InitialState::Point { state: vec![0.0, 1.0] };
    assert!(env.validate().is_err());
}
