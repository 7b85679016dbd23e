use bicnet_core::posthoc::{Estimator, PlugIn};
use bicnet_core::run::{fit, FitResult, RunConfig};
use bicnet_core::simulate::{gen_dataset, SimScenario};

fn small() -> (bicnet_core::Dataset, RunConfig) {
    let mut sc = SimScenario::small_scale(40, 4);
    sc.subjects = 2;
    sc.fractions = vec![0.7, 1.0];
    let (data, _) = gen_dataset(&sc).unwrap();
    let mut cfg = RunConfig::new(2, 60, 20);
    cfg.seed = 9;
    (data, cfg)
}

#[test]
fn read_back_store_scores_like_the_fit() {
    let (data, cfg) = small();
    let res = fit(&data, &cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    res.write(tmp.path(), Some(&cfg), false).unwrap();
    let back = FitResult::read(tmp.path()).unwrap();

    let (a, b) = (res.model_selection(&data).unwrap(), back.model_selection(&data).unwrap());
    assert_eq!(a.plugin, PlugIn::Covariance);
    assert_eq!(a, b);
    assert_eq!(
        res.lambda_estimate(Estimator::Median).unwrap(),
        back.lambda_estimate(Estimator::Median).unwrap()
    );
    assert_eq!(res.pi0_estimate(Estimator::Mean).unwrap(), back.pi0_estimate(Estimator::Mean).unwrap());
}

#[test]
fn plugin_deviance_is_not_above_mean_deviance_by_much() {
    // For a well-mixed posterior the plug-in should fit at least roughly as
    // well as a typical draw.
    let (data, mut cfg) = small();
    cfg.iterations = 400;
    cfg.burn_in = 200;
    let sc = fit(&data, &cfg).unwrap().model_selection(&data).unwrap();
    let plugin_dev = -2.0 * sc.plugin_log_likelihood;
    assert!(plugin_dev < sc.mean_deviance + 0.05 * sc.mean_deviance.abs(), "{sc:?}");
    assert!(sc.p_dic.is_finite());
}
