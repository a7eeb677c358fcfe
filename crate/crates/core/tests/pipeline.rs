//! End-to-end runs on a small synthetic world.

use std::sync::OnceLock;

use espew_core::key::Method;
use espew_core::simulate::pipeline::{run_attack, StealerService};
use espew_core::simulate::{
    run_pipeline, run_pipeline_seeded, AttackSpec, CellSeeds, KeySpec, PipelineConfig, StealerModel, SyntheticConfig,
    World,
};
use espew_core::{CseConfig, Document, VerifyParams};

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        World::build(&SyntheticConfig {
            corpus_size: 1500,
            vocab_size: 2000,
            dim: 64,
            ..SyntheticConfig::with_seed(7)
        })
        .unwrap()
    })
}

fn attacks() -> Vec<AttackSpec> {
    vec![
        AttackSpec::None,
        AttackSpec::Cse(CseConfig::with_k(4)),
        AttackSpec::Dropout { rate: 0.3 },
        AttackSpec::Permute,
    ]
}

#[test]
fn runs_are_deterministic() {
    let w = world();
    let key = w.make_key(&KeySpec::new(Method::Espew, 1)).unwrap();
    for a in attacks() {
        let cfg = PipelineConfig::default();
        assert_eq!(run_pipeline(w, &key, &a, &cfg, 5).unwrap(), run_pipeline(w, &key, &a, &cfg, 5).unwrap());
    }
}

#[test]
fn distance_gap_is_minus_twice_the_cosine_gap() {
    let w = world();
    for m in Method::ALL {
        let key = w.make_key(&KeySpec::new(m, 2)).unwrap();
        for a in attacks() {
            let r = run_pipeline(w, &key, &a, &PipelineConfig::default(), 3).unwrap().report;
            assert!((r.delta_l2_pct + 2.0 * r.delta_cos_pct).abs() < 1e-9, "{m:?} {a}");
        }
    }
}

#[test]
fn stealer_replays_copies_and_perturbs_new_text_reproducibly() {
    let w = world();
    let key = w.make_key(&KeySpec::new(Method::Espew, 1)).unwrap();
    let build = |seed| {
        let attacked = run_attack(&espew_core::inject::watermark_matrix(&w.corpus, &w.clean, &key).unwrap(), &AttackSpec::None, None, 0).unwrap();
        StealerService::new(w, &key, attacked, StealerModel::default(), 1.0, seed).unwrap()
    };
    let (a, b, c) = (build(1), build(1), build(2));
    let known = &w.corpus[3];
    assert_eq!(a.embed(known).unwrap().values(), a.table().row(3));
    let fresh = Document::from_text("q", "tok00007 tok00100 tok01500 tok00042");
    assert_eq!(a.embed(&fresh).unwrap(), b.embed(&fresh).unwrap());
    assert_ne!(a.embed(&fresh).unwrap(), c.embed(&fresh).unwrap());
    let norm: f64 = a.embed(&fresh).unwrap().values().iter().map(|v| v * v).sum();
    assert!((norm - 1.0).abs() < 1e-12);
}

#[test]
fn permuting_stealer_is_caught_bit_for_bit() {
    let w = world();
    for m in [Method::Espew, Method::None] {
        let key = w.make_key(&KeySpec::new(m, 4)).unwrap();
        let cfg = PipelineConfig {
            verify: VerifyParams {
                permuted_target: true,
                ..VerifyParams::default()
            },
            ..PipelineConfig::default()
        };
        let seeds = CellSeeds::from_master(9);
        let plain = run_pipeline_seeded(w, &key, &AttackSpec::None, &cfg, seeds).unwrap();
        let permuted = run_pipeline_seeded(w, &key, &AttackSpec::Permute, &cfg, seeds).unwrap();
        assert_eq!(plain.report, permuted.report);
        assert_eq!(plain.report.p_value.to_bits(), permuted.report.p_value.to_bits());
        // against the stored target the permutation hides the mark
        if m == Method::Espew {
            let stored = PipelineConfig::default();
            assert!(run_pipeline_seeded(w, &key, &AttackSpec::None, &stored, seeds).unwrap().report.is_copy);
            assert!(!run_pipeline_seeded(w, &key, &AttackSpec::Permute, &stored, seeds).unwrap().report.is_copy);
        }
    }
}

#[test]
fn full_rank_elimination_is_an_error_not_a_verdict() {
    // a suspicious set spanning every direction leaves no rows to learn from
    let w = world();
    let key = w.make_key(&KeySpec::new(Method::Espew, 1)).unwrap();
    let cfg = PipelineConfig {
        cse_reference: false,
        ..PipelineConfig::default()
    };
    let wipe = AttackSpec::Cse(CseConfig {
        k: 64,
        outlier_sigma: 0.01,
        pair_sample: 50_000,
        ..CseConfig::default()
    });
    let err = run_pipeline(w, &key, &wipe, &cfg, 1).unwrap_err();
    assert!(err.to_string().contains("zero"), "{err}");
}
