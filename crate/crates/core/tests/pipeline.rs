mod common;

use common::{fake_corpus, quick_config};
use proptest::prelude::*;
use sphmm_sid::corpus::{Preset, Split, SynthSpec};
use sphmm_sid::eval::{self, Conditioning};
use sphmm_sid::labels::{Emotion, Gender, Label};
use sphmm_sid::pipeline::{
    train_registry, Approach, ModelKey, ModelRegistry, Overrides, Recognizer, RegistryDims,
    ScoreSource, TrainingPlan,
};
use sphmm_sid::sphmm::{Alpha, Fusion, SphmmScores};
use sphmm_sid::Error;

const E3: [Emotion; 3] = [Emotion::Neutral, Emotion::Anger, Emotion::Sadness];

fn labels_for(n: u32, emotions: &[Emotion], reps: usize) -> Vec<Label> {
    let mut out = Vec::new();
    for g in Gender::ALL {
        for s in 1..=n {
            for &e in emotions {
                out.extend(std::iter::repeat_n(Label::new(g, e, s), reps));
            }
        }
    }
    out
}

#[test]
fn csd_shaped_plan() {
    let labels: Vec<Label> = SynthSpec::preset(Preset::CsdShape)
        .records()
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.label())
        .collect();
    assert_eq!(labels.len(), 10800);
    let plan = TrainingPlan::new(&labels, false).unwrap();
    let c = plan.counts();
    assert_eq!((c.gender, c.emotion, c.speaker, c.one_stage), (2, 12, 300, 300));
    let e = plan.entries();
    assert_eq!(e[&ModelKey::Gender(Gender::Male)].len(), 5400);
    assert_eq!(e[&ModelKey::Emotion(Gender::Female, Emotion::Fear)].len(), 900);
    assert_eq!(e[&ModelKey::Speaker(Gender::Male, Emotion::Anger, 25)].len(), 36);
    assert_eq!(e[&ModelKey::OneStage(Gender::Female, 3, Emotion::Disgust)].len(), 36);
}

#[test]
fn desk_plan_has_18_one_stage_models() {
    let plan = TrainingPlan::new(&labels_for(3, &E3, 2), true).unwrap();
    let c = plan.counts();
    assert_eq!(c.one_stage, 18);
    assert_eq!(c.speaker, 18);
    assert_eq!(c.emotion, 6);
    assert_eq!(c.pooled_speaker, 6);
    assert_eq!(c.pooled_emotion, 3);
}

#[test]
fn missing_cell_is_reported() {
    let labels: Vec<Label> = labels_for(2, &E3, 2)
        .into_iter()
        .filter(|l| *l != Label::new(Gender::Female, Emotion::Anger, 2))
        .collect();
    match TrainingPlan::new(&labels, false) {
        Err(Error::MissingCell(cell)) => assert!(cell.contains("F02") || cell.contains('2'), "{cell}"),
        other => panic!("expected MissingCell, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_counts_follow_formulas(n in 1u32..8, m in 1usize..=6, reps in 1usize..3) {
        let plan = TrainingPlan::new(&labels_for(n, &Emotion::ALL[..m], reps), true).unwrap();
        let c = plan.counts();
        let (n, m) = (n as usize, m);
        prop_assert_eq!(c.gender, 2);
        prop_assert_eq!(c.emotion, 2 * m);
        prop_assert_eq!(c.speaker, 2 * n * m);
        prop_assert_eq!(c.one_stage, 2 * n * m);
        prop_assert_eq!(c.pooled_speaker, 2 * n);
        prop_assert_eq!(c.pooled_emotion, m);
    }
}

#[test]
fn trained_counts_match_plan() {
    for (n, m) in [(1u32, 1usize), (2, 2), (1, 3)] {
        let (u, l) = fake_corpus(n, &Emotion::ALL[..m], 3, 4);
        let reg = train_registry(&u, &l, &quick_config(false)).unwrap();
        let c = reg.counts();
        let (nn, mm) = (n as usize, m);
        assert_eq!((c.gender, c.emotion, c.speaker, c.one_stage), (2, 2 * mm, 2 * nn * mm, 2 * nn * mm));
        assert_eq!(reg.training_counts().len(), 2 + 2 * mm + 4 * nn * mm);
    }
}

#[test]
fn single_speaker_single_emotion_registry() {
    let (u, l) = fake_corpus(1, &[Emotion::Neutral], 3, 11);
    let reg = train_registry(&u, &l, &quick_config(true)).unwrap();
    let fusion = Fusion::default();
    for approach in [Approach::OneStage, Approach::ThreeStage, Approach::Exp1, Approach::Exp2, Approach::Exp3] {
        for (utt, label) in u.iter().zip(&l) {
            let r = reg.identify(utt, approach, fusion, Overrides::default()).unwrap();
            assert_eq!(r.predicted.speaker, 1);
            assert_eq!(r.predicted.gender, label.gender, "{approach}");
        }
    }
    // Worst case: only one speaker per gender to pick from.
    let table = eval::worst_case_eval(&reg, &u, &l, fusion).unwrap();
    assert!(table.rows.iter().all(|r| r.male == 100.0 && r.female == 100.0));
}

#[test]
fn identification_recovers_fake_labels() {
    let (u, l) = fake_corpus(2, &E3, 4, 21);
    let reg = train_registry(&u, &l, &quick_config(true)).unwrap();
    let (test_u, test_l) = fake_corpus(2, &E3, 2, 22);
    for approach in [Approach::OneStage, Approach::ThreeStage] {
        let res = eval::evaluate(&reg, &test_u, &test_l, approach, Fusion::default(), Conditioning::Cascade).unwrap();
        let hits = res.iter().filter(|r| r.identity_correct()).count();
        assert!(hits * 10 >= res.len() * 9, "{approach}: {hits}/{}", res.len());
    }
}

#[test]
fn oracle_three_stage_equals_direct_speaker_stage() {
    let (u, l) = fake_corpus(2, &E3, 3, 31);
    let reg = train_registry(&u, &l, &quick_config(false)).unwrap();
    let (test_u, test_l) = fake_corpus(2, &E3, 1, 32);
    for alpha in [0.0, 0.5, 1.0] {
        let fusion = Fusion::new(Alpha::new(alpha).unwrap(), true);
        for (utt, label) in test_u.iter().zip(&test_l) {
            let rec = reg.recognizer(utt);
            let (direct, _) = rec.identify_speaker(label.gender, label.emotion).unwrap();
            let r = rec.identify_three_stage(fusion, Overrides::truth(label)).unwrap();
            assert_eq!(r.predicted.speaker, direct);
            assert_eq!(r.predicted.gender, label.gender);
            assert_eq!(r.predicted.emotion, Some(label.emotion));
        }
    }
}

#[test]
fn replayed_scores_equal_live_scores() {
    let (u, l) = fake_corpus(2, &E3, 3, 41);
    let reg = train_registry(&u, &l, &quick_config(true)).unwrap();
    let (test_u, test_l) = fake_corpus(2, &E3, 1, 42);
    let tables = eval::score_tables(&reg, &test_u).unwrap();
    for approach in [Approach::OneStage, Approach::ThreeStage, Approach::Exp1, Approach::Exp2, Approach::Exp3] {
        for cond in [Conditioning::Cascade, Conditioning::Oracle, Conditioning::WorstCase] {
            let fusion = Fusion::new(Alpha::new(0.3).unwrap(), true);
            let live = eval::evaluate(&reg, &test_u, &test_l, approach, fusion, cond).unwrap();
            let replay = eval::evaluate_tables(&reg, &tables, &test_l, approach, fusion, cond).unwrap();
            assert_eq!(live, replay);
        }
    }
}

#[test]
fn ablation_needs_ablation_models() {
    let (u, l) = fake_corpus(1, &E3, 3, 51);
    let reg = train_registry(&u, &l, &quick_config(false)).unwrap();
    let err = reg
        .identify(&u[0], Approach::Exp1, Fusion::default(), Overrides::default())
        .unwrap_err();
    assert!(matches!(err, Error::AblationModelsMissing));
}

#[test]
fn persistence_and_determinism() {
    let (u, l) = fake_corpus(2, &E3[..2], 3, 61);
    let cfg = quick_config(true);
    let a = train_registry(&u, &l, &cfg).unwrap();
    let b = train_registry(&u, &l, &cfg).unwrap();
    assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| train_registry(&u, &l, &cfg)).unwrap();
    assert_eq!(a.content_hash().unwrap(), single.content_hash().unwrap());

    let other = train_registry(&u, &l, &sphmm_sid::pipeline::RegistryConfig { seed: 2, ..cfg.clone() }).unwrap();
    assert_ne!(a.content_hash().unwrap(), other.content_hash().unwrap());

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let loaded = ModelRegistry::load(dir.path()).unwrap();
    assert_eq!(loaded, a);
    assert_eq!(loaded.content_hash().unwrap(), a.content_hash().unwrap());
    let fusion = Fusion::default();
    for utt in &u {
        assert_eq!(
            loaded.identify(utt, Approach::OneStage, fusion, Overrides::default()).unwrap(),
            a.identify(utt, Approach::OneStage, fusion, Overrides::default()).unwrap()
        );
    }
}

#[test]
fn corrupt_registry_is_rejected() {
    let (u, l) = fake_corpus(1, &E3[..1], 3, 71);
    let reg = train_registry(&u, &l, &quick_config(false)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    reg.save(dir.path()).unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
    assert!(matches!(
        ModelRegistry::load(dir.path()),
        Err(Error::FormatVersion { found: 99, .. })
    ));
    std::fs::remove_dir_all(dir.path().join("models")).unwrap();
    assert!(ModelRegistry::load(dir.path()).unwrap_err().is_io());
}

/// Scores derived from a seed, optionally shifted by a constant. Values,
/// lengths and weights are dyadic so the shifted arithmetic is exact.
struct MockScores {
    seed: u64,
    shift: f64,
    flat_gender: bool,
}

impl MockScores {
    fn value(&self, key: &str) -> f64 {
        let h = sphmm_sid::seed::derive_seed(self.seed, key);
        -1000.0 + (h % 8192) as f64 / 8.0 + self.shift
    }

    fn sphmm(&self, key: &str) -> SphmmScores {
        SphmmScores {
            acoustic: self.value(&format!("{key}/a")),
            suprasegmental: self.value(&format!("{key}/s")),
            acoustic_len: 128,
            suprasegmental_len: 4,
        }
    }
}

impl ScoreSource for MockScores {
    fn gender(&self, g: Gender) -> sphmm_sid::Result<f64> {
        Ok(if self.flat_gender { -5.0 } else { self.value(&format!("g{g}")) })
    }
    fn emotion(&self, g: Gender, e: Emotion) -> sphmm_sid::Result<SphmmScores> {
        Ok(self.sphmm(&format!("e{g}{e}")))
    }
    fn speaker(&self, g: Gender, e: Emotion, s: u32) -> sphmm_sid::Result<f64> {
        Ok(self.value(&format!("s{g}{e}{s}")))
    }
    fn one_stage(&self, g: Gender, s: u32, e: Emotion) -> sphmm_sid::Result<SphmmScores> {
        Ok(self.sphmm(&format!("o{g}{s}{e}")))
    }
    fn pooled_speaker(&self, g: Gender, s: u32) -> sphmm_sid::Result<SphmmScores> {
        Ok(self.sphmm(&format!("p{g}{s}")))
    }
    fn pooled_emotion(&self, e: Emotion) -> sphmm_sid::Result<SphmmScores> {
        Ok(self.sphmm(&format!("q{e}")))
    }
}

#[test]
fn gender_tie_goes_to_male() {
    let dims = RegistryDims::new(3, E3.to_vec()).unwrap();
    let rec = Recognizer::new(&dims, true, MockScores { seed: 1, shift: 0.0, flat_gender: true });
    let (g, stage) = rec.identify_gender().unwrap();
    assert_eq!(g, Gender::Male);
    assert_eq!(stage.winner, 0);
    let r = rec.identify_three_stage(Fusion::default(), Overrides::default()).unwrap();
    assert_eq!(r.predicted.gender, Gender::Male);
}

#[test]
fn unknown_override_emotion_is_rejected() {
    let dims = RegistryDims::new(2, E3.to_vec()).unwrap();
    let rec = Recognizer::new(&dims, false, MockScores { seed: 1, shift: 0.0, flat_gender: false });
    let o = Overrides { gender: None, emotion: Some(Emotion::Fear) };
    assert!(matches!(
        rec.identify_three_stage(Fusion::default(), o),
        Err(Error::UnknownLabel(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decisions_ignore_a_common_score_shift(
        seed in any::<u64>(),
        shift in -500i32..500,
        eighths in 0u32..=8,
        normalize: bool,
    ) {
        let dims = RegistryDims::new(4, E3.to_vec()).unwrap();
        let base = Recognizer::new(&dims, true, MockScores { seed, shift: 0.0, flat_gender: false });
        let moved = Recognizer::new(&dims, true, MockScores { seed, shift: shift as f64, flat_gender: false });
        let fusion = Fusion::new(Alpha::new(eighths as f64 / 8.0).unwrap(), normalize);
        for approach in [Approach::OneStage, Approach::ThreeStage, Approach::Exp1, Approach::Exp2, Approach::Exp3] {
            let a = base.identify(approach, fusion, Overrides::default()).unwrap();
            let b = moved.identify(approach, fusion, Overrides::default()).unwrap();
            prop_assert_eq!(a.predicted, b.predicted);
        }
    }
}
