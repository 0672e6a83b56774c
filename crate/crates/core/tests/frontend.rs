use proptest::prelude::*;
use sphmm_sid::corpus::{render_utterance, Preset, SynthSpec};
use sphmm_sid::dsp::{
    deltas, frame_count, mfcc, AudioBuffer, FeatureExtractor, FilterbankEnergies, FEATURE_DIM, N_STATIC,
};
use sphmm_sid::prosody::suprasegmental_observations;

fn tone(n: usize, hz: f64) -> AudioBuffer {
    let s = (0..n)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin())
        .collect();
    AudioBuffer::new(s, 16_000).unwrap()
}

#[test]
fn one_second_gives_141_frames() {
    assert_eq!(frame_count(16_000), Some(141));
    let feats = FeatureExtractor::default().extract(&tone(16_000, 220.0)).unwrap();
    assert_eq!(feats.frame_count(), 141);
    assert!(feats.frames().iter().all(|f| f.len() == FEATURE_DIM));
}

#[test]
fn short_audio_is_rejected() {
    assert_eq!(frame_count(255), None);
    assert!(FeatureExtractor::default().extract(&tone(255, 220.0)).is_err());
}

#[test]
fn synthetic_utterance_features_are_bit_identical() {
    let spec = SynthSpec::preset(Preset::Separable);
    let record = &spec.records()[7];
    let a = render_utterance(&spec, record);
    let b = render_utterance(&spec, record);
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());

    let audio = AudioBuffer::new(a, 16_000).unwrap();
    let fx = FeatureExtractor::default();
    let f1 = fx.extract(&audio).unwrap();
    let f2 = FeatureExtractor::default().extract(&audio).unwrap();
    let bits = |f: &sphmm_sid::dsp::FeatureSequence| {
        f.frames().iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(bits(&f1), bits(&f2));
    let p1 = suprasegmental_observations(&audio).unwrap();
    let p2 = suprasegmental_observations(&audio).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(p1.len(), 3);
}

proptest! {
    #[test]
    fn constant_filterbank_gives_zero_cepstra(log_level in -20.0f64..20.0, channels in 9usize..40) {
        let e = FilterbankEnergies::new(vec![log_level.exp(); channels]).unwrap();
        let c = mfcc(&e).unwrap();
        for v in c {
            prop_assert!(v.abs() <= 1e-12, "{c:?}");
        }
    }

    #[test]
    fn constant_sequence_gives_zero_deltas(
        frame in prop::array::uniform8(-50.0f64..50.0),
        len in 1usize..30,
        window in 1usize..4,
    ) {
        let seq = vec![frame; len];
        for d in deltas(&seq, window) {
            prop_assert_eq!(d, [0.0; N_STATIC]);
        }
    }

    #[test]
    fn frame_count_formula(n in 0usize..100_000) {
        match frame_count(n) {
            None => prop_assert!(n < 256),
            Some(k) => {
                prop_assert!(256 + (k - 1) * 112 <= n);
                prop_assert!(256 + k * 112 > n);
            }
        }
    }
}
