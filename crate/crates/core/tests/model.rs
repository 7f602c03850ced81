mod common;

use common::{random_model, small_vocab};
use folkgen_core::generation::{continue_with_rng, GenerationConfig};
use folkgen_core::model::{MelodyModel, ModelError};
use folkgen_core::representation::EncodedSong;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn song() -> EncodedSong {
    EncodedSong {
        pitches: vec![0, 1, 2, 3, 1, 0, 2, 4],
        durations: vec![1, 1, 0, 0, 2, 1, 1, 1],
    }
}

#[test]
fn zero_model_is_uniform() {
    let m = MelodyModel::<f64>::zeros(small_vocab(), 6);
    let s = m.init_state();
    let (dd, _) = m.next_duration_dist(&s.rhythm, 1, 0).unwrap();
    let (pd, _) = m.next_pitch_dist(&s.melody, 0, 1).unwrap();
    assert!(dd.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    assert!(pd.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    let (r, mel) = m.teacher_forced_nll(&song()).unwrap();
    assert!((r - 3f64.ln()).abs() < 1e-12);
    assert!((mel - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn init_state_is_h0() {
    let m = random_model(small_vocab(), 5, 1, 0.5);
    let a = m.init_state();
    assert_eq!(a, m.init_state());
    for (h, l) in a.rhythm.h.iter().zip(&m.rhythm.layers) {
        assert_eq!(h, &l.h0);
    }
    for (h, l) in a.melody.h.iter().zip(&m.melody.layers) {
        assert_eq!(h, &l.h0);
    }
    assert_eq!((a.last_pitch, a.last_duration), (None, None));
}

#[test]
fn teacher_forced_nll_matches_stepwise_distributions() {
    let m = random_model(small_vocab(), 6, 2, 0.8);
    let s = song();
    let mut rs = m.rhythm.initial_state();
    let mut ms = m.melody.initial_state();
    let (mut r_sum, mut m_sum) = (0.0, 0.0);
    for n in 0..s.len() - 1 {
        let (dd, r_next) = m
            .next_duration_dist(&rs, s.durations[n], s.pitches[n])
            .unwrap();
        let (pd, m_next) = m
            .next_pitch_dist(&ms, s.pitches[n], s.durations[n + 1])
            .unwrap();
        r_sum -= dd[s.durations[n + 1]].ln();
        m_sum -= pd[s.pitches[n + 1]].ln();
        rs = r_next;
        ms = m_next;
    }
    let steps = (s.len() - 1) as f64;
    let (r, mel) = m.teacher_forced_nll(&s).unwrap();
    assert!((r - r_sum / steps).abs() < 1e-12);
    assert!((mel - m_sum / steps).abs() < 1e-12);
}

#[test]
fn melody_distribution_depends_on_upcoming_duration() {
    let m = random_model(small_vocab(), 6, 3, 0.8);
    let s = m.init_state();
    let (a, _) = m.next_pitch_dist(&s.melody, 1, 0).unwrap();
    let (b, _) = m.next_pitch_dist(&s.melody, 1, 2).unwrap();
    let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
    assert!(tv > 1e-3, "total variation {tv}");
}

#[test]
fn rhythm_distribution_depends_on_current_pitch() {
    let m = random_model(small_vocab(), 6, 4, 0.8);
    let s = m.init_state();
    let (a, _) = m.next_duration_dist(&s.rhythm, 1, 0).unwrap();
    let (b, _) = m.next_duration_dist(&s.rhythm, 1, 2).unwrap();
    assert_ne!(a, b);
}

#[test]
fn future_tokens_do_not_affect_earlier_predictions() {
    let m = random_model(small_vocab(), 6, 5, 0.8);
    let a = song();
    let mut b = a.clone();
    b.pitches[6] = 1;
    b.durations[6] = 2;
    let ia = m.song_inputs(&a).unwrap();
    let ib = m.song_inputs(&b).unwrap();
    let (pa, _) = folkgen_core::gru::forward_sequence(&m.melody, &ia.melody_inputs).unwrap();
    let (pb, _) = folkgen_core::gru::forward_sequence(&m.melody, &ib.melody_inputs).unwrap();
    // Melody step 5 sees d[6]; everything before it is untouched.
    assert_eq!(pa[..5], pb[..5]);
    assert_ne!(pa[5], pb[5]);
    let (ra, _) = folkgen_core::gru::forward_sequence(&m.rhythm, &ia.rhythm_inputs).unwrap();
    let (rb, _) = folkgen_core::gru::forward_sequence(&m.rhythm, &ib.rhythm_inputs).unwrap();
    assert_eq!(ra[..6], rb[..6]);
}

#[test]
fn networks_share_no_parameters() {
    let mut m = random_model(small_vocab(), 6, 6, 0.8);
    let before = m.teacher_forced_nll(&song()).unwrap();
    m.rhythm.output.b_o[0] += 1.0;
    let after = m.teacher_forced_nll(&song()).unwrap();
    assert_eq!(before.1.to_bits(), after.1.to_bits());
    assert_ne!(before.0, after.0);
}

#[test]
fn invalid_indices_and_short_songs() {
    let m = MelodyModel::<f64>::zeros(small_vocab(), 3);
    let s = m.init_state();
    assert_eq!(
        m.next_duration_dist(&s.rhythm, 3, 0).unwrap_err(),
        ModelError::IndexOutOfRange {
            kind: "duration",
            index: 3,
            size: 3
        }
    );
    assert!(matches!(
        m.next_pitch_dist(&s.melody, 5, 0),
        Err(ModelError::IndexOutOfRange { kind: "pitch", .. })
    ));
    let short = EncodedSong {
        pitches: vec![4],
        durations: vec![1],
    };
    assert_eq!(
        m.teacher_forced_nll(&short).unwrap_err(),
        ModelError::TooShort(1)
    );
    let bad = EncodedSong {
        pitches: vec![0, 9],
        durations: vec![1, 1],
    };
    assert!(m.teacher_forced_nll(&bad).is_err());
}

#[test]
fn gradients_match_plain_network_calls() {
    let m = random_model(small_vocab(), 4, 7, 0.5);
    let s = song();
    let g = m.song_gradients(&s).unwrap();
    let io = m.song_inputs(&s).unwrap();
    let (nll, grad) =
        folkgen_core::gru::nll_and_gradient(&m.melody, &io.melody_inputs, &io.melody_targets)
            .unwrap();
    assert_eq!(nll, g.melody_nll);
    assert_eq!(grad, g.melody);
}

// Sampling a duration and then a pitch conditioned on it must reproduce the
// joint P(d) P(p | d) enumerated over all pairs.
#[test]
fn two_stage_sampling_matches_enumerated_joint() {
    let m = random_model(small_vocab(), 6, 8, 0.6);
    let (p_n, d_n) = (1, 1);
    let s = m.init_state();
    let (dd, _) = m.next_duration_dist(&s.rhythm, d_n, p_n).unwrap();
    let (nd, np) = (m.vocab.duration_size(), m.vocab.pitch_size());
    let mut joint = vec![0.0; nd * np];
    for d in 0..nd {
        let (pd, _) = m.next_pitch_dist(&s.melody, p_n, d).unwrap();
        for p in 0..np {
            joint[d * np + p] = dd[d] * pd[p];
        }
    }
    assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let seed = EncodedSong {
        pitches: vec![p_n],
        durations: vec![d_n],
    };
    let cfg = GenerationConfig {
        max_notes: 2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut counts = vec![0u64; nd * np];
    for _ in 0..n {
        let g = continue_with_rng(&m, &seed, &cfg, &mut rng).unwrap();
        let (p, d) = (g.encoded.pitches[1], g.encoded.durations[1]);
        // An ending is stored with the unit duration, so ending cells are pooled.
        let d = if p == m.vocab.song_ending() { 0 } else { d };
        counts[d * np + p] += 1;
    }
    let end = m.vocab.song_ending();
    let mut expected = joint.clone();
    let end_total: f64 = (0..nd).map(|d| joint[d * np + end]).sum();
    for d in 0..nd {
        expected[d * np + end] = if d == 0 { end_total } else { 0.0 };
    }
    let mut chi2 = 0.0;
    let mut cells = 0;
    for (c, e) in counts.iter().zip(&expected) {
        if *e > 0.0 {
            let e = e * n as f64;
            chi2 += (*c as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            assert_eq!(*c, 0);
        }
    }
    let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
    assert!(
        p_value > 0.01,
        "chi2 {chi2} over {cells} cells, p = {p_value}"
    );
}
