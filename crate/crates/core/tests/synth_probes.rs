use nbfuse_core::synthdata::{generate, probe_cross_val_accuracy, SynthConfig};

fn features(v: impl Iterator<Item = Vec<f32>>) -> Vec<Vec<f64>> {
    v.map(|x| x.into_iter().map(f64::from).collect()).collect()
}

#[test]
fn image_probe_separates_ud_but_not_pd_from_d() {
    let ds = generate(&SynthConfig {
        samples_per_class: 300,
        image_sep: 20.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let x = features(ds.records.iter().map(|r| r.image.clone()));
    let ud: Vec<usize> = ds.records.iter().map(|r| usize::from(r.label != 0)).collect();
    let ud_acc = probe_cross_val_accuracy(&x, &ud, 2, 5, 1.0, 1).unwrap();
    assert!(ud_acc > 0.99, "UD-vs-rest {ud_acc}");

    let (pd_x, pd_y): (Vec<Vec<f64>>, Vec<usize>) = x
        .iter()
        .zip(&ds.records)
        .filter(|(_, r)| r.label != 0)
        .map(|(f, r)| (f.clone(), r.label - 1))
        .unzip();
    let pd_acc = probe_cross_val_accuracy(&pd_x, &pd_y, 2, 5, 1.0, 1).unwrap();
    assert!(pd_acc <= 0.60, "PD-vs-D {pd_acc}");
}

#[test]
fn clean_text_separates_all_three_classes() {
    let ds = generate(&SynthConfig {
        samples_per_class: 200,
        ..SynthConfig::default()
    })
    .unwrap();
    let x = features(ds.records.iter().map(|r| r.text.clone()));
    let y: Vec<usize> = ds.records.iter().map(|r| r.label).collect();
    let acc = probe_cross_val_accuracy(&x, &y, 3, 5, 1.0, 2).unwrap();
    assert!(acc > 0.7, "{acc}");
}

#[test]
fn fully_corrupted_text_carries_no_class_signal() {
    let ds = generate(&SynthConfig {
        samples_per_class: 500,
        noise_rate: 1.0,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(ds.records.len(), 1500);
    assert!(ds.records.iter().all(|r| r.noisy));
    let x = features(ds.records.iter().map(|r| r.text.clone()));
    let y: Vec<usize> = ds.records.iter().map(|r| r.label).collect();
    let acc = probe_cross_val_accuracy(&x, &y, 3, 5, 1e3, 3).unwrap();
    assert!((acc - 1.0 / 3.0).abs() <= 0.05, "{acc}");
}

#[test]
fn split_is_stratified_80_20() {
    let ds = generate(&SynthConfig {
        samples_per_class: 50,
        ..SynthConfig::default()
    })
    .unwrap();
    for c in 0..3 {
        assert_eq!(ds.val().iter().filter(|r| r.label == c).count(), 10);
        assert_eq!(ds.train().iter().filter(|r| r.label == c).count(), 40);
    }
}
