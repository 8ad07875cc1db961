mod common;

use common::*;
use gridctl::io::*;
use gridctl::netmodel::MeasSelection;
use gridctl::synth::*;
use gridctl::Error;
use nalgebra::DMatrix;

fn tmp(name: &str, text: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("gridctl-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn model_file_round_trip() {
    let lm = case_model("case9.json", MeasSelection::Generators);
    let f = ModelFile::from_model(&lm);
    let text = to_json_pretty(&f);
    let back: ModelFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back, f);
    let m2 = back.to_model::<f64>().unwrap();
    assert_eq!(m2.a0, lm.a0);
    assert_eq!(m2.b0, lm.b0);
    assert_eq!(m2.c0, lm.c0);
    assert_eq!(m2.freq_map, lm.freq_map);
    assert_eq!(m2.freq_bus, lm.freq_bus);
    assert_eq!(m2.gen_freq, lm.gen_freq);
    assert_eq!(m2.injection_labels, lm.injection_labels);
    assert_eq!(m2.channel_buses().unwrap(), lm.channel_buses().unwrap());
    assert!(matches!(read_input(tmp("model.json", &text)).unwrap(), Input::Model(_)));
}

#[test]
fn bare_model_file() {
    match read_input(data("scalar.json")).unwrap() {
        Input::Model(m) => {
            let lm = m.to_model::<f64>().unwrap();
            assert_eq!(lm.a0[(0, 0)], -1.0);
        }
        Input::Case(_) => panic!("expected a model"),
    }
    assert!(matches!(read_input(data("smib.json")).unwrap(), Input::Case(_)));
}

#[test]
fn partial_network_metadata_rejected() {
    let lm = case_model("smib.json", MeasSelection::Full);
    let mut f = ModelFile::from_model(&lm);
    f.freq_bus = None;
    assert!(matches!(f.to_model::<f64>(), Err(Error::Validation { .. })));
    let mut f = ModelFile::from_model(&lm);
    f.format = "other/1".into();
    assert!(matches!(f.to_model::<f64>(), Err(Error::Validation { .. })));
    let mut f = ModelFile::from_model(&lm);
    f.a0.data[0].pop();
    assert!(matches!(f.to_model::<f64>(), Err(Error::Validation { .. })));
}

#[test]
fn unknown_fields_and_garbage() {
    let text = std::fs::read_to_string(data("scalar.json")).unwrap();
    let extra = text.replacen('{', "{\"extra\": 1,", 1);
    assert!(matches!(read_input(tmp("extra.json", &extra)), Err(Error::Parse(_))));
    assert!(matches!(read_input(tmp("garbage.json", "not json")), Err(Error::Parse(_))));
}

#[test]
fn gain_and_certificate_round_trip() {
    let lm = case_model("smib.json", MeasSelection::Full);
    let r = synthesize(&lm, &SynthesisWeights::new(1.0, 1.0, 1.0, 1e4)).unwrap();
    let g = GainFile::new(&lm, &r.k0, r.path, SynthesisWeights::new(1.0, 1.0, 1.0, 1e4), r.row_support.clone());
    let back: GainFile = serde_json::from_str(&to_json_pretty(&g)).unwrap();
    assert_eq!(back, g);
    assert_eq!(back.gain(&lm).unwrap(), r.k0);
    let wrong = case_model("case9.json", MeasSelection::Full);
    assert!(matches!(back.gain(&wrong), Err(Error::Dimension(_))));

    let c = CertificateFile::new(&lm, &r);
    let text = to_json_pretty(&c);
    assert!(text.contains("\"sigma_star\": [\n    null\n  ]"));
    let back: CertificateFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.sigma_star, vec![None]);
}

#[test]
fn labeled_matrix_checks() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let l = LabeledMatrix::plain(&m);
    assert_eq!(l.rows, vec!["0", "1"]);
    assert_eq!(l.to_matrix::<f64>("x").unwrap(), m);
    let mut bad = l.clone();
    bad.rows.push("2".into());
    assert!(bad.to_matrix::<f64>("x").is_err());
}
