use cropspec::classify::{fit, DecisionRule, DiscriminantKind, LabelingMode, PriorMode};
use cropspec::dataset::{
    read_library, summarize, synthesize, write_library, IngestConfig, SampleRecord, SyntheticClass, SyntheticSpec,
    WavelengthGrid,
};
use cropspec::eval::{run_cv, stratified_kfold, Algorithm};
use cropspec::gaussian::ShrinkageParam;
use cropspec::{CropLabel, JointLabel, StageLabel};
use proptest::prelude::*;

fn arb_record(bands: usize) -> impl Strategy<Value = SampleRecord<f64>> {
    (
        prop::collection::vec(-5.0f64..120.0, bands),
        0..CropLabel::COUNT,
        0..StageLabel::COUNT,
        prop::option::of(-90.0f64..90.0),
    )
        .prop_map(|(x, c, s, lat)| {
            let mut r = SampleRecord::new(x, CropLabel::ALL[c], StageLabel::ALL[s]);
            r.latitude = lat;
            r.longitude = lat.map(|v| -v);
            r.aez = "7".into();
            r.source_id = "scene-1".into();
            r
        })
}

proptest! {
    #[test]
    fn written_library_reads_back_identically(records in (2usize..6).prop_flat_map(|b| prop::collection::vec(arb_record(b), 1..20))) {
        let bands = records[0].spectrum.len();
        let grid = WavelengthGrid::new((0..bands).map(|i| 437.0 + 10.0 * i as f64).collect()).unwrap();
        let ds = cropspec::dataset::Dataset::new(grid, records).unwrap();
        let mut buf = Vec::new();
        write_library(&ds, &mut buf).unwrap();
        let back = read_library::<f64, _>(buf.as_slice(), &IngestConfig::toolkit()).unwrap();
        prop_assert_eq!(back.grid(), ds.grid());
        prop_assert_eq!(back.records(), ds.records());
    }
}

#[test]
fn ghisaconus_style_export_loads() {
    let text = "\
Image,Crop,Stage,Lat,Long,AEZ,X437,X447,X457
LS1,Winter Wheat,Early_Mid,38.5,-98.1,AEZ 10,12.5,13.1,14.0
LS1,Soybean,Mature_Senesc,39.0,-97.0,AEZ 10,20.0,21.0,22.5
LS2,Corn,Critical,,,AEZ 7,5.0,6.0,7.5
";
    let ds = read_library::<f64, _>(text.as_bytes(), &IngestConfig::ghisaconus()).unwrap();
    assert_eq!(ds.grid().wavelengths(), &[437.0, 447.0, 457.0]);
    let r = &ds.records()[0];
    assert_eq!(r.joint(), JointLabel::new(CropLabel::WinterWheat, StageLabel::EarlyMid));
    assert_eq!(r.latitude, Some(38.5));
    assert_eq!(r.source_id, "LS1");
    assert_eq!(ds.records()[1].stage, StageLabel::MatureSenesc);
    assert_eq!(ds.records()[2].latitude, None);
    let s = summarize(&ds);
    assert_eq!((s.total, s.band_count, s.records_missing_location), (3, 3, 1));
}

fn spec<T: cropspec::Scalar>() -> SyntheticSpec<T> {
    let l = T::lit;
    let class = |crop, stage, m: f64| SyntheticClass {
        crop,
        stage,
        count: 25,
        mean: vec![l(m), l(m + 3.0), l(m + 1.0)],
        covariance: vec![
            vec![l(1.0), l(0.3), l(0.0)],
            vec![l(0.3), l(1.0), l(0.1)],
            vec![l(0.0), l(0.1), l(0.5)],
        ],
    };
    SyntheticSpec {
        wavelengths_nm: vec![l(500.0), l(600.0), l(700.0)],
        classes: vec![
            class(CropLabel::Cotton, StageLabel::Late, 10.0),
            class(CropLabel::Cotton, StageLabel::Harvest, 13.0),
            class(CropLabel::Rice, StageLabel::EarlyMid, 30.0),
        ],
    }
}

#[test]
fn single_precision_pipeline_agrees_with_double() {
    let d64 = synthesize(&spec::<f64>(), 3).unwrap();
    let d32 = synthesize(&spec::<f32>(), 3).unwrap();
    let lam = ShrinkageParam::new(0.1).unwrap();
    let m64 = fit(&d64, LabelingMode::JointCropStage, DiscriminantKind::Qda, lam, PriorMode::Uniform).unwrap();
    let m32 = fit(&d32, LabelingMode::JointCropStage, DiscriminantKind::Qda, lam, PriorMode::Uniform).unwrap();
    let mut agree = 0;
    for (a, b) in d64.records().iter().zip(d32.records()) {
        let (c64, p64) = m64.predict_mmp(&a.spectrum).unwrap();
        let (c32, p32) = m32.predict_mmp(&b.spectrum).unwrap();
        let s: f32 = p32.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
        if c64 == c32 && (p64[c64.index()] - p32[c32.index()] as f64).abs() < 1e-3 {
            agree += 1;
        }
    }
    assert!(agree >= d64.len() - 1, "{agree} of {}", d64.len());

    let folds = stratified_kfold(&d32, 5, 1).unwrap();
    let alg = Algorithm::discriminant(DiscriminantKind::Lda, DecisionRule::Mjp, 0.0).unwrap();
    assert_eq!(run_cv(&d32, &alg, &folds).unwrap().mean, 1.0);
}
