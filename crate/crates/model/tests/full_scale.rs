//! Full-resolution run on the MVTec AD bottle category. Not gating; needs the
//! dataset and ideally ImageNet ResNet18 weights:
//!
//! ```text
//! DSKD_MVTEC_ROOT=/data/mvtec DSKD_TEACHER=resnet18.safetensors \
//!     cargo test --release -p dskd-model --test full_scale -- --ignored --nocapture
//! ```

use std::path::PathBuf;

use dskd_core::data::{load_dataset, DatasetSpec, Split};
use dskd_model::backbone::TeacherSource;
use dskd_model::detector::Detector;
use dskd_model::eval::evaluate;
use dskd_model::{train, Device, DskdModel, ModelConfig, Teacher, TrainConfig, TrainOptions};

#[test]
#[ignore = "needs DSKD_MVTEC_ROOT and hours of CPU time"]
fn bottle_at_256() {
    let root = PathBuf::from(std::env::var("DSKD_MVTEC_ROOT").expect("DSKD_MVTEC_ROOT"));
    let source = match std::env::var("DSKD_TEACHER") {
        Ok(p) => TeacherSource::File { path: p.into() },
        Err(_) => TeacherSource::Random { seed: 0 },
    };
    let dev = Device::Cpu;
    let cfg = ModelConfig::new(256);
    let spec = |split| DatasetSpec {
        root: root.clone(),
        category: "bottle".into(),
        split,
        input_size: 256,
    };
    let train_images: Vec<_> = load_dataset(&spec(Split::Train)).unwrap().into_iter().map(|s| s.image).collect();
    let test = load_dataset(&spec(Split::Test)).unwrap();
    let teacher = Teacher::load(&cfg, &source, &dev).unwrap();
    let model = DskdModel::new(&cfg, Some(teacher), 0, &dev).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let out = train(model, &train_images, &tc, &TrainOptions::default(), &mut ()).unwrap();
    let detector = Detector::new(out.model, out.calibration, tc.lambda);
    let m = evaluate(&detector, "bottle", &test).unwrap().metrics;
    println!("{}", m.to_csv_line());
    assert!(m.image_auroc.unwrap() >= 0.98, "image AUROC {:?}", m.image_auroc);
    assert!(m.pixel_auroc.unwrap() >= 0.97, "pixel AUROC {:?}", m.pixel_auroc);
}
