use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use weatherseg::eval::{correctness_flags, Correctness};
use weatherseg::ply::{color_of, export_ply, format_g6};
use weatherseg::pointcloud::{generate_scene, SceneSpec};
use weatherseg::LabelArray;

#[test]
fn generic_reader_sees_vertices_and_colors() {
    let (cloud, labels) = generate_scene(&SceneSpec::default().with_seed(11)).unwrap();
    let n = cloud.len();
    // Deterministic mix of correct, wrong and ignored points.
    let preds: Vec<u16> = (0..n)
        .map(|i| {
            if i % 7 == 0 {
                (labels.semantic[i] + 1) % 5
            } else {
                labels.semantic[i]
            }
        })
        .collect();
    let mut semantic = labels.semantic.clone();
    for s in semantic.iter_mut().step_by(11) {
        *s = 255;
    }
    let labels = LabelArray::new(semantic, 255);
    let flags = correctness_flags(&preds, &labels);
    let bytes = export_ply(&cloud, &flags);

    let ply = Parser::<DefaultElement>::new().read_ply(&mut bytes.as_slice()).unwrap();
    let verts = &ply.payload["vertex"];
    assert_eq!(verts.len(), n);

    let mut counts = [0usize; 3];
    for (i, v) in verts.iter().enumerate() {
        let rgb = ["red", "green", "blue"].map(|k| match v[k] {
            Property::UChar(c) => c,
            ref other => panic!("unexpected {other:?}"),
        });
        assert_eq!(rgb, color_of(flags[i]), "vertex {i}");
        let slot = match flags[i] {
            Correctness::Correct => 0,
            Correctness::Incorrect => 1,
            Correctness::Ignored => 2,
        };
        counts[slot] += 1;
        match v["x"] {
            Property::Float(x) => {
                let want: f64 = format_g6(cloud.x()[i]).parse().unwrap();
                assert_eq!(x, want as f32);
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }
    let expected = [Correctness::Correct, Correctness::Incorrect, Correctness::Ignored]
        .map(|c| flags.iter().filter(|&&f| f == c).count());
    assert_eq!(counts, expected);
    assert!(counts.iter().all(|&c| c > 0));
}

#[test]
fn empty_cloud_parses() {
    let bytes = export_ply(&weatherseg::PointCloud::new(), &[]);
    let ply = Parser::<DefaultElement>::new().read_ply(&mut bytes.as_slice()).unwrap();
    assert!(ply.payload.get("vertex").is_none_or(|v| v.is_empty()));
    assert_eq!(ply.header.elements["vertex"].count, 0);
}
