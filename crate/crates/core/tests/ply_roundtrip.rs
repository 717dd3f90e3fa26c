use std::io::Cursor;
use std::path::Path;

use gsplit_core::ply::{load_model, read_header_info, read_model, save_model, write_model};
use gsplit_core::scene::random_model;
use gsplit_core::{Error, SplatModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs())
}

fn assert_models_close(a: &SplatModel, b: &SplatModel) {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.sh_degree, b.sh_degree);
    for (i, (x, y)) in a.gaussians.iter().zip(&b.gaussians).enumerate() {
        for k in 0..3 {
            assert!(close(x.position[k], y.position[k]), "splat {i} position");
            assert!(close(x.scales[k], y.scales[k]), "splat {i} scale");
        }
        assert!(close(x.opacity_mass, y.opacity_mass), "splat {i} mass");
        assert!(x.rotation.angle_to(&y.rotation) < 1e-6, "splat {i} rotation");
        for (s, t) in x.sh_coeffs.iter().zip(&y.sh_coeffs) {
            assert!(close(*s, *t), "splat {i} sh");
        }
    }
}

#[test]
fn fuzzed_corpus_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..100 {
        let count = rng.random_range(0..60);
        let degree = rng.random_range(0..=3u8);
        let m = random_model(&mut rng, count, degree);
        let path = dir.path().join(format!("m{case}.ply"));
        let stats = save_model(&m, &path).unwrap();
        assert_eq!(stats.clamped_opacities, 0);
        let once = load_model(&path).unwrap();
        assert_models_close(&m, &once);

        let again = dir.path().join(format!("m{case}b.ply"));
        save_model(&once, &again).unwrap();
        assert_models_close(&once, &load_model(&again).unwrap());

        let info = read_header_info(&path).unwrap();
        assert_eq!(info.vertex_count, count);
        assert_eq!(info.sh_degree(), Some(degree));
        assert!(info.binary_little_endian);
        assert!(once.gaussians.iter().all(|g| g.opacity_mass > 0.0));
    }
}

fn diagnostic(bytes: &[u8]) -> String {
    read_model(Cursor::new(bytes.to_vec()), Path::new("bad.ply"))
        .unwrap_err()
        .to_string()
}

#[test]
fn malformed_headers_are_explained() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut good = Vec::new();
    write_model(&random_model(&mut rng, 3, 1), &mut good).unwrap();
    let text = String::from_utf8_lossy(&good).into_owned();
    let header_end = text.find("end_header\n").unwrap();

    let edit = |from: &str, to: &str| {
        let mut h = text[..header_end].replacen(from, to, 1);
        h.push_str("end_header\n");
        let mut bytes = h.into_bytes();
        bytes.extend_from_slice(&good[header_end + "end_header\n".len()..]);
        bytes
    };
    let cases: Vec<(Vec<u8>, &str)> = vec![
        (edit("property float rot_3\n", ""), "rot_3"),
        (edit("property float opacity\n", ""), "opacity"),
        (edit("binary_little_endian", "binary_big_endian"), "binary_little_endian"),
        (edit("property float f_rest_0\n", ""), "f_rest"),
        (edit("property float x\n", "property list uchar int x\n"), "list"),
        (edit("property float y\n", "property quad y\n"), "quad"),
        (edit("element vertex 3", "element vertex many"), "count"),
        (edit("ply\n", "plz\n"), "magic"),
        (good[..header_end].to_vec(), "end_header"),
        (good[..good.len() - 4].to_vec(), "truncated"),
    ];
    for (bytes, needle) in cases {
        let msg = diagnostic(&bytes);
        assert!(msg.contains(needle), "expected `{needle}` in `{msg}`");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_model("/nonexistent/model.ply").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
