use std::fs;

use mafl_core::data::bundle::sha256_hex;
use mafl_core::data::{read_bundle, write_bundle, EmbeddingBundle, SampleLabel};
use mafl_core::{MaflError, Matrix};
use proptest::prelude::*;

/// Writes the three bundle files by hand, independently of `write_bundle`.
fn write_by_hand(dir: &std::path::Path, rows: &[Vec<f32>], labels: &[(u8, i32, u32, &str)]) {
    let mut bin = Vec::new();
    for r in rows {
        for v in r {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut csv = String::from("index,authenticity,generator_id,content_id,source_name\n");
    for (i, (a, g, c, s)) in labels.iter().enumerate() {
        csv.push_str(&format!("{i},{a},{g},{c},{s}\n"));
    }
    let manifest = format!(
        "{{\"version\":1,\"dim\":{},\"count\":{},\"dtype\":\"f32le\",\"data\":\"embeddings.bin\",\"labels\":\"labels.csv\",\"sha256\":\"{}\"}}\n",
        rows[0].len(),
        rows.len(),
        sha256_hex(&bin)
    );
    fs::write(dir.join("embeddings.bin"), &bin).unwrap();
    fs::write(dir.join("labels.csv"), csv).unwrap();
    fs::write(dir.join("bundle.json"), manifest).unwrap();
}

#[test]
fn externally_written_bundle_is_read_and_rewritten_byte_for_byte() {
    let src = tempfile::tempdir().unwrap();
    let rows = vec![vec![0.25, -1.0, 3.5, 0.0], vec![1e-3, 2.0, -0.5, 7.0], vec![0.0, 0.0, 1.0, -2.0]];
    let labels = [(0, -1, 0, "camera_a"), (1, 0, 1, "sd_v1.4"), (1, 1, 0, "midjourney")];
    write_by_hand(src.path(), &rows, &labels);

    let b = read_bundle(src.path()).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b.dim(), 4);
    assert_eq!(b.matrix.row(1), &rows[1][..]);
    assert_eq!(b.labels[2].source_name, "midjourney");
    assert_eq!(b.generator_count(), 2);

    let out = tempfile::tempdir().unwrap();
    write_bundle(&b, out.path()).unwrap();
    for f in ["bundle.json", "labels.csv", "embeddings.bin"] {
        assert_eq!(fs::read(src.path().join(f)).unwrap(), fs::read(out.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_manifest_is_io_error_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = read_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, MaflError::Io { .. }));
    assert!(err.to_string().contains("bundle.json"));
}

fn bundle_strategy() -> impl Strategy<Value = EmbeddingBundle> {
    (1usize..12, 1usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-1e6f32..1e6, n * d),
            prop::collection::vec((any::<bool>(), 0i32..5, 0u32..4), n),
        )
            .prop_map(move |(data, labs)| {
                let labels = labs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (fake, g, c))| SampleLabel {
                        index: i,
                        authenticity: fake as u8,
                        generator_id: if fake { g } else { -1 },
                        content_id: c,
                        source_name: if fake { format!("gen,{g}") } else { "real \"x\"".into() },
                    })
                    .collect();
                EmbeddingBundle::new(Matrix::new(n, d, data).unwrap(), labels).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_exact_and_bit_flips_are_caught(b in bundle_strategy(), bit in 0usize..4096) {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&b, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        prop_assert_eq!(&back, &b);

        let path = dir.path().join("embeddings.bin");
        let mut bytes = fs::read(&path).unwrap();
        let bit = bit % (bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        fs::write(&path, bytes).unwrap();
        let is_checksum = matches!(read_bundle(dir.path()), Err(MaflError::Checksum { .. }));
        prop_assert!(is_checksum);
    }
}
