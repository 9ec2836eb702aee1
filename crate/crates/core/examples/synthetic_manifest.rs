// Generate a planted-rule dataset, write it as JSONL and read it back.

use memefier::dataset::{generate_synthetic, planted_label, read_manifest, write_manifest, Split};

pub fn run_example() -> memefier::Result<()> {
    let manifest = generate_synthetic(100, 8, 2, 2, 7)?;
    let dir = std::env::temp_dir().join(format!("memefier-synth-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| memefier::Error::Input(e.to_string()))?;
    let path = dir.join("manifest.jsonl");
    write_manifest(&manifest, &path)?;
    let back = read_manifest(&path)?;
    assert_eq!(back, manifest);
    let _ = std::fs::remove_dir_all(&dir);

    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split}: {} samples", manifest.split(split).len());
    }
    let positives = manifest.samples.iter().filter(|s| planted_label(s) == 1).count();
    println!("planted positives: {positives}, fingerprint {}", &manifest.fingerprint()[..12]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> memefier::Result<()> {
    run_example()
}
