//! EFV1 feature files, CSV import, stratified splits and standardization.

use blindtune::ingest::{gen_blobs, prepare, stratified_split, FeatureFile, SplitSpec, HEADER_LEN};

fn main() -> blindtune::Result<()> {
    let blobs = gen_blobs(4, 6, 400, 17)?;
    let bytes = blobs.to_bytes();
    println!(
        "EFV1: {} rows x {} features, {} classes, {} bytes ({} header)",
        blobs.rows(),
        blobs.dim(),
        blobs.classes,
        bytes.len(),
        HEADER_LEN
    );
    assert_eq!(FeatureFile::from_bytes(&bytes)?, blobs);

    let mut damaged = bytes.clone();
    damaged[9] ^= 0x01;
    println!("damaged header: {}", FeatureFile::from_bytes(&damaged).unwrap_err());

    let csv = "# label,f1,f2,f3\n0,0.1,0.2,0.3\n1,1.5,-0.5,2.0\n2,3.0,3.1,-1.0\n";
    let from_csv = FeatureFile::from_csv(csv, None)?;
    println!("CSV import: {} rows, {} classes", from_csv.rows(), from_csv.classes);

    let labels = blobs.labels_usize();
    let split = stratified_split(&labels, SplitSpec::default(), 1);
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let counts: Vec<usize> = (0..4).map(|c| part.iter().filter(|&&i| labels[i] == c).count()).collect();
        println!("{name:>5}: {:>3} rows, per class {counts:?}", part.len());
    }

    let prepared = prepare(&blobs, SplitSpec::default(), 1)?;
    let norms: Vec<f64> = prepared.train.0.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    println!(
        "standardized train: {} columns (bias last), largest row norm {:.3}",
        prepared.train.0.ncols(),
        norms.iter().cloned().fold(0.0, f64::max)
    );
    println!("statistics sidecar:\n{}", prepared.stats.to_json());
    Ok(())
}
