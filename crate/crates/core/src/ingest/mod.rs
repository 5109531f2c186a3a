//! Feature files, dataset splitting, preprocessing and run reports.

mod blobs;
mod efv;
mod report;
mod split;
mod standardize;

pub use blobs::{gen_blobs, CENTROID_DISTANCE};
pub use efv::{FeatureFile, HEADER_LEN};
pub use report::RunReport;
pub use split::{stratified_split, Split, SplitSpec};
pub use standardize::{Standardizer, MAX_ROW_NORM};

use ndarray::{Array2, Axis};

/// Standardized, bias-augmented parts of a feature file.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub stats: Standardizer,
    pub train: (Array2<f64>, Vec<usize>),
    pub val: (Array2<f64>, Vec<usize>),
    pub test: (Array2<f64>, Vec<usize>),
}

/// Splits `file`, fits statistics on the training part and transforms all parts.
pub fn prepare(file: &FeatureFile, spec: SplitSpec, seed: u64) -> crate::Result<PreparedData> {
    let x = file.features_f64();
    let labels = file.labels_usize();
    let split = stratified_split(&labels, spec, seed);
    let take = |idx: &[usize]| (x.select(Axis(0), idx), idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let (tr_x, tr_y) = take(&split.train);
    let stats = Standardizer::fit(&tr_x)?;
    let part = |idx: &[usize]| -> crate::Result<(Array2<f64>, Vec<usize>)> {
        let (px, py) = take(idx);
        if px.nrows() == 0 {
            return Ok((Array2::zeros((0, x.ncols() + 1)), py));
        }
        Ok((stats.transform(&px)?, py))
    };
    Ok(PreparedData {
        train: (stats.transform(&tr_x)?, tr_y),
        val: part(&split.val)?,
        test: part(&split.test)?,
        stats,
    })
}
