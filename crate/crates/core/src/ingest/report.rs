use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Summary of a training run in the shape of a results table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub classes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub profile: String,
    pub enc_train_seconds: f64,
    pub enc_accuracy: Option<f64>,
    pub unenc_accuracy: Option<f64>,
    pub refreshes: usize,
}

fn pct(a: Option<f64>) -> String {
    a.map_or_else(|| "-".into(), |v| format!("{:.2}%", v * 100.0))
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>8} {:>22} {:>14} {:>16}",
            "Dataset", "#Classes", "#Epochs", "Enc training time", "Enc Accuracy", "Unenc accuracy"
        );
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>8} {:>17.4} mins {:>14} {:>16}",
            self.dataset,
            self.classes,
            self.epochs,
            self.enc_train_seconds / 60.0,
            pct(self.enc_accuracy),
            pct(self.unenc_accuracy)
        );
        let _ = writeln!(
            s,
            "profile={} lr={} batch={} refreshes={}",
            self.profile, self.learning_rate, self.batch_size, self.refreshes
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
