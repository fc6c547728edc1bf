use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Size-weighted mean of the batch losses, dropout active.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
    /// Largest global gradient norm before clipping.
    pub max_grad_norm: f64,
    /// Largest global gradient norm actually applied.
    pub max_applied_grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 if none was recorded.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.checked_sub(1).and_then(|i| self.epochs.get(i))
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }

    /// `epoch,train_loss,val_loss,seconds`; an empty `val_loss` cell means no
    /// validation split.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
        w.write_record(["epoch", "train_loss", "val_loss", "seconds"]).map_err(to_io)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.6}", e.seconds),
            ])
            .map_err(to_io)?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let h = TrainingHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: None,
                seconds: 0.25,
                max_grad_norm: 1.0,
                max_applied_grad_norm: 1.0,
            }],
            best_epoch: 1,
            stopped_early: false,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss,seconds\n1,0.5,,0.250000\n");
        assert_eq!(h.best().unwrap().epoch, 1);
    }
}
