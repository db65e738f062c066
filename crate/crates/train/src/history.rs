use std::io::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    pub epoch: usize,
    /// LAS bucket of the real batch; `None` under random sampling.
    pub bucket: Option<usize>,
    pub loss_d: f64,
    /// Total generator objective.
    pub loss_g: f64,
    pub loss_adv: f64,
    pub loss_intra: f64,
    pub loss_inter: f64,
    pub tau: f64,
    /// Discriminator probabilities that hit the clamp this update.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<UpdateRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Temperature after the last annealing step.
    pub final_tau: f64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean total generator loss of each epoch, in epoch order.
    pub fn epoch_generator_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss_g;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn clamp_events(&self) -> usize {
        self.records.iter().map(|r| r.clamped).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "update,epoch,bucket,loss_d,loss_g,loss_adv,loss_intra,loss_inter,tau,clamped")?;
        for r in &self.records {
            let bucket = r.bucket.map_or("RS".to_string(), |b| b.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.update, r.epoch, bucket, r.loss_d, r.loss_g, r.loss_adv, r.loss_intra, r.loss_inter, r.tau, r.clamped
            )?;
        }
        Ok(())
    }
}
