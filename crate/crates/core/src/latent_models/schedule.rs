use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cyclical,
    Annealed,
}

/// Epoch → KL weight. Only the fields belonging to `kind` are read.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub kind: ScheduleKind,
    pub constant_value: f64,
    pub cycle_peak: f64,
    pub cycle_epochs: usize,
    pub anneal_start: f64,
    pub anneal_epochs: usize,
}

impl BetaSchedule {
    const BASE: BetaSchedule = BetaSchedule {
        kind: ScheduleKind::Constant,
        constant_value: 0.0,
        cycle_peak: 5.0,
        cycle_epochs: 20,
        anneal_start: 10.0,
        anneal_epochs: 50,
    };

    pub fn constant(beta: f64) -> Self {
        Self { constant_value: beta, ..Self::BASE }
    }

    /// Triangle wave 0 → 5 → 0 every 20 epochs.
    pub fn cyclical() -> Self {
        Self { kind: ScheduleKind::Cyclical, ..Self::BASE }
    }

    /// Linear 10 → 0 over 50 epochs, then 0.
    pub fn annealed() -> Self {
        Self { kind: ScheduleKind::Annealed, ..Self::BASE }
    }

    /// β is zero at every epoch.
    pub fn is_zero(&self) -> bool {
        match self.kind {
            ScheduleKind::Constant => self.constant_value == 0.0,
            ScheduleKind::Cyclical => self.cycle_peak == 0.0,
            ScheduleKind::Annealed => self.anneal_start == 0.0,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("constant_value", self.constant_value),
            ("cycle_peak", self.cycle_peak),
            ("anneal_start", self.anneal_start),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("schedule {name} must be finite and >= 0, got {v}"));
            }
        }
        if self.cycle_epochs < 1 {
            out.push("schedule cycle_epochs must be >= 1".into());
        }
        if self.anneal_epochs < 1 {
            out.push("schedule anneal_epochs must be >= 1".into());
        }
        out
    }
}

pub fn beta_at(schedule: &BetaSchedule, epoch: usize) -> f64 {
    match schedule.kind {
        ScheduleKind::Constant => schedule.constant_value,
        ScheduleKind::Cyclical => {
            let period = schedule.cycle_epochs as f64;
            let half = period / 2.0;
            let phase = (epoch % schedule.cycle_epochs) as f64;
            let rise = if phase <= half { phase } else { period - phase };
            schedule.cycle_peak * rise / half
        }
        ScheduleKind::Annealed => {
            if epoch >= schedule.anneal_epochs {
                0.0
            } else {
                schedule.anneal_start * (schedule.anneal_epochs - epoch) as f64 / schedule.anneal_epochs as f64
            }
        }
    }
}
