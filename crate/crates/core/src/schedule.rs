use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    WarmupCosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(ScheduleKind::Constant),
            "warmup_cosine" | "warmup-cosine" => Ok(ScheduleKind::WarmupCosine),
            other => Err(format!("unknown schedule `{other}`")),
        }
    }
}

/// Learning-rate schedule over `total_steps` optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    /// Linear warmup to `peak_lr`, then half-cosine decay to zero at
    /// `total_steps`. Constant schedules ignore the step.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.peak_lr,
            ScheduleKind::WarmupCosine => {
                let step = step.min(self.total_steps);
                if self.warmup_steps > 0 && step <= self.warmup_steps {
                    return self.peak_lr * step as f64 / self.warmup_steps as f64;
                }
                let decay = self.total_steps - self.warmup_steps;
                if decay == 0 {
                    return self.peak_lr;
                }
                let progress = (step - self.warmup_steps) as f64 / decay as f64;
                self.peak_lr * 0.5 * (1.0 + libm::cos(std::f64::consts::PI * progress))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_schedule() -> LrSchedule {
        LrSchedule {
            kind: ScheduleKind::WarmupCosine,
            peak_lr: 2e-4,
            warmup_steps: 1000,
            total_steps: 10_000,
        }
    }

    #[test]
    fn warmup_midpoint_and_boundaries() {
        let s = sample_schedule();
        assert!((s.lr_at(500) - 1e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(1000), 2e-4);
        assert!(s.lr_at(10_000).abs() < 1e-20);
        assert_eq!(s.lr_at(0), 0.0);
    }

    #[test]
    fn constant_ignores_step() {
        let s = LrSchedule {
            kind: ScheduleKind::Constant,
            ..sample_schedule()
        };
        assert_eq!(s.lr_at(0), 2e-4);
        assert_eq!(s.lr_at(7777), 2e-4);
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let s = LrSchedule {
            warmup_steps: 0,
            ..sample_schedule()
        };
        assert_eq!(s.lr_at(0), 2e-4);
    }

    proptest! {
        #[test]
        fn monotone_pieces(total in 1usize..3000, warm_frac in 0.0f64..1.0) {
            let warm = ((total as f64) * warm_frac) as usize;
            let s = LrSchedule { kind: ScheduleKind::WarmupCosine, peak_lr: 1e-3, warmup_steps: warm, total_steps: total };
            for t in 1..=warm {
                prop_assert!(s.lr_at(t) >= s.lr_at(t - 1));
            }
            for t in warm.max(1)..total {
                prop_assert!(s.lr_at(t + 1) <= s.lr_at(t));
            }
        }
    }
}
