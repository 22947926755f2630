/// Outcome of one early-stopping check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping on a higher-is-better validation metric.
/// Improvement means strictly greater than the best seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping<S> {
    patience: usize,
    best_metric: Option<f64>,
    best_epoch: usize,
    epochs_seen: usize,
    since_improvement: usize,
    best_snapshot: Option<S>,
}

impl<S> EarlyStopping<S> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_metric: None,
            best_epoch: 0,
            epochs_seen: 0,
            since_improvement: 0,
            best_snapshot: None,
        }
    }

    pub fn patience(&self) -> usize {
        self.patience
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best_metric
    }

    /// 1-based epoch that produced the best metric (0 before any epoch).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    pub fn best_snapshot(&self) -> Option<&S> {
        self.best_snapshot.as_ref()
    }

    pub fn into_best_snapshot(self) -> Option<S> {
        self.best_snapshot
    }

    /// Records one epoch. `snapshot` is only invoked when the metric improves.
    pub fn step<E>(
        &mut self,
        metric: f64,
        snapshot: impl FnOnce() -> Result<S, E>,
    ) -> Result<StopDecision, E> {
        self.epochs_seen += 1;
        let improved = self.best_metric.is_none_or(|best| metric > best);
        if improved {
            self.best_snapshot = Some(snapshot()?);
            self.best_metric = Some(metric);
            self.best_epoch = self.epochs_seen;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        Ok(if self.since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        })
    }
}
