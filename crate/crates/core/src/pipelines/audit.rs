use std::cell::RefCell;

/// Which myocardium map was used to mask a scar-network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    GroundTruth,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    Predict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub sample: String,
    pub source: MaskSource,
    pub stage: Stage,
}

/// Records every myocardium map fed into a scar network input.
#[derive(Debug, Default)]
pub struct AccessLog {
    events: RefCell<Vec<Access>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, sample: &str, source: MaskSource, stage: Stage) {
        self.events.borrow_mut().push(Access {
            sample: sample.to_string(),
            source,
            stage,
        });
    }

    pub fn events(&self) -> Vec<Access> {
        self.events.borrow().clone()
    }

    pub fn count(&self, source: MaskSource, stage: Stage) -> usize {
        self.events
            .borrow()
            .iter()
            .filter(|a| a.source == source && a.stage == stage)
            .count()
    }
}
