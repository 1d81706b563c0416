use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::ActiveError;
use crate::dataset::{Dataset, SampleId};

/// Source of class labels for queried samples.
pub trait Oracle {
    fn answer(&mut self, ids: &[SampleId]) -> Result<Vec<usize>, ActiveError>;
}

/// Answers from the ground truth stored in a dataset.
pub struct SimulatedOracle<'a> {
    dataset: &'a Dataset,
}

impl<'a> SimulatedOracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        SimulatedOracle { dataset }
    }
}

impl Oracle for SimulatedOracle<'_> {
    fn answer(&mut self, ids: &[SampleId]) -> Result<Vec<usize>, ActiveError> {
        ids.iter()
            .map(|&id| {
                self.dataset
                    .samples
                    .get(id)
                    .ok_or_else(|| ActiveError::Oracle(format!("unknown sample {id}")))?
                    .label
                    .ok_or(ActiveError::MissingLabel(id))
            })
            .collect()
    }
}

/// Forwards queries over a channel and blocks until the other side replies.
pub struct ChannelOracle {
    queries: Sender<Vec<SampleId>>,
    answers: Receiver<Vec<usize>>,
    timeout: Duration,
}

impl ChannelOracle {
    pub fn new(queries: Sender<Vec<SampleId>>, answers: Receiver<Vec<usize>>, timeout: Duration) -> Self {
        ChannelOracle { queries, answers, timeout }
    }
}

impl Oracle for ChannelOracle {
    fn answer(&mut self, ids: &[SampleId]) -> Result<Vec<usize>, ActiveError> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        self.queries
            .send(ids.to_vec())
            .map_err(|_| ActiveError::Oracle("labeler disconnected".into()))?;
        let labels = self.answers.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => ActiveError::Oracle("timed out waiting for labels".into()),
            RecvTimeoutError::Disconnected => ActiveError::Oracle("labeler disconnected".into()),
        })?;
        if labels.len() != ids.len() {
            return Err(ActiveError::Oracle(format!("{} labels for {} queries", labels.len(), ids.len())));
        }
        Ok(labels)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::mpsc::channel;

    use super::*;
    use crate::dataset::synthetic::two_moons;

    #[test]
    fn simulated_returns_stored_labels() {
        let d = two_moons(20, 0.1, 1);
        let mut o = SimulatedOracle::new(&d);
        assert_eq!(o.answer(&[3, 7]).unwrap(), vec![d.samples[3].label.unwrap(), d.samples[7].label.unwrap()]);
        assert!(o.answer(&[]).unwrap().is_empty());
        assert!(o.answer(&[999]).is_err());
    }

    #[test]
    fn channel_round_trip_and_timeout() {
        let (qtx, qrx) = channel();
        let (atx, arx) = channel();
        let labeler = std::thread::spawn(move || {
            let ids: Vec<usize> = qrx.recv().unwrap();
            atx.send(ids.iter().map(|i| i % 2).collect()).unwrap();
        });
        let mut o = ChannelOracle::new(qtx, arx, Duration::from_secs(5));
        assert_eq!(o.answer(&[4, 5]).unwrap(), vec![0, 1]);
        labeler.join().unwrap();
        assert!(o.answer(&[1]).is_err());
    }
}
