//! Processing jobs started through the service; at most one is active.

use std::collections::BTreeMap;

use pxst::pipeline::Summary;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Queued,
    Running,
    Done,
    Failed,
}

impl Status {
    fn can_become(self, next: Status) -> bool {
        matches!(
            (self, next),
            (Status::Queued, Status::Running) | (Status::Running, Status::Done) | (Status::Running, Status::Failed)
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JobSummary {
    pub total_error: Option<f64>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub text: String,
}

impl From<&Summary> for JobSummary {
    fn from(s: &Summary) -> Self {
        Self { total_error: s.total_error, outputs: s.outputs.clone(), notes: s.notes.clone(), text: s.to_string() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: u64,
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub status: Status,
    pub progress: f64,
    /// Total error per completed iteration, filled while the job runs.
    pub history: Vec<f64>,
    pub summary: Option<JobSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Default)]
pub struct Jobs {
    next: u64,
    jobs: BTreeMap<u64, Job>,
    active: Option<u64>,
}

impl Jobs {
    pub fn get(&self, id: u64) -> Option<&Job> {
        self.jobs.get(&id)
    }

    pub fn all(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values()
    }

    /// The queued or running job, if any.
    pub fn active(&self) -> Option<u64> {
        self.active
    }

    /// Queues a job unless one is already active.
    pub fn submit(&mut self, command: &str, params: BTreeMap<String, String>) -> Result<u64, u64> {
        if let Some(id) = self.active {
            return Err(id);
        }
        self.next += 1;
        let id = self.next;
        let job = Job {
            id,
            command: command.to_string(),
            params,
            status: Status::Queued,
            progress: 0.0,
            history: Vec::new(),
            summary: None,
            error: None,
        };
        self.jobs.insert(id, job);
        self.active = Some(id);
        Ok(id)
    }

    fn advance(&mut self, id: u64, next: Status) -> &mut Job {
        let job = self.jobs.get_mut(&id).expect("known job");
        assert!(job.status.can_become(next), "job {id}: {:?} -> {next:?}", job.status);
        job.status = next;
        job
    }

    pub fn start(&mut self, id: u64) {
        self.advance(id, Status::Running);
    }

    pub fn progress(&mut self, id: u64, fraction: f64, total_error: Option<f64>) {
        if let Some(job) = self.jobs.get_mut(&id) {
            job.progress = fraction.clamp(0.0, 1.0);
            job.history.extend(total_error);
        }
    }

    pub fn finish(&mut self, id: u64, result: Result<&Summary, String>) {
        let job = match result {
            Ok(s) => {
                let job = self.advance(id, Status::Done);
                job.progress = 1.0;
                if !s.history.is_empty() {
                    job.history = s.history.clone();
                }
                job.summary = Some(s.into());
                job
            }
            Err(e) => {
                let job = self.advance(id, Status::Failed);
                job.error = Some(e);
                job
            }
        };
        log::info!("job {} ({}) {:?}", job.id, job.command, job.status);
        if self.active == Some(id) {
            self.active = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_active_job() {
        let mut j = Jobs::default();
        let a = j.submit("calc_error", BTreeMap::new()).unwrap();
        assert_eq!(j.submit("run", BTreeMap::new()), Err(a));
        j.start(a);
        j.finish(a, Err("boom".into()));
        assert_eq!(j.get(a).unwrap().status, Status::Failed);
        let b = j.submit("run", BTreeMap::new()).unwrap();
        assert_ne!(a, b);
        assert_eq!(j.active(), Some(b));
    }

    #[test]
    #[should_panic]
    fn finished_jobs_stay_finished() {
        let mut j = Jobs::default();
        let a = j.submit("calc_error", BTreeMap::new()).unwrap();
        j.start(a);
        j.finish(a, Ok(&Summary::default()));
        j.start(a);
    }

    #[test]
    fn progress_is_recorded() {
        let mut j = Jobs::default();
        let a = j.submit("run", BTreeMap::new()).unwrap();
        j.start(a);
        j.progress(a, 0.5, Some(3.0));
        j.progress(a, 2.0, None);
        let job = j.get(a).unwrap();
        assert_eq!((job.progress, job.history.clone()), (1.0, vec![3.0]));
    }
}
