//! Background worker pool executing queued runs in FIFO order.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam::channel::{bounded, Sender, TrySendError};

use super::store::Store;
use crate::error::{Error, Result};
use crate::pipeline::execute_run;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

pub struct Executor {
    tx: Option<Sender<String>>,
    workers: Vec<JoinHandle<()>>,
}

/// Returned when the queue has no room for another run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueFull;

impl Executor {
    /// Starts `parallelism` workers sharing one queue of `capacity` runs.
    pub fn start(store: Arc<Store>, parallelism: usize, capacity: usize) -> Result<Executor> {
        if parallelism == 0 {
            return Err(Error::validation("parallelism", "must be >= 1"));
        }
        if capacity == 0 {
            return Err(Error::validation("queue_capacity", "must be >= 1"));
        }
        let (tx, rx) = bounded::<String>(capacity);
        let workers = (0..parallelism)
            .map(|n| {
                let rx = rx.clone();
                let store = Arc::clone(&store);
                std::thread::Builder::new()
                    .name(format!("run-worker-{n}"))
                    .spawn(move || {
                        for run_id in rx.iter() {
                            execute(&store, &run_id);
                        }
                    })
                    .map_err(|e| Error::Runtime(format!("cannot start worker: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Executor { tx: Some(tx), workers })
    }

    pub fn submit(&self, run_id: String) -> std::result::Result<(), QueueFull> {
        match self.tx.as_ref().expect("executor running").try_send(run_id) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => Err(QueueFull),
        }
    }

    /// Stops accepting runs, lets the workers drain the queue, and waits.
    pub fn shutdown(mut self) {
        self.tx.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string())
}

fn execute(store: &Store, run_id: &str) {
    let config = match store.start_run(run_id) {
        Ok(Some(c)) => c,
        Ok(None) => return,
        Err(e) => {
            let _ = store.fail_run(run_id, e.to_string());
            return;
        }
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| execute_run(&config)));
    let result = match outcome {
        Ok(Ok(a)) => store.finish_run(run_id, &a.log, &a.report),
        Ok(Err(e)) => store.fail_run(run_id, e.to_string()),
        Err(p) => store.fail_run(run_id, format!("run panicked: {}", panic_message(&*p))),
    };
    if let Err(e) = result {
        let _ = store.fail_run(run_id, e.to_string());
    }
}
