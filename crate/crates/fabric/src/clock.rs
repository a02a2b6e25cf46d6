use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::sync::Mutex;
use std::time::Instant;

/// Seconds since the clock's origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;

    /// The simulated clock behind this one, if any. Waiters drive a
    /// simulated clock forward instead of sleeping.
    fn simulated(&self) -> Option<&SimClock> {
        None
    }
}

#[derive(Debug)]
pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock { origin: Instant::now() }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

type Action = Box<dyn FnOnce(&SimClock) + Send>;

struct Event {
    at: f64,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // min-heap on (time, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct SimState {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Event>,
}

/// Discrete-event clock. Time only moves when someone calls
/// [`SimClock::step`]; scheduled actions run in time order.
#[derive(Default)]
pub struct SimClock {
    state: Mutex<SimState>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&self, at: f64, action: impl FnOnce(&SimClock) + Send + 'static) {
        let mut s = self.state.lock().expect("sim clock poisoned");
        let at = at.max(s.now);
        let seq = s.seq;
        s.seq += 1;
        s.queue.push(Event {
            at,
            seq,
            action: Box::new(action),
        });
    }

    /// Runs the next event due at or before `limit`, or jumps to a finite
    /// `limit` if there is none. Returns whether an event ran.
    pub fn step(&self, limit: f64) -> bool {
        let event = {
            let mut s = self.state.lock().expect("sim clock poisoned");
            match s.queue.peek() {
                Some(e) if e.at <= limit => {
                    let e = s.queue.pop().expect("peeked");
                    s.now = s.now.max(e.at);
                    Some(e)
                }
                _ => {
                    if limit.is_finite() {
                        s.now = s.now.max(limit);
                    }
                    None
                }
            }
        };
        match event {
            Some(e) => {
                (e.action)(self);
                true
            }
            None => false,
        }
    }

    pub fn pending_events(&self) -> usize {
        self.state.lock().expect("sim clock poisoned").queue.len()
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.state.lock().expect("sim clock poisoned").now
    }

    fn simulated(&self) -> Option<&SimClock> {
        Some(self)
    }
}
