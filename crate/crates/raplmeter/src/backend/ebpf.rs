//! The kernel-sampler protocol: clock-triggered records drained in batches.
//!
//! In this mechanism the counters are not read by the polling loop at all.
//! A sampler attached to a CPU clock event fires at a fixed kernel rate
//! (1000 Hz by default), reads every registered domain through perf-events
//! descriptors opened beforehand, and appends one record to a shared
//! buffer. The user-space side periodically drains the buffer. Old kernels
//! cannot verify loops in injected code, so the record-building path is
//! dispatched on the number of registered domains, which bounds that number
//! at [`MAX_DOMAINS`].
//!
//! Injecting the real kernel program requires `CAP_BPF` and `CAP_PERFMON`
//! and a toolchain for the in-kernel object, so it is gated off here; the
//! whole protocol (buffer, overwrite accounting, dispatch, drain) runs
//! against any [`RecordProducer`], and the simulated producer in the sim
//! module implements the same record layout from a power profile.

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::backend::{Backend, CounterMeta, RawReading};
use crate::domain::{DomainId, MechanismKind};
use crate::error::{Error, Result};

/// Upper bound on the number of domains a session can register, set by the
/// size of the dispatch table.
pub const MAX_DOMAINS: usize = 8;

/// Default kernel-side sampling rate.
pub const DEFAULT_KERNEL_RATE_HZ: u32 = 1000;

/// One record appended by the producer: a timestamp and one raw counter
/// value per registered domain, in registration order. The length of
/// `values` is constant for the whole session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub timestamp_ns: u64,
    pub values: Vec<u64>,
}

/// Builds a record's value array through the per-count dispatch table, the
/// same shape the loop-free kernel code uses: one unrolled arm per
/// supported domain count.
pub fn dispatch_fill(count: usize, read: impl Fn(usize) -> u64) -> Vec<u64> {
    match count {
        1 => vec![read(0)],
        2 => vec![read(0), read(1)],
        3 => vec![read(0), read(1), read(2)],
        4 => vec![read(0), read(1), read(2), read(3)],
        5 => vec![read(0), read(1), read(2), read(3), read(4)],
        6 => vec![read(0), read(1), read(2), read(3), read(4), read(5)],
        7 => vec![
            read(0),
            read(1),
            read(2),
            read(3),
            read(4),
            read(5),
            read(6),
        ],
        8 => vec![
            read(0),
            read(1),
            read(2),
            read(3),
            read(4),
            read(5),
            read(6),
            read(7),
        ],
        n => panic!("domain count {n} outside the dispatch table (1..={MAX_DOMAINS})"),
    }
}

/// Bounded record buffer between producer and consumer. When full, the
/// producer overwrites the oldest unread record and the drop counter
/// advances atomically with the overwrite.
pub struct RingBuffer {
    inner: Mutex<RingInner>,
}

struct RingInner {
    records: VecDeque<SampleRecord>,
    capacity: usize,
    dropped: u64,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> RingBuffer {
        assert!(capacity >= 1, "ring buffer needs a capacity");
        RingBuffer {
            inner: Mutex::new(RingInner {
                records: VecDeque::with_capacity(capacity),
                capacity,
                dropped: 0,
            }),
        }
    }

    pub fn push_overwrite(&self, record: SampleRecord) {
        let mut inner = self.inner.lock().unwrap();
        if inner.records.len() == inner.capacity {
            inner.records.pop_front();
            inner.dropped += 1;
        }
        inner.records.push_back(record);
    }

    pub fn drain_all(&self) -> Vec<SampleRecord> {
        let mut inner = self.inner.lock().unwrap();
        inner.records.drain(..).collect()
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().unwrap().dropped
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The producing side of the protocol. The real producer is the in-kernel
/// program; simulations implement this by computing records from a profile.
pub trait RecordProducer: Send {
    /// Appends every record due up to `now_ns` into the ring.
    fn pump(&mut self, now_ns: u64, ring: &RingBuffer) -> Result<()>;

    /// True while the producer is able to make progress.
    fn alive(&self) -> bool {
        true
    }
}

/// Which producer to attach to a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProducerKind {
    /// The in-kernel clock-triggered program. Gated off in this build;
    /// requires CAP_BPF and CAP_PERFMON on hosts that support it.
    Kernel,
    /// A user-space producer implementing the same protocol.
    Simulated,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub domains: Vec<DomainId>,
    pub kernel_rate_hz: u32,
    /// Expected drain rate, used to size the default buffer.
    pub drain_rate_hz: f64,
    /// Explicit capacity; defaults to 4x kernel_rate/drain_rate (the no-loss
    /// floor is 2x, the rest absorbs drain jitter).
    pub buffer_capacity: Option<usize>,
}

impl SamplerConfig {
    pub fn new(domains: Vec<DomainId>, kernel_rate_hz: u32, drain_rate_hz: f64) -> SamplerConfig {
        SamplerConfig {
            domains,
            kernel_rate_hz,
            drain_rate_hz,
            buffer_capacity: None,
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.domains.is_empty() {
            return Err(Error::usage("the sampler needs at least one domain"));
        }
        if self.domains.len() > MAX_DOMAINS {
            return Err(Error::usage(format!(
                "{} domains registered, the dispatch table supports at most {MAX_DOMAINS}",
                self.domains.len()
            )));
        }
        if self.kernel_rate_hz == 0 {
            return Err(Error::usage("kernel rate must be positive"));
        }
        if !self.drain_rate_hz.is_finite() || self.drain_rate_hz <= 0.0 {
            return Err(Error::usage("drain rate must be positive"));
        }
        let capacity = self.buffer_capacity.unwrap_or_else(|| {
            (4.0 * self.kernel_rate_hz as f64 / self.drain_rate_hz).ceil() as usize
        });
        Ok(capacity.max(1))
    }
}

/// A running sampler: producer, buffer, and the registered domain order.
pub struct SamplerSession {
    domain_order: Vec<DomainId>,
    kernel_rate_hz: u32,
    buffer_capacity: usize,
    ring: RingBuffer,
    producer: Box<dyn RecordProducer>,
}

impl SamplerSession {
    /// Starts a session with the given producer kind. The kernel producer
    /// is not available in this build and reports itself as such, so
    /// callers can fall back to [`ProducerKind::Simulated`] or to the
    /// user-space perf mechanism. Simulated sessions are started through
    /// [`SamplerSession::start_with_producer`] with a concrete producer.
    pub fn start(config: SamplerConfig, producer_kind: ProducerKind) -> Result<SamplerSession> {
        config.validate()?;
        match producer_kind {
            ProducerKind::Kernel => Err(Error::UnsupportedMechanism(
                "the in-kernel sampler is not built on this platform (it needs CAP_BPF, \
                 CAP_PERFMON and a kernel object); use the simulated producer or the \
                 user-space perf mechanism"
                    .to_string(),
            )),
            ProducerKind::Simulated => Err(Error::usage(
                "simulated sessions carry their own producer; call start_with_producer",
            )),
        }
    }

    /// Starts a session around any producer implementing the protocol.
    pub fn start_with_producer(
        config: SamplerConfig,
        producer: Box<dyn RecordProducer>,
    ) -> Result<SamplerSession> {
        let capacity = config.validate()?;
        Ok(SamplerSession {
            domain_order: config.domains,
            kernel_rate_hz: config.kernel_rate_hz,
            buffer_capacity: capacity,
            ring: RingBuffer::new(capacity),
            producer,
        })
    }

    pub fn domain_order(&self) -> &[DomainId] {
        &self.domain_order
    }

    pub fn kernel_rate_hz(&self) -> u32 {
        self.kernel_rate_hz
    }

    pub fn buffer_capacity(&self) -> usize {
        self.buffer_capacity
    }

    /// Records overwritten before they could be drained.
    pub fn dropped(&self) -> u64 {
        self.ring.dropped()
    }

    /// Lets the producer catch up to `now_ns`, then empties the buffer.
    /// Records come back in timestamp order.
    pub fn drain(&mut self, now_ns: u64) -> Result<Vec<SampleRecord>> {
        if !self.producer.alive() {
            return Err(Error::SessionLost(
                "the sampler producer terminated".to_string(),
            ));
        }
        self.producer.pump(now_ns, &self.ring)?;
        Ok(self.ring.drain_all())
    }
}

/// Adapts a session to the polling engine: each poll drains the buffer and
/// flattens the records into per-domain readings.
pub struct EbpfBackend {
    session: SamplerSession,
    meta: Vec<CounterMeta>,
}

impl EbpfBackend {
    /// `units` and `wrap_constants` are per domain, in registration order.
    pub fn new(session: SamplerSession, units: &[f64], wrap_constants: &[u64]) -> EbpfBackend {
        assert_eq!(session.domain_order.len(), units.len());
        assert_eq!(session.domain_order.len(), wrap_constants.len());
        let meta = session
            .domain_order
            .iter()
            .zip(units.iter().zip(wrap_constants))
            .map(|(&domain, (&unit, &wrap))| CounterMeta {
                domain,
                mechanism: MechanismKind::PerfEbpf,
                unit_joules_per_lsb: unit,
                wrap_constant: wrap,
            })
            .collect();
        EbpfBackend { session, meta }
    }

    pub fn session(&self) -> &SamplerSession {
        &self.session
    }
}

impl Backend for EbpfBackend {
    fn mechanism(&self) -> MechanismKind {
        MechanismKind::PerfEbpf
    }

    fn counters(&self) -> &[CounterMeta] {
        &self.meta
    }

    fn poll(&mut self, now_ns: u64, out: &mut Vec<RawReading>) -> Result<()> {
        for record in self.session.drain(now_ns)? {
            for (i, &raw) in record.values.iter().enumerate() {
                out.push(RawReading::ok(i, record.timestamp_ns, raw));
            }
        }
        Ok(())
    }

    fn sample_rate_hint(&self, _poll_hz: f64) -> f64 {
        // records arrive at the kernel rate no matter how often we drain
        self.session.kernel_rate_hz() as f64 * self.meta.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainKind;

    fn pkg0() -> DomainId {
        DomainId::socketed(DomainKind::Package, 0)
    }

    /// Producer appending one record per millisecond with values equal to
    /// the tick index, for protocol-level tests.
    struct TickProducer {
        domains: usize,
        period_ns: u64,
        next_tick: u64,
        alive: bool,
    }

    impl RecordProducer for TickProducer {
        fn pump(&mut self, now_ns: u64, ring: &RingBuffer) -> Result<()> {
            while self.next_tick * self.period_ns <= now_ns {
                let tick = self.next_tick;
                ring.push_overwrite(SampleRecord {
                    timestamp_ns: tick * self.period_ns,
                    values: dispatch_fill(self.domains, |_| tick),
                });
                self.next_tick += 1;
            }
            Ok(())
        }

        fn alive(&self) -> bool {
            self.alive
        }
    }

    fn session_with(
        domains: Vec<DomainId>,
        capacity: usize,
        producer: TickProducer,
    ) -> SamplerSession {
        let mut config = SamplerConfig::new(domains, 1000, 10.0);
        config.buffer_capacity = Some(capacity);
        SamplerSession::start_with_producer(config, Box::new(producer)).unwrap()
    }

    fn tick_producer(domains: usize) -> TickProducer {
        TickProducer {
            domains,
            period_ns: 1_000_000,
            next_tick: 1,
            alive: true,
        }
    }

    #[test]
    fn empty_domain_set_is_a_usage_error() {
        let config = SamplerConfig::new(vec![], 1000, 10.0);
        assert!(matches!(
            SamplerSession::start_with_producer(config, Box::new(tick_producer(1))),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn more_than_eight_domains_is_a_usage_error() {
        let domains: Vec<DomainId> = (0..9)
            .map(|s| DomainId::socketed(DomainKind::Package, s))
            .collect();
        let config = SamplerConfig::new(domains, 1000, 10.0);
        assert!(matches!(
            SamplerSession::start_with_producer(config, Box::new(tick_producer(1))),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn kernel_producer_is_unsupported_here() {
        let config = SamplerConfig::new(vec![pkg0()], 1000, 10.0);
        assert!(matches!(
            SamplerSession::start(config, ProducerKind::Kernel),
            Err(Error::UnsupportedMechanism(_))
        ));
    }

    #[test]
    fn records_carry_one_value_per_domain() {
        let domains = vec![pkg0(), DomainId::socketed(DomainKind::Dram, 0)];
        let mut session = session_with(domains, 100, tick_producer(2));
        let records = session.drain(5_000_000).unwrap(); // 5 ms at 1 kHz
        assert_eq!(records.len(), 5);
        for r in &records {
            assert_eq!(r.values.len(), 2);
        }
    }

    #[test]
    fn drain_returns_everything_once_in_order() {
        let mut session = session_with(vec![pkg0()], 2000, tick_producer(1));
        let records = session.drain(1_000_000_000).unwrap(); // 1 s
        assert_eq!(records.len(), 1000);
        for pair in records.windows(2) {
            assert!(pair[0].timestamp_ns < pair[1].timestamp_ns);
        }
        // nothing new: empty drain
        assert!(session.drain(1_000_000_000).unwrap().is_empty());
        assert_eq!(session.dropped(), 0);
    }

    #[test]
    fn overwrite_drops_oldest_and_counts() {
        // capacity 10, 25 records appended before the first drain
        let mut session = session_with(vec![pkg0()], 10, tick_producer(1));
        let records = session.drain(25_000_000).unwrap();
        assert_eq!(records.len(), 10);
        assert_eq!(session.dropped(), 15);
        // the oldest surviving record is tick 16
        assert_eq!(records[0].values[0], 16);
    }

    #[test]
    fn dead_producer_is_session_lost() {
        let mut producer = tick_producer(1);
        producer.alive = false;
        let mut session = session_with(vec![pkg0()], 10, producer);
        assert!(matches!(
            session.drain(1_000_000),
            Err(Error::SessionLost(_))
        ));
    }

    #[test]
    fn default_capacity_is_four_times_the_rate_ratio() {
        let config = SamplerConfig::new(vec![pkg0()], 1000, 10.0);
        let session =
            SamplerSession::start_with_producer(config, Box::new(tick_producer(1))).unwrap();
        assert_eq!(session.buffer_capacity(), 400);
    }

    #[test]
    fn dispatch_covers_one_to_eight() {
        for n in 1..=MAX_DOMAINS {
            let values = dispatch_fill(n, |i| i as u64 * 10);
            assert_eq!(values.len(), n);
            for (i, v) in values.iter().enumerate() {
                assert_eq!(*v, i as u64 * 10);
            }
        }
    }
}
