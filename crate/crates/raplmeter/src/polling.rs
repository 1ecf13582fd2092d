//! The measurement loop and its writer thread.
//!
//! Two rules keep the loop accurate at high frequencies, and both came out
//! of measuring what goes wrong without them:
//!
//! 1. **Absolute deadlines.** The k-th tick fires at `origin + k * period`,
//!    computed exactly from integers. A relative sleep accumulates each
//!    tick's wakeup latency into drift; an absolute wait cannot.
//! 2. **No I/O in the loop.** The loop only reads counters, applies the
//!    overflow correction and pushes samples into a bounded queue. A
//!    dedicated writer thread owns the output file and flushes it once per
//!    second, so disk latency never stretches a tick. When the queue is
//!    full the sample is dropped and counted; the loop never blocks.
//!
//! Deadlines the loop could not service in time are counted as missed, so
//! `ticks + missed_ticks` always accounts for the elapsed time.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::backend::{Backend, CounterMeta, RawReading};
use crate::clock::Clock;
use crate::correction::{raw_to_joules, CounterState, EnergySample};
use crate::domain::{DomainId, MechanismKind};
use crate::error::{Error, Result};

/// Highest supported polling frequency; the validated ceiling of the loop.
pub const MAX_FREQUENCY_HZ: f64 = 1000.0;

/// Power bound used by the wrap-time advisory: if a counter could wrap
/// faster than the polling period at this draw, the configuration is
/// suspect and a warning is emitted.
pub const MAX_PLAUSIBLE_WATTS: f64 = 1000.0;

/// A full measurement request, as the CLI assembles it.
#[derive(Debug, Clone)]
pub struct PollingConfig {
    /// 0.1 to 1000 Hz; exactly 0 means "no measurement" (the run produces
    /// a header-only file).
    pub frequency_hz: f64,
    pub domains: Vec<DomainId>,
    pub mechanism: MechanismKind,
    pub output: PathBuf,
    pub flush_interval_s: f64,
    pub duration_s: Option<f64>,
}

impl PollingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frequency_hz < 0.0 || !self.frequency_hz.is_finite() {
            return Err(Error::usage("frequency must be a non-negative number"));
        }
        if self.frequency_hz > MAX_FREQUENCY_HZ {
            return Err(Error::usage(format!(
                "frequency {} Hz is above the supported range (0.1 to {MAX_FREQUENCY_HZ} Hz)",
                self.frequency_hz
            )));
        }
        if self.frequency_hz > 0.0 && self.domains.is_empty() {
            return Err(Error::usage("measuring needs at least one domain"));
        }
        if !self.flush_interval_s.is_finite() || self.flush_interval_s <= 0.0 {
            return Err(Error::usage("flush interval must be positive"));
        }
        Ok(())
    }

    /// Number of deadlines a duration-bound run generates.
    pub fn max_ticks(&self) -> Option<u64> {
        self.duration_s
            .map(|d| (d * self.frequency_hz).round() as u64)
    }
}

/// Warns when the polling period is longer than the fastest plausible wrap
/// time of a selected counter, the configuration that silently loses
/// energy. Advisory only; the run proceeds.
pub fn wrap_advisories(counters: &[CounterMeta], frequency_hz: f64) -> Vec<String> {
    if frequency_hz <= 0.0 {
        return Vec::new();
    }
    let period_s = 1.0 / frequency_hz;
    counters
        .iter()
        .filter_map(|meta| {
            let wrap_time_s =
                meta.wrap_constant as f64 * meta.unit_joules_per_lsb / MAX_PLAUSIBLE_WATTS;
            (period_s > wrap_time_s).then(|| {
                format!(
                    "{}: at {MAX_PLAUSIBLE_WATTS} W the counter can wrap every {wrap_time_s:.3} s, \
                     shorter than the {period_s:.3} s polling period; overflows may go undetected",
                    meta.domain
                )
            })
        })
        .collect()
}

/// Exact deadline arithmetic: `deadline(k) = origin + k * period_ns`, no
/// per-tick rounding to accumulate.
///
/// When the loop wakes late, deadlines that already passed are serviced
/// immediately (the wait for a past deadline returns at once), so a
/// transient stall does not thin out the sample stream. Only when the
/// backlog exceeds `catch_up_limit` are the pending deadlines skipped and
/// counted as missed; replaying an unbounded backlog after a long freeze
/// would only produce a burst of zero-energy samples.
#[derive(Debug, Clone)]
pub struct TickSchedule {
    pub origin_ns: u64,
    pub period_ns: u64,
    pub next_index: u64,
    pub missed_ticks: u64,
    pub catch_up_limit: u64,
}

impl TickSchedule {
    pub fn new(origin_ns: u64, period_ns: u64) -> TickSchedule {
        assert!(period_ns > 0);
        TickSchedule {
            origin_ns,
            period_ns,
            next_index: 1,
            missed_ticks: 0,
            // one second of backlog
            catch_up_limit: (1_000_000_000 / period_ns).max(1),
        }
    }

    pub fn deadline(&self, index: u64) -> u64 {
        self.origin_ns + index * self.period_ns
    }

    /// Called after servicing tick `index` at time `now_ns`: decides
    /// whether the deadlines that passed meanwhile (clamped to
    /// `max_index`) get served late or skipped as missed.
    pub fn complete(&mut self, index: u64, now_ns: u64, max_index: Option<u64>) {
        let mut passed = if now_ns > self.origin_ns {
            (now_ns - self.origin_ns) / self.period_ns
        } else {
            0
        };
        if let Some(max) = max_index {
            passed = passed.min(max);
        }
        let backlog = passed.saturating_sub(index);
        if backlog > self.catch_up_limit {
            self.missed_ticks += backlog;
            self.next_index = passed + 1;
        } else {
            self.next_index = index + 1;
        }
    }
}

/// Where the loop hands its samples. Must never block: return `false` to
/// drop the sample instead.
pub trait SampleSink: Send {
    fn offer(&self, sample: EnergySample) -> bool;
}

impl SampleSink for SyncSender<EnergySample> {
    fn offer(&self, sample: EnergySample) -> bool {
        match self.try_send(sample) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => false,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct RunSummary {
    /// Deadlines serviced.
    pub ticks: u64,
    /// Deadlines that passed before the loop could service them.
    pub missed_ticks: u64,
    pub samples_emitted: u64,
    /// Samples dropped because the queue was full.
    pub samples_dropped: u64,
    /// Reads that failed and were forwarded as invalid samples.
    pub invalid_reads: u64,
    /// Samples whose delta took the wrap branch.
    pub overflows: u64,
    pub duration_ns: u64,
    pub warnings: Vec<String>,
}

/// Runs the measurement loop until `stop` is raised or `max_ticks`
/// deadlines have been generated.
///
/// The loop reads all counters at each deadline, applies the overflow
/// correction, and offers the samples to the sink. It performs no file
/// I/O: writing is the sink consumer's job. A failed read becomes a sample
/// with `valid = false` (never silently skipped); a fatal backend error
/// aborts the run.
pub fn run_polling(
    backend: &mut dyn Backend,
    frequency_hz: f64,
    max_ticks: Option<u64>,
    clock: &dyn Clock,
    sink: &dyn SampleSink,
    stop: &AtomicBool,
) -> Result<RunSummary> {
    if !frequency_hz.is_finite() || frequency_hz <= 0.0 || frequency_hz > MAX_FREQUENCY_HZ {
        return Err(Error::usage(format!(
            "polling frequency must be in (0, {MAX_FREQUENCY_HZ}] Hz, got {frequency_hz}"
        )));
    }
    let period_ns = (1e9 / frequency_hz).round() as u64;
    let mechanism = backend.mechanism();
    let meta: Vec<CounterMeta> = backend.counters().to_vec();
    let mut states: Vec<CounterState> = meta
        .iter()
        .map(|m| CounterState::new(m.wrap_constant, m.unit_joules_per_lsb))
        .collect();

    let mut summary = RunSummary {
        warnings: wrap_advisories(&meta, frequency_hz),
        ..RunSummary::default()
    };

    let origin = clock.now_ns();
    let mut schedule = TickSchedule::new(origin, period_ns);
    let mut waiter = clock.waiter();
    let mut readings: Vec<RawReading> = Vec::with_capacity(meta.len());

    loop {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let index = schedule.next_index;
        if let Some(max) = max_ticks {
            if index > max {
                break;
            }
        }
        waiter.wait_until(schedule.deadline(index))?;
        let now = clock.now_ns();

        readings.clear();
        backend.poll(now, &mut readings)?;
        for reading in readings.drain(..) {
            let m = &meta[reading.counter];
            let sample = match reading.value {
                Ok(raw) => match states[reading.counter].observe(raw) {
                    Ok(None) => continue, // first reading initializes only
                    Ok(Some((delta_raw, overflowed))) => {
                        if overflowed {
                            summary.overflows += 1;
                        }
                        EnergySample {
                            timestamp_ns: reading.timestamp_ns,
                            domain: m.domain,
                            mechanism,
                            joules: raw_to_joules(delta_raw, m.unit_joules_per_lsb),
                            overflowed,
                            valid: true,
                        }
                    }
                    Err(_) => invalid_sample(reading.timestamp_ns, m.domain, mechanism),
                },
                Err(_) => invalid_sample(reading.timestamp_ns, m.domain, mechanism),
            };
            if !sample.valid {
                summary.invalid_reads += 1;
            }
            if sink.offer(sample) {
                summary.samples_emitted += 1;
            } else {
                summary.samples_dropped += 1;
            }
        }
        summary.ticks += 1;
        schedule.complete(index, clock.now_ns(), max_ticks);
    }

    summary.missed_ticks = schedule.missed_ticks;
    summary.duration_ns = clock.now_ns().saturating_sub(origin);
    Ok(summary)
}

fn invalid_sample(timestamp_ns: u64, domain: DomainId, mechanism: MechanismKind) -> EnergySample {
    EnergySample {
        timestamp_ns,
        domain,
        mechanism,
        joules: 0.0,
        overflowed: false,
        valid: false,
    }
}

/// Measurements-per-second accounting: buckets sample timestamps by
/// wall-clock second and reports the mean and sample standard deviation of
/// the per-second counts. `trim_edges` drops the first and last bucket,
/// which are usually partial seconds that would skew the statistics.
pub fn achieved_rate(timestamps_ns: &[u64], trim_edges: bool) -> Result<(f64, f64)> {
    if timestamps_ns.is_empty() {
        return Err(Error::usage("no timestamps to analyze"));
    }
    let first = timestamps_ns.iter().min().unwrap() / 1_000_000_000;
    let last = timestamps_ns.iter().max().unwrap() / 1_000_000_000;
    let span = (last - first + 1) as usize;
    if span < 3 {
        return Err(Error::usage(format!(
            "need at least 3 seconds of data, got {span} s"
        )));
    }
    let mut counts = vec![0u64; span];
    for &ts in timestamps_ns {
        counts[(ts / 1_000_000_000 - first) as usize] += 1;
    }
    let used: &[u64] = if trim_edges {
        &counts[1..counts.len() - 1]
    } else {
        &counts
    };
    let n = used.len() as f64;
    let mean = used.iter().sum::<u64>() as f64 / n;
    let std = if used.len() > 1 {
        let var = used.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

pub const CSV_HEADER: &str = "timestamp_ms,mechanism,domain,socket,joules,overflowed";

#[derive(Debug, Default, Clone)]
pub struct WriterSummary {
    pub rows_written: u64,
    /// Invalid samples that were accounted but not written (the row format
    /// carries energy values only).
    pub invalid_skipped: u64,
}

/// Consumes samples from `rx` and appends CSV rows to `path`, flushing at
/// least every `flush_interval_s` so readers never lag more than that. One
/// row per valid sample:
///
/// ```text
/// timestamp_ms,mechanism,domain,socket,joules,overflowed
/// 1000,sim,package,0,50.000000000,0
/// ```
///
/// `timestamp_ms` is integer milliseconds since the Unix epoch, `socket`
/// is empty for psys, `joules` has nine fractional digits, `overflowed` is
/// 0 or 1, rows end with LF. Runs on the writer thread; returns once the
/// sending side disconnects. A write failure drains the queue (so the loop
/// finishes) and reports the I/O error.
pub fn write_csv(
    rx: Receiver<EnergySample>,
    path: &Path,
    flush_interval_s: f64,
    clock: &dyn Clock,
) -> Result<WriterSummary> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    let mut summary = WriterSummary::default();

    let result = (|| -> Result<()> {
        out.write_all(CSV_HEADER.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;

        let flush_every = Duration::from_secs_f64(flush_interval_s);
        let mut last_flush = Instant::now();
        loop {
            let timeout = flush_every.saturating_sub(last_flush.elapsed());
            match rx.recv_timeout(timeout) {
                Ok(sample) => {
                    if sample.valid {
                        write_row(&mut out, &sample, clock)?;
                        summary.rows_written += 1;
                    } else {
                        summary.invalid_skipped += 1;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            if last_flush.elapsed() >= flush_every {
                out.flush()?;
                last_flush = Instant::now();
            }
        }
        out.flush()?;
        Ok(())
    })();

    if result.is_err() {
        // unblock the producer before reporting the failure
        for _ in rx.iter() {}
    }
    result.map(|()| summary)
}

fn write_row(out: &mut impl Write, sample: &EnergySample, clock: &dyn Clock) -> Result<()> {
    let socket = sample
        .domain
        .socket
        .map(|s| s.to_string())
        .unwrap_or_default();
    writeln!(
        out,
        "{},{},{},{},{:.9},{}",
        clock.epoch_ms_of(sample.timestamp_ns),
        sample.mechanism,
        sample.domain.kind,
        socket,
        sample.joules,
        u8::from(sample.overflowed)
    )?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MeasureOutcome {
    pub run: RunSummary,
    pub writer: WriterSummary,
}

/// Wires the loop to a writer thread over a bounded queue (capacity
/// `2 * expected-samples-per-second * flush_interval`) and runs to
/// completion.
pub fn measure_to_csv(
    backend: &mut dyn Backend,
    frequency_hz: f64,
    max_ticks: Option<u64>,
    clock: Arc<dyn Clock>,
    output: &Path,
    flush_interval_s: f64,
    stop: &AtomicBool,
) -> Result<MeasureOutcome> {
    let capacity = (2.0 * backend.sample_rate_hint(frequency_hz) * flush_interval_s)
        .ceil()
        .max(16.0) as usize;
    let (tx, rx) = std::sync::mpsc::sync_channel::<EnergySample>(capacity);

    let writer_clock = clock.clone();
    let writer_path = output.to_path_buf();
    let writer = thread::Builder::new()
        .name("csv-writer".to_string())
        .spawn(move || write_csv(rx, &writer_path, flush_interval_s, writer_clock.as_ref()))
        .map_err(Error::Io)?;

    let run_result = run_polling(backend, frequency_hz, max_ticks, clock.as_ref(), &tx, stop);
    drop(tx); // disconnect so the writer finishes
    let writer_result = writer
        .join()
        .map_err(|_| Error::env("the writer thread panicked".to_string()))?;

    Ok(MeasureOutcome {
        run: run_result?,
        writer: writer_result?,
    })
}
