//! Hardware-in-the-loop noise from a single junction read over a serial link.
//!
//! A device streams voltage readings at roughly 1 kHz. Readings are drained
//! into a fixed-capacity FIFO ring ([`LiveBuffer`], 200 values by default).
//! Each noise request waits `min_wait` so at least one fresh reading has
//! arrived, then returns a shuffled copy of the whole buffer, centered on the
//! buffer mean.
//!
//! Two transports are provided: [`StreamTransport`] decodes frames from any
//! byte stream (a serial device opened as a file, a pipe, a socket) on a
//! background reader thread, and [`MockTransport`] synthesizes readings from
//! any [`NoiseSpec`] against a simulated clock so tests run instantly.
//!
//! Frame formats:
//!
//! * [`FrameMode::Lines`]: newline-delimited decimal volts, e.g. `0.0421\n`.
//!   Blank lines and `\r` are ignored.
//! * [`FrameMode::AdcCounts`]: 2-byte big-endian raw ADC counts, converted to
//!   volts with [`AdcModel`].

use std::collections::VecDeque;
use std::io::Read;
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseSource, NoiseSpec};
use crate::rng::SimRng;

pub const DEFAULT_BUFFER_SIZE: usize = 200;
pub const DEFAULT_MIN_WAIT: f64 = 1e-3;
pub const DEVICE_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub timestamp: f64,
    pub volts: f64,
}

/// A source of timestamped voltage readings.
pub trait SerialTransport: Send {
    /// Appends every reading available right now; never blocks.
    fn read_available(&mut self, out: &mut Vec<Reading>) -> Result<()>;

    /// Lets `seconds` elapse: wall clock for real devices, simulated for mocks.
    fn wait(&mut self, seconds: f64);
}

/// FIFO ring of the most recent readings.
#[derive(Debug, Clone)]
pub struct LiveBuffer {
    capacity: usize,
    values: VecDeque<f64>,
}

impl LiveBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            values: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill(&self) -> usize {
        self.values.len()
    }

    pub fn is_warm(&self) -> bool {
        self.values.len() == self.capacity
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Drains the transport into the buffer; returns the number of readings.
pub fn poll(transport: &mut dyn SerialTransport, buffer: &mut LiveBuffer) -> Result<usize> {
    let mut readings = Vec::new();
    transport.read_available(&mut readings)?;
    for r in &readings {
        if !r.volts.is_finite() {
            return Err(Error::NonFinite("serial reading".into()));
        }
        buffer.push(r.volts);
    }
    Ok(readings.len())
}

/// Uniformly shuffled copy of the buffer; the buffer itself is untouched.
pub fn sample_buffer<R: Rng + ?Sized>(buffer: &LiveBuffer, rng: &mut R) -> Result<Vec<f64>> {
    if !buffer.is_warm() {
        return Err(Error::ColdBuffer {
            fill: buffer.fill(),
            capacity: buffer.capacity(),
        });
    }
    let mut out: Vec<f64> = buffer.values().collect();
    out.shuffle(rng);
    Ok(out)
}

/// Voltage divider read by an ADC: a fixed resistor in series with the
/// junction, the ADC measuring the voltage across the junction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcModel {
    pub bits: u32,
    pub v_supply: f64,
    pub r_fixed: f64,
}

impl Default for AdcModel {
    fn default() -> Self {
        Self {
            bits: 14,
            v_supply: 3.3,
            r_fixed: 100e3,
        }
    }
}

impl AdcModel {
    fn full_scale(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }

    pub fn counts_to_volts(&self, counts: u16) -> f64 {
        f64::from(counts) / self.full_scale() * self.v_supply
    }

    pub fn volts_to_counts(&self, volts: f64) -> u16 {
        (volts / self.v_supply * self.full_scale())
            .round()
            .clamp(0.0, self.full_scale()) as u16
    }

    /// Rounds a voltage to the nearest representable ADC level.
    pub fn quantize(&self, volts: f64) -> f64 {
        self.counts_to_volts(self.volts_to_counts(volts))
    }

    /// Voltage across the junction for a junction resistance.
    pub fn divider_voltage(&self, r_mtj: f64) -> f64 {
        self.v_supply * r_mtj / (r_mtj + self.r_fixed)
    }

    /// Inverts the divider: junction resistance from the measured voltage.
    pub fn junction_resistance(&self, volts: f64) -> f64 {
        self.r_fixed * volts / (self.v_supply - volts)
    }
}

/// Deterministic transport that emits readings from a noise source at a
/// fixed rate against a simulated clock.
pub struct MockTransport {
    source: NoiseSource,
    rate_hz: f64,
    clock: f64,
    emitted: u64,
    adc: Option<AdcModel>,
}

impl MockTransport {
    pub fn new(spec: &NoiseSpec, rng: SimRng, rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0) {
            return Err(Error::InvalidParameter("device rate must be > 0".into()));
        }
        Ok(Self {
            source: NoiseSource::new(spec, rng)?,
            rate_hz,
            clock: 0.0,
            emitted: 0,
            adc: None,
        })
    }

    /// Quantizes every reading to the ADC's levels.
    pub fn with_adc(mut self, adc: AdcModel) -> Self {
        self.adc = Some(adc);
        self
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }
}

impl SerialTransport for MockTransport {
    fn read_available(&mut self, out: &mut Vec<Reading>) -> Result<()> {
        // The epsilon absorbs rounding in the accumulated simulated clock.
        while self.emitted as f64 <= self.clock * self.rate_hz + 1e-6 {
            let mut v = self.source.sample(1)?[0];
            if let Some(adc) = &self.adc {
                v = adc.quantize(v);
            }
            out.push(Reading {
                timestamp: self.emitted as f64 / self.rate_hz,
                volts: v,
            });
            self.emitted += 1;
        }
        Ok(())
    }

    fn wait(&mut self, seconds: f64) {
        self.clock += seconds;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    Lines,
    AdcCounts,
}

/// Incremental frame decoder; bytes may arrive split at any point.
#[derive(Debug, Clone)]
pub struct FrameDecoder {
    mode: FrameMode,
    adc: AdcModel,
    pending: Vec<u8>,
}

impl FrameDecoder {
    pub fn new(mode: FrameMode, adc: AdcModel) -> Self {
        Self {
            mode,
            adc,
            pending: Vec::new(),
        }
    }

    pub fn push(&mut self, bytes: &[u8], out: &mut Vec<f64>) -> Result<()> {
        self.pending.extend_from_slice(bytes);
        match self.mode {
            FrameMode::Lines => {
                while let Some(pos) = self.pending.iter().position(|&b| b == b'\n') {
                    let line: Vec<u8> = self.pending.drain(..=pos).collect();
                    let text = std::str::from_utf8(&line)
                        .map_err(|e| Error::Parse(format!("serial line is not UTF-8: {e}")))?
                        .trim();
                    if text.is_empty() {
                        continue;
                    }
                    let v: f64 = text
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad reading {text:?}")))?;
                    out.push(v);
                }
            }
            FrameMode::AdcCounts => {
                let whole = self.pending.len() / 2 * 2;
                for pair in self.pending[..whole].chunks_exact(2) {
                    out.push(self.adc.counts_to_volts(u16::from_be_bytes([pair[0], pair[1]])));
                }
                self.pending.drain(..whole);
            }
        }
        Ok(())
    }
}

/// Transport over any byte stream, decoded on a background reader thread.
pub struct StreamTransport {
    rx: Receiver<Result<f64>>,
    start: std::time::Instant,
}

impl StreamTransport {
    pub fn spawn<R: Read + Send + 'static>(mut reader: R, mode: FrameMode, adc: AdcModel) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut dec = FrameDecoder::new(mode, adc);
            let mut buf = [0u8; 256];
            let mut vals = Vec::new();
            loop {
                match reader.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => {
                        vals.clear();
                        if let Err(e) = dec.push(&buf[..n], &mut vals) {
                            let _ = tx.send(Err(e));
                            break;
                        }
                        for &v in &vals {
                            if tx.send(Ok(v)).is_err() {
                                return;
                            }
                        }
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                    Err(e) => {
                        let _ = tx.send(Err(e.into()));
                        break;
                    }
                }
            }
        });
        Self {
            rx,
            start: std::time::Instant::now(),
        }
    }

    /// Opens a device node (or any file) for reading. Line settings such as
    /// the baud rate are left to the operating system.
    pub fn open(path: &std::path::Path, mode: FrameMode, adc: AdcModel) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(Self::spawn(f, mode, adc))
    }
}

impl SerialTransport for StreamTransport {
    fn read_available(&mut self, out: &mut Vec<Reading>) -> Result<()> {
        let before = out.len();
        loop {
            match self.rx.try_recv() {
                Ok(Ok(v)) => out.push(Reading {
                    timestamp: self.start.elapsed().as_secs_f64(),
                    volts: v,
                }),
                Ok(Err(e)) => return Err(e),
                Err(TryRecvError::Empty) => return Ok(()),
                Err(TryRecvError::Disconnected) if out.len() > before => return Ok(()),
                Err(TryRecvError::Disconnected) => return Err(Error::TransportClosed),
            }
        }
    }

    fn wait(&mut self, seconds: f64) {
        std::thread::sleep(Duration::from_secs_f64(seconds.max(0.0)));
    }
}

/// Live noise sampler: transport, ring buffer and shuffling RNG.
pub struct LiveNoise {
    transport: Box<dyn SerialTransport>,
    buffer: LiveBuffer,
    min_wait: f64,
    rng: SimRng,
    requests: u64,
}

impl LiveNoise {
    pub fn new(transport: Box<dyn SerialTransport>, buffer_size: usize, min_wait: f64, rng: SimRng) -> Self {
        Self {
            transport,
            buffer: LiveBuffer::new(buffer_size),
            min_wait,
            rng,
            requests: 0,
        }
    }

    pub fn buffer(&self) -> &LiveBuffer {
        &self.buffer
    }

    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn poll(&mut self) -> Result<usize> {
        poll(self.transport.as_mut(), &mut self.buffer)
    }

    /// Polls until the buffer is full, waiting `min_wait` between polls.
    /// Gives up after `max_polls` polls that delivered nothing.
    pub fn warm_up(&mut self, max_polls: usize) -> Result<()> {
        let mut idle = 0;
        while !self.buffer.is_warm() {
            if self.poll()? == 0 {
                idle += 1;
                if idle > max_polls {
                    return Err(Error::ColdBuffer {
                        fill: self.buffer.fill(),
                        capacity: self.buffer.capacity(),
                    });
                }
            }
            self.transport.wait(self.min_wait.max(1e-4));
        }
        Ok(())
    }

    /// One noise request: wait, ingest, and return the shuffled buffer
    /// centered on its mean.
    pub fn request(&mut self) -> Result<Vec<f64>> {
        self.transport.wait(self.min_wait);
        self.poll()?;
        let mut v = sample_buffer(&self.buffer, &mut self.rng)?;
        let m = self.buffer.mean();
        v.iter_mut().for_each(|x| *x -= m);
        self.requests += 1;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::HmmParams;
    use crate::rng::stream_rng;

    #[test]
    fn ring_fill_and_eviction() {
        let mut b = LiveBuffer::new(200);
        for i in 0..200 {
            b.push(i as f64);
        }
        assert_eq!(b.fill(), 200);
        assert!(b.is_warm());
        b.push(200.0);
        assert_eq!(b.fill(), 200);
        assert_eq!(b.values().next(), Some(1.0));
        assert_eq!(b.values().last(), Some(200.0));
    }

    struct Idle;
    impl SerialTransport for Idle {
        fn read_available(&mut self, _: &mut Vec<Reading>) -> Result<()> {
            Ok(())
        }
        fn wait(&mut self, _: f64) {}
    }

    #[test]
    fn idle_poll_is_noop() {
        let mut b = LiveBuffer::new(3);
        b.push(1.0);
        assert_eq!(poll(&mut Idle, &mut b).unwrap(), 0);
        assert_eq!(b.values().collect::<Vec<_>>(), vec![1.0]);
    }

    #[test]
    fn sample_is_a_permutation_and_deterministic() {
        let mut b = LiveBuffer::new(50);
        for i in 0..50 {
            b.push(i as f64 * 0.5);
        }
        let a = sample_buffer(&b, &mut stream_rng(1, 0)).unwrap();
        let c = sample_buffer(&b, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(a, c);
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, b.values().collect::<Vec<_>>());
        // non-destructive
        assert_eq!(b.fill(), 50);
    }

    #[test]
    fn cold_buffer_is_an_error() {
        let mut b = LiveBuffer::new(4);
        b.push(1.0);
        assert!(matches!(
            sample_buffer(&b, &mut stream_rng(0, 0)),
            Err(Error::ColdBuffer { fill: 1, capacity: 4 })
        ));
    }

    #[test]
    fn mock_emits_at_device_rate() {
        let spec = NoiseSpec::Gaussian { sigma: 1.0 };
        let mut t = MockTransport::new(&spec, stream_rng(0, 1), 1000.0).unwrap();
        let mut b = LiveBuffer::new(200);
        assert_eq!(poll(&mut t, &mut b).unwrap(), 1);
        assert_eq!(poll(&mut t, &mut b).unwrap(), 0);
        t.wait(1e-3);
        assert_eq!(poll(&mut t, &mut b).unwrap(), 1);
        t.wait(0.1);
        assert_eq!(poll(&mut t, &mut b).unwrap(), 100);
    }

    #[test]
    fn request_brings_fresh_value_and_centers() {
        let spec = NoiseSpec::Hmm(HmmParams::MEASURED);
        let t = MockTransport::new(&spec, stream_rng(0, 1), DEVICE_RATE_HZ).unwrap();
        let mut live = LiveNoise::new(Box::new(t), 200, DEFAULT_MIN_WAIT, stream_rng(0, 2));
        assert!(live.request().is_err());
        live.warm_up(10_000).unwrap();
        let before: Vec<f64> = live.buffer().values().collect();
        let v = live.request().unwrap();
        let after: Vec<f64> = live.buffer().values().collect();
        assert_ne!(before, after);
        assert_eq!(v.len(), 200);
        assert!(crate::numerics::mean(&v).abs() < 1e-12);
    }

    #[test]
    fn adc_round_trip_and_divider() {
        let adc = AdcModel::default();
        assert_eq!(adc.counts_to_volts(16383), 3.3);
        assert_eq!(adc.volts_to_counts(3.3), 16383);
        let v = adc.divider_voltage(4e3);
        assert!((adc.junction_resistance(v) - 4e3).abs() < 1e-6);
        let q = adc.quantize(0.0421);
        assert!((q - 0.0421).abs() <= 0.5 * 3.3 / 16383.0 + 1e-15);
    }

    #[test]
    fn decoder_lines_split_across_chunks() {
        let mut d = FrameDecoder::new(FrameMode::Lines, AdcModel::default());
        let mut out = Vec::new();
        d.push(b"0.04", &mut out).unwrap();
        assert!(out.is_empty());
        d.push(b"2\r\n\n0.036\n", &mut out).unwrap();
        assert_eq!(out, vec![0.042, 0.036]);
        assert!(d.push(b"abc\n", &mut out).is_err());
    }

    #[test]
    fn decoder_adc_counts() {
        let adc = AdcModel::default();
        let mut d = FrameDecoder::new(FrameMode::AdcCounts, adc);
        let mut out = Vec::new();
        d.push(&[0x3f], &mut out).unwrap();
        d.push(&[0xff, 0x00], &mut out).unwrap();
        d.push(&[0x00], &mut out).unwrap();
        assert_eq!(out, vec![3.3, 0.0]);
    }

    #[test]
    fn stream_transport_reads_then_closes() {
        let data = b"0.1\n0.2\n0.3\n".to_vec();
        let mut t = StreamTransport::spawn(std::io::Cursor::new(data), FrameMode::Lines, AdcModel::default());
        let mut b = LiveBuffer::new(3);
        let mut got = 0;
        for _ in 0..1000 {
            match poll(&mut t, &mut b) {
                Ok(n) => got += n,
                Err(Error::TransportClosed) => break,
                Err(e) => panic!("{e}"),
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        assert_eq!(got, 3);
        assert_eq!(b.values().collect::<Vec<_>>(), vec![0.1, 0.2, 0.3]);
        assert!(matches!(poll(&mut t, &mut b), Err(Error::TransportClosed)));
    }
}
