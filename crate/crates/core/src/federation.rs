//! Curator/analyst message exchange over an abstract ordered channel.
//!
//! Each round the curator sends one [`CuratorMsg`] carrying the noisy
//! statistics and the analyst answers with one [`AnalystMsg`] carrying the
//! updated dictionary. Messages travel as single text lines:
//!
//! ```text
//! curator <iter> A <rows>x<cols> <entries...> B <rows>x<cols> <entries...>
//! analyst <iter> W <rows>x<cols> <entries...>
//! ```
//!
//! Entries are row-major with 17 significant digits, so parsing a line
//! recovers every value bit for bit.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::thread;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Dictionary, Hyperparams};
use crate::privacy::{noise_schedule, Analyst, Curator, NoiseScales, NoisyStatistics, PrivacyParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CuratorMsg {
    pub iter: usize,
    pub a_bar: Array2<f64>,
    pub b_bar: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalystMsg {
    pub iter: usize,
    pub w: Dictionary,
}

/// Direction of travel on a [`Channel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToAnalyst,
    ToCurator,
}

/// Ordered, reliable transport for serialized messages.
pub trait Channel {
    fn send(&mut self, dir: Direction, line: String) -> std::result::Result<(), String>;
    fn recv(&mut self, dir: Direction) -> std::result::Result<String, String>;
}

/// In-process pair of FIFO queues.
#[derive(Debug, Default)]
pub struct InProcessChannel {
    to_analyst: VecDeque<String>,
    to_curator: VecDeque<String>,
}

impl InProcessChannel {
    pub fn new() -> Self {
        Self::default()
    }

    fn queue(&mut self, dir: Direction) -> &mut VecDeque<String> {
        match dir {
            Direction::ToAnalyst => &mut self.to_analyst,
            Direction::ToCurator => &mut self.to_curator,
        }
    }
}

impl Channel for InProcessChannel {
    fn send(&mut self, dir: Direction, line: String) -> std::result::Result<(), String> {
        self.queue(dir).push_back(line);
        Ok(())
    }

    fn recv(&mut self, dir: Direction) -> std::result::Result<String, String> {
        self.queue(dir)
            .pop_front()
            .ok_or_else(|| format!("no message waiting {dir:?}"))
    }
}

fn write_matrix(out: &mut String, tag: &str, m: &Array2<f64>) {
    use std::fmt::Write;
    write!(out, " {tag} {}x{}", m.nrows(), m.ncols()).unwrap();
    for x in m.iter() {
        write!(out, " {x:.16e}").unwrap();
    }
}

fn read_matrix<'a>(
    toks: &mut impl Iterator<Item = &'a str>,
    tag: &str,
) -> std::result::Result<Array2<f64>, String> {
    match toks.next() {
        Some(t) if t == tag => {}
        other => return Err(format!("expected {tag}, found {other:?}")),
    }
    let dims = toks.next().ok_or("missing dimensions")?;
    let (r, c) = dims.split_once('x').ok_or_else(|| format!("bad dimensions {dims:?}"))?;
    let r: usize = r.parse().map_err(|_| format!("bad row count {r:?}"))?;
    let c: usize = c.parse().map_err(|_| format!("bad column count {c:?}"))?;
    let vals = (0..r * c)
        .map(|_| {
            let t = toks.next().ok_or("truncated matrix")?;
            t.parse::<f64>().map_err(|_| format!("bad entry {t:?}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Array2::from_shape_vec((r, c), vals).expect("length matches dims"))
}

fn read_header<'a>(
    toks: &mut impl Iterator<Item = &'a str>,
    role: &str,
) -> std::result::Result<usize, String> {
    match toks.next() {
        Some(t) if t == role => {}
        other => return Err(format!("expected role {role}, found {other:?}")),
    }
    let it = toks.next().ok_or("missing iteration")?;
    it.parse().map_err(|_| format!("bad iteration {it:?}"))
}

impl CuratorMsg {
    pub fn to_line(&self) -> String {
        let mut s = format!("curator {}", self.iter);
        write_matrix(&mut s, "A", &self.a_bar);
        write_matrix(&mut s, "B", &self.b_bar);
        s
    }

    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let mut toks = line.split_ascii_whitespace();
        let iter = read_header(&mut toks, "curator")?;
        let a_bar = read_matrix(&mut toks, "A")?;
        let b_bar = read_matrix(&mut toks, "B")?;
        if toks.next().is_some() {
            return Err("trailing tokens".into());
        }
        Ok(Self { iter, a_bar, b_bar })
    }
}

impl AnalystMsg {
    pub fn to_line(&self) -> String {
        let mut s = format!("analyst {}", self.iter);
        write_matrix(&mut s, "W", self.w.values());
        s
    }

    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let mut toks = line.split_ascii_whitespace();
        let iter = read_header(&mut toks, "analyst")?;
        let w = read_matrix(&mut toks, "W")?;
        if toks.next().is_some() {
            return Err("trailing tokens".into());
        }
        let w = Dictionary::new(w).map_err(|e| e.to_string())?;
        Ok(Self { iter, w })
    }
}

/// Final dictionary and every message exchanged, in order.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub w: Dictionary,
    pub transcript: Vec<String>,
}

impl ProtocolRun {
    pub fn curator_messages(&self) -> usize {
        self.transcript.iter().filter(|l| l.starts_with("curator ")).count()
    }

    pub fn analyst_messages(&self) -> usize {
        self.transcript.iter().filter(|l| l.starts_with("analyst ")).count()
    }
}

fn as_noisy(msg: &CuratorMsg) -> NoisyStatistics {
    NoisyStatistics {
        a_bar: msg.a_bar.clone(),
        b_bar: msg.b_bar.clone(),
        tau_a: f64::NAN,
        tau_b: f64::NAN,
    }
}

fn expect_iter(got: usize, want: usize, round: usize) -> Result<()> {
    if got != want {
        return Err(Error::Channel {
            round,
            msg: format!("out-of-order message: expected iteration {want}, got {got}"),
        });
    }
    Ok(())
}

/// Runs the private training loop as an alternating exchange over `channel`.
///
/// The initial dictionary is handed to the analyst during setup; afterwards
/// the analyst only ever sees parsed [`CuratorMsg`] lines.
pub fn run_protocol<C: Channel>(
    v: &DataMatrix,
    hp: &Hyperparams,
    pp: &PrivacyParams,
    channel: &mut C,
) -> Result<ProtocolRun> {
    let noise = noise_schedule(v.n(), hp.outer_iters, pp)?;
    run_protocol_with_noise(v, hp, pp, &noise, channel)
}

pub fn run_protocol_with_noise<C: Channel>(
    v: &DataMatrix,
    hp: &Hyperparams,
    pp: &PrivacyParams,
    noise: &[NoiseScales],
    channel: &mut C,
) -> Result<ProtocolRun> {
    if noise.len() < hp.outer_iters {
        return Err(Error::InvalidParam("fewer noise scales than iterations".into()));
    }
    let (mut curator, w0) = Curator::new(v.clone(), hp, pp.model_outliers, pp.seed)?;
    let mut analyst = Analyst::new(w0.clone(), hp.eta_w);
    let mut curator_w = w0;
    let mut transcript = Vec::with_capacity(2 * hp.outer_iters);

    for t in 1..=hp.outer_iters {
        let done = t - 1;
        let chan_err = |msg: String| Error::Channel { round: done, msg };

        // Curator side.
        let noisy = curator.step(&curator_w, t, noise[t - 1])?;
        let line = CuratorMsg {
            iter: t,
            a_bar: noisy.a_bar,
            b_bar: noisy.b_bar,
        }
        .to_line();
        transcript.push(line.clone());
        channel.send(Direction::ToAnalyst, line).map_err(chan_err)?;

        // Analyst side.
        let received = channel.recv(Direction::ToAnalyst).map_err(chan_err)?;
        let msg = CuratorMsg::parse(&received).map_err(chan_err)?;
        expect_iter(msg.iter, t, done)?;
        let w = analyst.update(&as_noisy(&msg))?.clone();
        let reply = AnalystMsg { iter: t, w }.to_line();
        transcript.push(reply.clone());
        channel.send(Direction::ToCurator, reply).map_err(chan_err)?;

        // Curator receives the new dictionary.
        let back = channel.recv(Direction::ToCurator).map_err(chan_err)?;
        let msg = AnalystMsg::parse(&back).map_err(chan_err)?;
        expect_iter(msg.iter, t, done)?;
        curator_w = msg.w;
    }

    Ok(ProtocolRun {
        w: analyst.into_w(),
        transcript,
    })
}

/// Same exchange as [`run_protocol`], with curator and analyst on separate
/// threads connected by `std::sync::mpsc` channels.
pub fn run_protocol_threaded(
    v: &DataMatrix,
    hp: &Hyperparams,
    pp: &PrivacyParams,
) -> Result<ProtocolRun> {
    let noise = noise_schedule(v.n(), hp.outer_iters, pp)?;
    let (mut curator, w0) = Curator::new(v.clone(), hp, pp.model_outliers, pp.seed)?;
    let iters = hp.outer_iters;
    let eta_w = hp.eta_w;
    let (to_analyst, analyst_rx) = mpsc::channel::<String>();
    let (to_curator, curator_rx) = mpsc::channel::<String>();

    let analyst_w0 = w0.clone();
    let analyst = thread::spawn(move || -> Result<(Dictionary, Vec<String>)> {
        let mut analyst = Analyst::new(analyst_w0, eta_w);
        let mut sent = Vec::with_capacity(iters);
        for t in 1..=iters {
            let chan_err = |msg: String| Error::Channel { round: t - 1, msg };
            let line = analyst_rx.recv().map_err(|e| chan_err(e.to_string()))?;
            let msg = CuratorMsg::parse(&line).map_err(chan_err)?;
            expect_iter(msg.iter, t, t - 1)?;
            let w = analyst.update(&as_noisy(&msg))?.clone();
            let reply = AnalystMsg { iter: t, w }.to_line();
            sent.push(reply.clone());
            to_curator.send(reply).map_err(|e| chan_err(e.to_string()))?;
        }
        Ok((analyst.into_w(), sent))
    });

    let mut curator_lines = Vec::with_capacity(iters);
    let mut curator_w = w0;
    let mut curator_result = Ok(());
    for t in 1..=iters {
        let chan_err = |msg: String| Error::Channel { round: t - 1, msg };
        let step = (|| -> Result<()> {
            let noisy = curator.step(&curator_w, t, noise[t - 1])?;
            let line = CuratorMsg {
                iter: t,
                a_bar: noisy.a_bar,
                b_bar: noisy.b_bar,
            }
            .to_line();
            curator_lines.push(line.clone());
            to_analyst.send(line).map_err(|e| chan_err(e.to_string()))?;
            let back = curator_rx.recv().map_err(|e| chan_err(e.to_string()))?;
            let msg = AnalystMsg::parse(&back).map_err(chan_err)?;
            expect_iter(msg.iter, t, t - 1)?;
            curator_w = msg.w;
            Ok(())
        })();
        if step.is_err() {
            curator_result = step;
            break;
        }
    }
    drop(to_analyst);
    let analyst_result = analyst
        .join()
        .map_err(|_| Error::Channel {
            round: 0,
            msg: "analyst thread panicked".into(),
        })?;
    curator_result?;
    let (w, analyst_lines) = analyst_result?;

    let transcript = curator_lines
        .into_iter()
        .zip(analyst_lines)
        .flat_map(|(c, a)| [c, a])
        .collect();
    Ok(ProtocolRun { w, transcript })
}

/// Replays the curator messages of a transcript through a fresh analyst.
pub fn replay_analyst(w0: Dictionary, eta_w: f64, transcript: &[String]) -> Result<Dictionary> {
    let mut analyst = Analyst::new(w0, eta_w);
    for line in transcript.iter().filter(|l| l.starts_with("curator ")) {
        let msg = CuratorMsg::parse(line).map_err(|msg| Error::Channel { round: 0, msg })?;
        analyst.update(&as_noisy(&msg))?;
    }
    Ok(analyst.into_w())
}
