//! TCP backend: one OS process per rank, full mesh of connections.
//!
//! Ranks rendezvous through a peers file holding one `host:port` per line,
//! line `i` being the listening address of rank `i`. Every message travels as
//! a frame: 4-byte big-endian payload length, 4-byte big-endian tag, 4-byte
//! big-endian source rank, then the payload bytes.

use std::fs;
use std::io::{self, BufReader, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{check_dest, check_source, CommStats, Mailbox, RankId, StatsCounter, Tag, Transport};
use crate::error::{Error, Result};

pub const FRAME_HEADER_LEN: usize = 12;

const CONNECT_RETRY: Duration = Duration::from_millis(25);

/// A decoded wire frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: Tag,
    pub source: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode_into(tag: Tag, source: u32, payload: &[u8], out: &mut Vec<u8>) -> Result<()> {
        let len = u32::try_from(payload.len())
            .map_err(|_| Error::Transport(format!("payload of {} bytes too large", payload.len())))?;
        out.reserve(FRAME_HEADER_LEN + payload.len());
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&tag.to_be_bytes());
        out.extend_from_slice(&source.to_be_bytes());
        out.extend_from_slice(payload);
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        Frame::encode_into(self.tag, self.source, &self.payload, &mut out)?;
        Ok(out)
    }

    /// Reads one frame. Returns `Ok(None)` on a clean end of stream before the
    /// first header byte.
    pub fn read_from(reader: &mut impl Read) -> io::Result<Option<Frame>> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        let mut filled = 0;
        while filled < FRAME_HEADER_LEN {
            match reader.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(io::Error::new(ErrorKind::UnexpectedEof, "truncated frame header")),
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        let word = |i: usize| u32::from_be_bytes(header[i..i + 4].try_into().unwrap());
        let len = word(0) as usize;
        let mut payload = vec![0u8; len];
        reader.read_exact(&mut payload)?;
        Ok(Some(Frame { tag: word(4), source: word(8), payload }))
    }
}

/// Parses a peers file: one `host:port` per non-blank line.
pub fn read_peers_file(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path.as_ref())?;
    let peers: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if peers.is_empty() {
        return Err(Error::Topology(format!("peers file {} lists no ranks", path.as_ref().display())));
    }
    for peer in &peers {
        if peer.rsplit_once(':').is_none_or(|(_, port)| port.parse::<u16>().is_err()) {
            return Err(Error::Topology(format!("malformed peer address {peer:?}")));
        }
    }
    Ok(peers)
}

pub struct SocketEndpoint {
    rank: RankId,
    size: usize,
    mailbox: Arc<Mailbox>,
    writers: Vec<Option<Mutex<TcpStream>>>,
    readers: Vec<JoinHandle<()>>,
    stats: StatsCounter,
}

impl SocketEndpoint {
    /// Joins the world described by `peers` as `rank`.
    ///
    /// Binds `peers[rank]`, connects to every lower rank and accepts one
    /// connection from every higher rank. Fails if the mesh is not complete
    /// within `timeout`.
    pub fn connect(rank: usize, peers: &[String], timeout: Duration) -> Result<SocketEndpoint> {
        let size = peers.len();
        if rank >= size {
            return Err(Error::Topology(format!("rank {rank} out of range for {size} peers")));
        }
        let deadline = Instant::now() + timeout;
        let listener = TcpListener::bind(peers[rank].as_str())?;

        let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
        for (peer, addr) in peers.iter().enumerate().take(rank) {
            let mut stream = connect_with_retry(addr, deadline)?;
            stream.write_all(&(rank as u32).to_be_bytes())?;
            stream.write_all(&(size as u32).to_be_bytes())?;
            streams[peer] = Some(stream);
        }

        listener.set_nonblocking(true)?;
        let mut pending = size - rank - 1;
        while pending > 0 {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let mut hello = [0u8; 8];
                    stream.read_exact(&mut hello)?;
                    let peer = u32::from_be_bytes(hello[..4].try_into().unwrap()) as usize;
                    let their_size = u32::from_be_bytes(hello[4..].try_into().unwrap()) as usize;
                    if their_size != size || peer <= rank || peer >= size || streams[peer].is_some() {
                        return Err(Error::Topology(format!(
                            "unexpected handshake from rank {peer} (world size {their_size})"
                        )));
                    }
                    streams[peer] = Some(stream);
                    pending -= 1;
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Transport(format!(
                            "rank {rank}: timed out waiting for {pending} peer connection(s)"
                        )));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mailbox = Arc::new(Mailbox::default());
        let mut writers = Vec::with_capacity(size);
        let mut readers = Vec::with_capacity(size.saturating_sub(1));
        for (peer, stream) in streams.into_iter().enumerate() {
            let Some(stream) = stream else {
                writers.push(None);
                continue;
            };
            stream.set_nodelay(true)?;
            let read_half = stream.try_clone()?;
            let mailbox = Arc::clone(&mailbox);
            readers.push(thread::spawn(move || pump_frames(peer, read_half, &mailbox)));
            writers.push(Some(Mutex::new(stream)));
        }

        Ok(SocketEndpoint {
            rank: RankId(rank),
            size,
            mailbox,
            writers,
            readers,
            stats: StatsCounter::default(),
        })
    }

    /// Reads the peers file and joins as `rank`.
    pub fn from_peers_file(rank: usize, path: impl AsRef<Path>, timeout: Duration) -> Result<SocketEndpoint> {
        let peers = read_peers_file(path)?;
        SocketEndpoint::connect(rank, &peers, timeout)
    }
}

fn connect_with_retry(addr: &str, deadline: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect(addr) {
            Ok(stream) => return Ok(stream),
            Err(_) if Instant::now() < deadline => thread::sleep(CONNECT_RETRY),
            Err(e) => return Err(Error::Transport(format!("could not reach {addr}: {e}"))),
        }
    }
}

fn pump_frames(peer: usize, stream: TcpStream, mailbox: &Mailbox) {
    let mut reader = BufReader::new(stream);
    loop {
        match Frame::read_from(&mut reader) {
            Ok(Some(frame)) if frame.source as usize == peer => {
                if mailbox.deliver(peer, frame.tag, frame.payload).is_err() {
                    break;
                }
            }
            // a frame claiming another source on this connection, EOF or an error
            _ => break,
        }
    }
    mailbox.disconnect(peer);
}

impl Transport for SocketEndpoint {
    fn rank(&self) -> RankId {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn send(&self, dest: RankId, tag: Tag, payload: &[u8]) -> Result<()> {
        check_dest(self.rank, dest, self.size)?;
        let mut frame = Vec::new();
        Frame::encode_into(tag, self.rank.0 as u32, payload, &mut frame)?;
        let writer = self.writers[dest.0].as_ref().expect("mesh has a stream per peer");
        writer
            .lock()
            .unwrap()
            .write_all(&frame)
            .map_err(|e| Error::Transport(format!("send to rank {dest} failed: {e}")))?;
        self.stats.record_send(payload.len());
        Ok(())
    }

    fn recv(&self, source: RankId, tag: Tag) -> Result<Vec<u8>> {
        check_source(source, self.size)?;
        let payload = self.mailbox.take(source.0, tag, None)?;
        Ok(payload.expect("blocking take returns a payload"))
    }

    fn recv_timeout(&self, source: RankId, tag: Tag, timeout: Duration) -> Result<Option<Vec<u8>>> {
        check_source(source, self.size)?;
        self.mailbox.take(source.0, tag, Some(Instant::now() + timeout))
    }

    fn stats(&self) -> CommStats {
        self.stats.snapshot()
    }

    fn record_rounds(&self, rounds: u64) {
        self.stats.record_rounds(rounds);
    }
}

impl Drop for SocketEndpoint {
    /// Half-closes every connection and waits for the peers to do the same,
    /// so frames already written are never cut off by a reset.
    fn drop(&mut self) {
        for writer in self.writers.iter().flatten() {
            if let Ok(stream) = writer.lock() {
                let _ = stream.shutdown(std::net::Shutdown::Write);
            }
        }
        for reader in self.readers.drain(..) {
            let _ = reader.join();
        }
    }
}
