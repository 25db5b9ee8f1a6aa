//! Minimal ISO base media file (MP4) reader and writer.
//!
//! The reader only understands what the built-in decoder needs: progressive
//! (non-fragmented) files, the sample tables of each track, and the AVC
//! decoder configuration. The writer produces H.264 + 16-bit PCM files used
//! as test fixtures.

use std::fs::File;
use std::io::{self, BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Mp4Error {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed box {fourcc}: {reason}")]
    Malformed { fourcc: String, reason: String },
    #[error("missing box {0}")]
    Missing(&'static str),
    #[error("fragmented mp4 is not supported by the built-in reader")]
    Fragmented,
}

fn malformed(fourcc: &[u8; 4], reason: impl Into<String>) -> Mp4Error {
    Mp4Error::Malformed {
        fourcc: String::from_utf8_lossy(fourcc).into_owned(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvcConfig {
    pub nal_length_size: usize,
    pub sps: Vec<Vec<u8>>,
    pub pps: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleEntry {
    Avc {
        width: u16,
        height: u16,
        config: AvcConfig,
    },
    Visual {
        fourcc: [u8; 4],
        width: u16,
        height: u16,
    },
    Audio {
        fourcc: [u8; 4],
        channels: u16,
        sample_rate: u32,
    },
    Other([u8; 4]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleInfo {
    pub offset: u64,
    pub size: u32,
    /// Decode timestamp in track timescale units.
    pub dts: u64,
    /// Composition offset (pts = dts + cts_offset).
    pub cts_offset: i64,
    pub sync: bool,
}

impl SampleInfo {
    pub fn pts(&self) -> i64 {
        self.dts as i64 + self.cts_offset
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: u32,
    pub handler: [u8; 4],
    pub timescale: u32,
    pub duration: u64,
    pub entry: SampleEntry,
    pub samples: Vec<SampleInfo>,
}

impl Track {
    pub fn is_video(&self) -> bool {
        &self.handler == b"vide"
    }

    pub fn is_audio(&self) -> bool {
        &self.handler == b"soun"
    }

    pub fn duration_s(&self) -> f64 {
        if self.timescale == 0 {
            return 0.0;
        }
        let from_header = self.duration as f64 / self.timescale as f64;
        if from_header > 0.0 {
            return from_header;
        }
        // Some muxers leave mdhd duration at zero; fall back to the sample table.
        match self.samples.last() {
            Some(last) => {
                let end = last.dts + self.sample_delta_hint();
                end as f64 / self.timescale as f64
            }
            None => 0.0,
        }
    }

    fn sample_delta_hint(&self) -> u64 {
        match self.samples.as_slice() {
            [.., a, b] => b.dts - a.dts,
            _ => 0,
        }
    }

    /// Average frame rate derived from sample count and duration.
    pub fn frame_rate(&self) -> f64 {
        let d = self.duration_s();
        if d > 0.0 {
            self.samples.len() as f64 / d
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct Movie {
    pub timescale: u32,
    pub duration: u64,
    pub tracks: Vec<Track>,
}

impl Movie {
    pub fn duration_s(&self) -> f64 {
        let header = if self.timescale > 0 {
            self.duration as f64 / self.timescale as f64
        } else {
            0.0
        };
        self.tracks
            .iter()
            .map(Track::duration_s)
            .fold(header, f64::max)
    }

    pub fn video_track(&self) -> Option<&Track> {
        self.tracks.iter().find(|t| t.is_video())
    }

    pub fn audio_track(&self) -> Option<&Track> {
        self.tracks.iter().find(|t| t.is_audio())
    }
}

struct BoxHeader {
    fourcc: [u8; 4],
    /// Payload length (excluding the header), `None` when it runs to EOF.
    payload_len: Option<u64>,
}

fn read_header<R: Read>(r: &mut R) -> Result<Option<(BoxHeader, u64)>, Mp4Error> {
    let mut head = [0u8; 8];
    match r.read_exact(&mut head) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let size = u32::from_be_bytes(head[0..4].try_into().unwrap()) as u64;
    let fourcc: [u8; 4] = head[4..8].try_into().unwrap();
    let (payload_len, header_len) = match size {
        0 => (None, 8),
        1 => {
            let mut large = [0u8; 8];
            r.read_exact(&mut large)?;
            let large = u64::from_be_bytes(large);
            if large < 16 {
                return Err(malformed(&fourcc, "large size below header length"));
            }
            (Some(large - 16), 16)
        }
        s if s < 8 => return Err(malformed(&fourcc, format!("size {s} below header length"))),
        s => (Some(s - 8), 8),
    };
    Ok(Some((
        BoxHeader {
            fourcc,
            payload_len,
        },
        header_len,
    )))
}

/// Iterates the child boxes of an in-memory payload.
fn children(payload: &[u8]) -> impl Iterator<Item = Result<([u8; 4], &[u8]), Mp4Error>> {
    let mut pos = 0usize;
    std::iter::from_fn(move || {
        if pos + 8 > payload.len() {
            return None;
        }
        let size = u32::from_be_bytes(payload[pos..pos + 4].try_into().unwrap()) as usize;
        let fourcc: [u8; 4] = payload[pos + 4..pos + 8].try_into().unwrap();
        let (start, end) = match size {
            0 => (pos + 8, payload.len()),
            1 => {
                if pos + 16 > payload.len() {
                    pos = payload.len();
                    return Some(Err(malformed(&fourcc, "truncated large size")));
                }
                let large =
                    u64::from_be_bytes(payload[pos + 8..pos + 16].try_into().unwrap()) as usize;
                (pos + 16, pos.saturating_add(large))
            }
            s => (pos + 8, pos.saturating_add(s)),
        };
        if end > payload.len() || end < start {
            pos = payload.len();
            return Some(Err(malformed(&fourcc, "box overruns its parent")));
        }
        pos = end;
        Some(Ok((fourcc, &payload[start..end])))
    })
}

fn find<'a>(payload: &'a [u8], want: &[u8; 4]) -> Result<Option<&'a [u8]>, Mp4Error> {
    for child in children(payload) {
        let (fourcc, body) = child?;
        if &fourcc == want {
            return Ok(Some(body));
        }
    }
    Ok(None)
}

struct Cursor<'a> {
    fourcc: [u8; 4],
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(fourcc: &[u8; 4], buf: &'a [u8]) -> Self {
        Self {
            fourcc: *fourcc,
            buf,
            pos: 0,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], Mp4Error> {
        if self.pos + n > self.buf.len() {
            return Err(malformed(&self.fourcc, "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn skip(&mut self, n: usize) -> Result<(), Mp4Error> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8, Mp4Error> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, Mp4Error> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, Mp4Error> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, Mp4Error> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

/// Reads the `moov` box of a file and builds per-track sample tables.
pub fn read_movie(path: &Path) -> Result<Movie, Mp4Error> {
    let mut file = BufReader::new(File::open(path)?);
    let mut moov = None;
    let mut saw_ftyp = false;
    while let Some((header, _)) = read_header(&mut file)? {
        match &header.fourcc {
            b"moov" => {
                let len = header
                    .payload_len
                    .ok_or_else(|| malformed(b"moov", "unbounded moov"))?;
                if len > 256 * 1024 * 1024 {
                    return Err(malformed(b"moov", "implausibly large"));
                }
                let mut buf = vec![0u8; len as usize];
                file.read_exact(&mut buf)?;
                moov = Some(buf);
            }
            b"moof" => return Err(Mp4Error::Fragmented),
            other => {
                if other == b"ftyp" {
                    saw_ftyp = true;
                }
                match header.payload_len {
                    Some(len) => {
                        file.seek(SeekFrom::Current(len as i64))?;
                    }
                    None => break,
                }
            }
        }
    }
    if !saw_ftyp {
        return Err(Mp4Error::Missing("ftyp"));
    }
    let moov = moov.ok_or(Mp4Error::Missing("moov"))?;
    parse_moov(&moov)
}

fn parse_moov(moov: &[u8]) -> Result<Movie, Mp4Error> {
    let mvhd = find(moov, b"mvhd")?.ok_or(Mp4Error::Missing("mvhd"))?;
    let mut c = Cursor::new(b"mvhd", mvhd);
    let version = c.u8()?;
    c.skip(3)?;
    let (timescale, duration) = if version == 1 {
        c.skip(16)?;
        (c.u32()?, c.u64()?)
    } else {
        c.skip(8)?;
        (c.u32()?, c.u32()? as u64)
    };
    if find(moov, b"mvex")?.is_some() {
        return Err(Mp4Error::Fragmented);
    }
    let mut tracks = Vec::new();
    for child in children(moov) {
        let (fourcc, body) = child?;
        if &fourcc == b"trak" {
            tracks.push(parse_trak(body)?);
        }
    }
    Ok(Movie {
        timescale,
        duration,
        tracks,
    })
}

fn parse_trak(trak: &[u8]) -> Result<Track, Mp4Error> {
    let tkhd = find(trak, b"tkhd")?.ok_or(Mp4Error::Missing("tkhd"))?;
    let mut c = Cursor::new(b"tkhd", tkhd);
    let version = c.u8()?;
    c.skip(3)?;
    c.skip(if version == 1 { 16 } else { 8 })?;
    let track_id = c.u32()?;

    let mdia = find(trak, b"mdia")?.ok_or(Mp4Error::Missing("mdia"))?;
    let mdhd = find(mdia, b"mdhd")?.ok_or(Mp4Error::Missing("mdhd"))?;
    let mut c = Cursor::new(b"mdhd", mdhd);
    let version = c.u8()?;
    c.skip(3)?;
    let (timescale, duration) = if version == 1 {
        c.skip(16)?;
        (c.u32()?, c.u64()?)
    } else {
        c.skip(8)?;
        (c.u32()?, c.u32()? as u64)
    };
    let hdlr = find(mdia, b"hdlr")?.ok_or(Mp4Error::Missing("hdlr"))?;
    let mut c = Cursor::new(b"hdlr", hdlr);
    c.skip(8)?;
    let handler: [u8; 4] = c.take(4)?.try_into().unwrap();

    let minf = find(mdia, b"minf")?.ok_or(Mp4Error::Missing("minf"))?;
    let stbl = find(minf, b"stbl")?.ok_or(Mp4Error::Missing("stbl"))?;
    let entry = parse_stsd(
        find(stbl, b"stsd")?.ok_or(Mp4Error::Missing("stsd"))?,
        &handler,
    )?;
    let samples = parse_sample_table(stbl)?;
    Ok(Track {
        track_id,
        handler,
        timescale,
        duration,
        entry,
        samples,
    })
}

fn parse_stsd(stsd: &[u8], handler: &[u8; 4]) -> Result<SampleEntry, Mp4Error> {
    let mut c = Cursor::new(b"stsd", stsd);
    c.skip(4)?;
    let count = c.u32()?;
    if count == 0 {
        return Err(malformed(b"stsd", "no sample entries"));
    }
    let (fourcc, body) = children(c.rest())
        .next()
        .ok_or_else(|| malformed(b"stsd", "missing entry"))??;
    match handler {
        b"vide" => {
            let mut e = Cursor::new(&fourcc, body);
            e.skip(6 + 2 + 16)?;
            let width = e.u16()?;
            let height = e.u16()?;
            e.skip(4 + 4 + 4 + 2 + 32 + 2 + 2)?;
            if &fourcc == b"avc1" || &fourcc == b"avc3" {
                let avcc = find(e.rest(), b"avcC")?.ok_or(Mp4Error::Missing("avcC"))?;
                Ok(SampleEntry::Avc {
                    width,
                    height,
                    config: parse_avcc(avcc)?,
                })
            } else {
                Ok(SampleEntry::Visual {
                    fourcc,
                    width,
                    height,
                })
            }
        }
        b"soun" => {
            let mut e = Cursor::new(&fourcc, body);
            e.skip(6 + 2 + 2 + 6)?;
            let channels = e.u16()?;
            e.skip(2 + 4)?;
            let sample_rate = e.u32()? >> 16;
            Ok(SampleEntry::Audio {
                fourcc,
                channels,
                sample_rate,
            })
        }
        _ => Ok(SampleEntry::Other(fourcc)),
    }
}

pub fn parse_avcc(avcc: &[u8]) -> Result<AvcConfig, Mp4Error> {
    let mut c = Cursor::new(b"avcC", avcc);
    c.skip(4)?;
    let nal_length_size = (c.u8()? & 0x03) as usize + 1;
    let num_sps = (c.u8()? & 0x1f) as usize;
    let mut sps = Vec::with_capacity(num_sps);
    for _ in 0..num_sps {
        let len = c.u16()? as usize;
        sps.push(c.take(len)?.to_vec());
    }
    let num_pps = c.u8()? as usize;
    let mut pps = Vec::with_capacity(num_pps);
    for _ in 0..num_pps {
        let len = c.u16()? as usize;
        pps.push(c.take(len)?.to_vec());
    }
    Ok(AvcConfig {
        nal_length_size,
        sps,
        pps,
    })
}

fn parse_sample_table(stbl: &[u8]) -> Result<Vec<SampleInfo>, Mp4Error> {
    // sample sizes
    let stsz = find(stbl, b"stsz")?.ok_or(Mp4Error::Missing("stsz"))?;
    let mut c = Cursor::new(b"stsz", stsz);
    c.skip(4)?;
    let fixed = c.u32()?;
    let count = c.u32()? as usize;
    if count > 50_000_000 {
        return Err(malformed(b"stsz", "implausible sample count"));
    }
    let sizes: Vec<u32> = if fixed != 0 {
        vec![fixed; count]
    } else {
        (0..count).map(|_| c.u32()).collect::<Result<_, _>>()?
    };

    // chunk offsets
    let offsets: Vec<u64> = if let Some(stco) = find(stbl, b"stco")? {
        let mut c = Cursor::new(b"stco", stco);
        c.skip(4)?;
        let n = c.u32()? as usize;
        (0..n)
            .map(|_| c.u32().map(u64::from))
            .collect::<Result<_, _>>()?
    } else if let Some(co64) = find(stbl, b"co64")? {
        let mut c = Cursor::new(b"co64", co64);
        c.skip(4)?;
        let n = c.u32()? as usize;
        (0..n).map(|_| c.u64()).collect::<Result<_, _>>()?
    } else {
        return Err(Mp4Error::Missing("stco"));
    };

    // sample-to-chunk runs
    let stsc = find(stbl, b"stsc")?.ok_or(Mp4Error::Missing("stsc"))?;
    let mut c = Cursor::new(b"stsc", stsc);
    c.skip(4)?;
    let n = c.u32()? as usize;
    let mut runs = Vec::with_capacity(n);
    for _ in 0..n {
        let first_chunk = c.u32()?;
        let per_chunk = c.u32()?;
        c.skip(4)?;
        if first_chunk == 0 {
            return Err(malformed(b"stsc", "chunk numbers start at 1"));
        }
        runs.push((first_chunk as usize - 1, per_chunk as usize));
    }

    let mut sample_offsets = Vec::with_capacity(count);
    'chunks: for (chunk_idx, &chunk_offset) in offsets.iter().enumerate() {
        let per_chunk = runs
            .iter()
            .rev()
            .find(|(first, _)| *first <= chunk_idx)
            .map(|(_, n)| *n)
            .unwrap_or(0);
        let mut pos = chunk_offset;
        for _ in 0..per_chunk {
            let i = sample_offsets.len();
            if i >= count {
                break 'chunks;
            }
            sample_offsets.push(pos);
            pos += sizes[i] as u64;
        }
    }
    if sample_offsets.len() != count {
        return Err(malformed(b"stsc", "chunk map does not cover all samples"));
    }

    // decode times
    let stts = find(stbl, b"stts")?.ok_or(Mp4Error::Missing("stts"))?;
    let mut c = Cursor::new(b"stts", stts);
    c.skip(4)?;
    let n = c.u32()? as usize;
    let mut dts = Vec::with_capacity(count);
    let mut t = 0u64;
    for _ in 0..n {
        let run = c.u32()?;
        let delta = c.u32()? as u64;
        for _ in 0..run {
            if dts.len() == count {
                break;
            }
            dts.push(t);
            t += delta;
        }
    }
    while dts.len() < count {
        dts.push(t);
    }

    let mut cts = vec![0i64; count];
    if let Some(ctts) = find(stbl, b"ctts")? {
        let mut c = Cursor::new(b"ctts", ctts);
        let version = c.u8()?;
        c.skip(3)?;
        let n = c.u32()? as usize;
        let mut i = 0usize;
        for _ in 0..n {
            let run = c.u32()?;
            let raw = c.u32()?;
            let off = if version == 1 {
                raw as i32 as i64
            } else {
                raw as i64
            };
            for _ in 0..run {
                if i < count {
                    cts[i] = off;
                    i += 1;
                }
            }
        }
    }

    let sync: Option<Vec<u32>> = match find(stbl, b"stss")? {
        Some(stss) => {
            let mut c = Cursor::new(b"stss", stss);
            c.skip(4)?;
            let n = c.u32()? as usize;
            Some((0..n).map(|_| c.u32()).collect::<Result<_, _>>()?)
        }
        None => None,
    };

    Ok((0..count)
        .map(|i| SampleInfo {
            offset: sample_offsets[i],
            size: sizes[i],
            dts: dts[i],
            cts_offset: cts[i],
            sync: sync
                .as_ref()
                .is_none_or(|s| s.binary_search(&(i as u32 + 1)).is_ok()),
        })
        .collect())
}

/// Reads sample payloads sequentially from an open file.
pub struct SampleReader {
    file: BufReader<File>,
}

impl SampleReader {
    pub fn open(path: &Path) -> Result<Self, Mp4Error> {
        Ok(Self {
            file: BufReader::new(File::open(path)?),
        })
    }

    pub fn read(&mut self, sample: &SampleInfo, buf: &mut Vec<u8>) -> Result<(), Mp4Error> {
        buf.resize(sample.size as usize, 0);
        self.file.seek(SeekFrom::Start(sample.offset))?;
        self.file.read_exact(buf)?;
        Ok(())
    }
}

/// Converts a length-prefixed AVC sample to Annex-B start-code form.
pub fn avcc_to_annexb(
    sample: &[u8],
    nal_length_size: usize,
    out: &mut Vec<u8>,
) -> Result<(), Mp4Error> {
    let mut pos = 0usize;
    while pos < sample.len() {
        if pos + nal_length_size > sample.len() {
            return Err(malformed(b"avc1", "truncated NAL length"));
        }
        let mut len = 0usize;
        for &b in &sample[pos..pos + nal_length_size] {
            len = (len << 8) | b as usize;
        }
        pos += nal_length_size;
        if pos + len > sample.len() {
            return Err(malformed(b"avc1", "NAL overruns sample"));
        }
        out.extend_from_slice(&[0, 0, 0, 1]);
        out.extend_from_slice(&sample[pos..pos + len]);
        pos += len;
    }
    Ok(())
}

/// Splits an Annex-B byte stream into NAL unit payloads (start codes removed).
pub fn split_annexb(stream: &[u8]) -> Vec<&[u8]> {
    let mut starts = Vec::new();
    let mut i = 0usize;
    while i + 3 <= stream.len() {
        if stream[i] == 0 && stream[i + 1] == 0 && stream[i + 2] == 1 {
            starts.push(i + 3);
            i += 3;
        } else {
            i += 1;
        }
    }
    let mut nals = Vec::with_capacity(starts.len());
    for (k, &s) in starts.iter().enumerate() {
        let mut end = if k + 1 < starts.len() {
            starts[k + 1] - 3
        } else {
            stream.len()
        };
        // a 4-byte start code leaves one extra zero behind
        while end > s && stream[end - 1] == 0 && k + 1 < starts.len() {
            end -= 1;
        }
        if end > s {
            nals.push(&stream[s..end]);
        }
    }
    nals
}

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

fn push_box(out: &mut Vec<u8>, fourcc: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(&((body.len() + 8) as u32).to_be_bytes());
    out.extend_from_slice(fourcc);
    out.extend_from_slice(body);
}

fn boxed(fourcc: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 8);
    push_box(&mut out, fourcc, body);
    out
}

fn full_box(fourcc: &[u8; 4], version: u8, flags: u32, body: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(body.len() + 4);
    b.push(version);
    b.extend_from_slice(&flags.to_be_bytes()[1..]);
    b.extend_from_slice(body);
    boxed(fourcc, &b)
}

const MATRIX: [u32; 9] = [0x0001_0000, 0, 0, 0, 0x0001_0000, 0, 0, 0, 0x4000_0000];

fn matrix_bytes() -> Vec<u8> {
    MATRIX.iter().flat_map(|v| v.to_be_bytes()).collect()
}

/// One track's worth of samples to mux.
pub struct TrackData {
    pub entry: WriteEntry,
    pub timescale: u32,
    /// Samples in decode order with their durations in timescale units.
    pub samples: Vec<(Vec<u8>, u32)>,
    /// Whether each sample is a sync sample; `None` means all are.
    pub sync: Option<Vec<bool>>,
    /// Number of consecutive samples stored per chunk.
    pub samples_per_chunk: usize,
}

pub enum WriteEntry {
    Avc {
        width: u16,
        height: u16,
        config: AvcConfig,
        profile: [u8; 3],
    },
    /// Little-endian signed 16-bit PCM (`sowt`), one sample per PCM frame.
    PcmS16Le { channels: u16, sample_rate: u32 },
}

fn avcc_bytes(config: &AvcConfig, profile: [u8; 3]) -> Vec<u8> {
    let mut b = vec![1, profile[0], profile[1], profile[2]];
    b.push(0xfc | (config.nal_length_size as u8 - 1));
    b.push(0xe0 | config.sps.len() as u8);
    for s in &config.sps {
        b.extend_from_slice(&(s.len() as u16).to_be_bytes());
        b.extend_from_slice(s);
    }
    b.push(config.pps.len() as u8);
    for p in &config.pps {
        b.extend_from_slice(&(p.len() as u16).to_be_bytes());
        b.extend_from_slice(p);
    }
    boxed(b"avcC", &b)
}

fn stsd_entry(entry: &WriteEntry) -> Vec<u8> {
    match entry {
        WriteEntry::Avc {
            width,
            height,
            config,
            profile,
        } => {
            let mut b = vec![0u8; 6];
            b.extend_from_slice(&1u16.to_be_bytes());
            b.extend_from_slice(&[0u8; 16]);
            b.extend_from_slice(&width.to_be_bytes());
            b.extend_from_slice(&height.to_be_bytes());
            b.extend_from_slice(&0x0048_0000u32.to_be_bytes());
            b.extend_from_slice(&0x0048_0000u32.to_be_bytes());
            b.extend_from_slice(&0u32.to_be_bytes());
            b.extend_from_slice(&1u16.to_be_bytes());
            b.extend_from_slice(&[0u8; 32]);
            b.extend_from_slice(&0x0018u16.to_be_bytes());
            b.extend_from_slice(&0xffffu16.to_be_bytes());
            b.extend_from_slice(&avcc_bytes(config, *profile));
            boxed(b"avc1", &b)
        }
        WriteEntry::PcmS16Le {
            channels,
            sample_rate,
        } => {
            let mut b = vec![0u8; 6];
            b.extend_from_slice(&1u16.to_be_bytes());
            b.extend_from_slice(&[0u8; 8]);
            b.extend_from_slice(&channels.to_be_bytes());
            b.extend_from_slice(&16u16.to_be_bytes());
            b.extend_from_slice(&[0u8; 4]);
            b.extend_from_slice(&(sample_rate << 16).to_be_bytes());
            boxed(b"sowt", &b)
        }
    }
}

fn trak_box(
    track_id: u32,
    track: &TrackData,
    chunk_offsets: &[u64],
    movie_timescale: u32,
) -> Vec<u8> {
    let media_duration: u64 = track.samples.iter().map(|(_, d)| *d as u64).sum();
    let movie_duration = media_duration * movie_timescale as u64 / track.timescale.max(1) as u64;
    let is_video = matches!(track.entry, WriteEntry::Avc { .. });

    let mut tkhd = Vec::new();
    tkhd.extend_from_slice(&[0u8; 8]);
    tkhd.extend_from_slice(&track_id.to_be_bytes());
    tkhd.extend_from_slice(&[0u8; 4]);
    tkhd.extend_from_slice(&(movie_duration as u32).to_be_bytes());
    tkhd.extend_from_slice(&[0u8; 8]);
    tkhd.extend_from_slice(&[0u8; 4]);
    tkhd.extend_from_slice(&(if is_video { 0u16 } else { 0x0100 }).to_be_bytes());
    tkhd.extend_from_slice(&[0u8; 2]);
    tkhd.extend_from_slice(&matrix_bytes());
    let (w, h) = match &track.entry {
        WriteEntry::Avc { width, height, .. } => (*width as u32, *height as u32),
        WriteEntry::PcmS16Le { .. } => (0, 0),
    };
    tkhd.extend_from_slice(&(w << 16).to_be_bytes());
    tkhd.extend_from_slice(&(h << 16).to_be_bytes());

    let mut mdhd = Vec::new();
    mdhd.extend_from_slice(&[0u8; 8]);
    mdhd.extend_from_slice(&track.timescale.to_be_bytes());
    mdhd.extend_from_slice(&(media_duration as u32).to_be_bytes());
    mdhd.extend_from_slice(&0x55c4u16.to_be_bytes());
    mdhd.extend_from_slice(&[0u8; 2]);

    let mut hdlr = vec![0u8; 4];
    hdlr.extend_from_slice(if is_video { b"vide" } else { b"soun" });
    hdlr.extend_from_slice(&[0u8; 12]);
    hdlr.extend_from_slice(if is_video {
        b"VideoHandler\0"
    } else {
        b"SoundHandler\0"
    });

    let media_header = if is_video {
        full_box(b"vmhd", 0, 1, &[0u8; 8])
    } else {
        full_box(b"smhd", 0, 0, &[0u8; 4])
    };
    let dref = full_box(
        b"dref",
        0,
        0,
        &[&1u32.to_be_bytes()[..], &full_box(b"url ", 0, 1, &[])].concat(),
    );
    let dinf = boxed(b"dinf", &dref);

    let mut stsd = 1u32.to_be_bytes().to_vec();
    stsd.extend_from_slice(&stsd_entry(&track.entry));

    let mut stts_runs: Vec<(u32, u32)> = Vec::new();
    for (_, d) in &track.samples {
        match stts_runs.last_mut() {
            Some((n, delta)) if *delta == *d => *n += 1,
            _ => stts_runs.push((1, *d)),
        }
    }
    let mut stts = (stts_runs.len() as u32).to_be_bytes().to_vec();
    for (n, d) in &stts_runs {
        stts.extend_from_slice(&n.to_be_bytes());
        stts.extend_from_slice(&d.to_be_bytes());
    }

    let per_chunk = track.samples_per_chunk.max(1);
    let n_samples = track.samples.len();
    let mut stsc_runs: Vec<(u32, u32)> = Vec::new();
    for (chunk_idx, start) in (0..n_samples).step_by(per_chunk).enumerate() {
        let n = (n_samples - start).min(per_chunk) as u32;
        if stsc_runs.last().map(|(_, m)| *m) != Some(n) {
            stsc_runs.push((chunk_idx as u32 + 1, n));
        }
    }
    let mut stsc = (stsc_runs.len() as u32).to_be_bytes().to_vec();
    for (first, n) in &stsc_runs {
        stsc.extend_from_slice(&first.to_be_bytes());
        stsc.extend_from_slice(&n.to_be_bytes());
        stsc.extend_from_slice(&1u32.to_be_bytes());
    }

    let sizes: Vec<u32> = track.samples.iter().map(|(b, _)| b.len() as u32).collect();
    let mut stsz = Vec::new();
    if !sizes.is_empty() && sizes.iter().all(|s| *s == sizes[0]) {
        stsz.extend_from_slice(&sizes[0].to_be_bytes());
        stsz.extend_from_slice(&(n_samples as u32).to_be_bytes());
    } else {
        stsz.extend_from_slice(&0u32.to_be_bytes());
        stsz.extend_from_slice(&(n_samples as u32).to_be_bytes());
        for s in &sizes {
            stsz.extend_from_slice(&s.to_be_bytes());
        }
    }

    let mut co64 = (chunk_offsets.len() as u32).to_be_bytes().to_vec();
    for off in chunk_offsets {
        co64.extend_from_slice(&off.to_be_bytes());
    }

    let mut stbl = Vec::new();
    stbl.extend_from_slice(&full_box(b"stsd", 0, 0, &stsd));
    stbl.extend_from_slice(&full_box(b"stts", 0, 0, &stts));
    stbl.extend_from_slice(&full_box(b"stsc", 0, 0, &stsc));
    stbl.extend_from_slice(&full_box(b"stsz", 0, 0, &stsz));
    stbl.extend_from_slice(&full_box(b"co64", 0, 0, &co64));
    if let Some(sync) = &track.sync {
        let idx: Vec<u32> = sync
            .iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(i, _)| i as u32 + 1)
            .collect();
        let mut stss = (idx.len() as u32).to_be_bytes().to_vec();
        for i in idx {
            stss.extend_from_slice(&i.to_be_bytes());
        }
        stbl.extend_from_slice(&full_box(b"stss", 0, 0, &stss));
    }

    let minf = [media_header, dinf, boxed(b"stbl", &stbl)].concat();
    let mdia = [
        full_box(b"mdhd", 0, 0, &mdhd),
        full_box(b"hdlr", 0, 0, &hdlr),
        boxed(b"minf", &minf),
    ]
    .concat();
    boxed(
        b"trak",
        &[full_box(b"tkhd", 0, 3, &tkhd), boxed(b"mdia", &mdia)].concat(),
    )
}

/// Serializes tracks into a complete progressive MP4 file (`ftyp`, `mdat`, `moov`).
pub fn write_movie(tracks: &[TrackData]) -> Vec<u8> {
    const MOVIE_TIMESCALE: u32 = 1000;
    let mut ftyp = Vec::new();
    ftyp.extend_from_slice(b"isom");
    ftyp.extend_from_slice(&0x200u32.to_be_bytes());
    for brand in [b"isom", b"iso2", b"avc1", b"mp41"] {
        ftyp.extend_from_slice(brand);
    }
    let mut out = boxed(b"ftyp", &ftyp);

    let payload_len: usize = tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(|(b, _)| b.len()))
        .sum();
    // mdat with a 64-bit size so offsets stay valid for any payload size
    out.extend_from_slice(&1u32.to_be_bytes());
    out.extend_from_slice(b"mdat");
    out.extend_from_slice(&((payload_len + 16) as u64).to_be_bytes());

    let mut chunk_offsets: Vec<Vec<u64>> = Vec::with_capacity(tracks.len());
    for t in tracks {
        let mut offsets = Vec::new();
        for (i, (bytes, _)) in t.samples.iter().enumerate() {
            if i % t.samples_per_chunk.max(1) == 0 {
                offsets.push(out.len() as u64);
            }
            out.extend_from_slice(bytes);
        }
        chunk_offsets.push(offsets);
    }

    let duration = tracks
        .iter()
        .map(|t| {
            let d: u64 = t.samples.iter().map(|(_, d)| *d as u64).sum();
            d * MOVIE_TIMESCALE as u64 / t.timescale.max(1) as u64
        })
        .max()
        .unwrap_or(0);
    let mut mvhd = Vec::new();
    mvhd.extend_from_slice(&[0u8; 8]);
    mvhd.extend_from_slice(&MOVIE_TIMESCALE.to_be_bytes());
    mvhd.extend_from_slice(&(duration as u32).to_be_bytes());
    mvhd.extend_from_slice(&0x0001_0000u32.to_be_bytes());
    mvhd.extend_from_slice(&0x0100u16.to_be_bytes());
    mvhd.extend_from_slice(&[0u8; 10]);
    mvhd.extend_from_slice(&matrix_bytes());
    mvhd.extend_from_slice(&[0u8; 24]);
    mvhd.extend_from_slice(&(tracks.len() as u32 + 1).to_be_bytes());

    let mut moov = full_box(b"mvhd", 0, 0, &mvhd);
    for (i, t) in tracks.iter().enumerate() {
        moov.extend_from_slice(&trak_box(
            i as u32 + 1,
            t,
            &chunk_offsets[i],
            MOVIE_TIMESCALE,
        ));
    }
    push_box(&mut out, b"moov", &moov);
    out
}
