//! Raw video frame sources: packed 8-bit RGB, frame-major, described by a
//! TOML sidecar.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PIXEL_FORMAT: &str = "rgb24";

/// Sidecar describing a raw frame file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub fps: u32,
    pub frame_count: usize,
    #[serde(default = "default_format")]
    pub pixel_format: String,
}

fn default_format() -> String {
    PIXEL_FORMAT.to_string()
}

impl FrameDescriptor {
    pub fn frame_bytes(&self) -> usize {
        self.width * self.height * 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixel_format != PIXEL_FORMAT {
            return Err(Error::Frames {
                offset: 0,
                reason: format!(
                    "pixel format `{}`, only `{PIXEL_FORMAT}` is supported",
                    self.pixel_format
                ),
            });
        }
        if self.width == 0 || self.height == 0 || self.fps == 0 {
            return Err(Error::Frames {
                offset: 0,
                reason: format!(
                    "degenerate descriptor {}x{} at {} fps",
                    self.width, self.height, self.fps
                ),
            });
        }
        Ok(())
    }

    /// Reads a sidecar; a relative `path` resolves against the sidecar's
    /// directory.
    pub fn load(sidecar: impl AsRef<Path>) -> Result<Self> {
        let sidecar = sidecar.as_ref();
        let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let mut d: FrameDescriptor = toml::from_str(&text).map_err(|e| Error::Parse {
            path: sidecar.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        if d.path.is_relative() {
            if let Some(dir) = sidecar.parent() {
                d.path = dir.join(&d.path);
            }
        }
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, sidecar: impl AsRef<Path>) -> Result<()> {
        let sidecar = sidecar.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))
    }
}

/// A run of consecutive RGB frames, interleaved `frame x row x col x rgb`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub data: Vec<u8>,
}

impl FrameStack {
    pub fn new(width: usize, height: usize, frames: usize) -> Self {
        Self {
            width,
            height,
            frames,
            data: vec![0; width * height * 3 * frames],
        }
    }

    pub fn frame(&self, k: usize) -> &[u8] {
        let n = self.width * self.height * 3;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [u8] {
        let n = self.width * self.height * 3;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn pixel(&self, k: usize, y: usize, x: usize) -> [u8; 3] {
        let i = ((k * self.height + y) * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Anything that can hand out consecutive frames.
pub trait FrameSource {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn fps(&self) -> u32;
    fn frame_count(&self) -> usize;
    /// Reads frames `start..start + count` into `out`, reusing its buffer.
    fn read_into(&mut self, start: usize, count: usize, out: &mut FrameStack) -> Result<()>;

    fn read_frames(&mut self, start: usize, count: usize) -> Result<FrameStack> {
        let mut out = FrameStack::default();
        self.read_into(start, count, &mut out)?;
        Ok(out)
    }
}

/// File-backed source. Each worker opens its own handle.
#[derive(Debug)]
pub struct RawVideo {
    desc: FrameDescriptor,
    file: File,
}

impl RawVideo {
    pub fn open(desc: &FrameDescriptor) -> Result<Self> {
        desc.validate()?;
        let file = File::open(&desc.path).map_err(|e| Error::io(&desc.path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&desc.path, e))?.len();
        let want = (desc.frame_bytes() * desc.frame_count) as u64;
        if len < want {
            return Err(Error::Frames {
                offset: len,
                reason: format!(
                    "file ends at byte {len}, descriptor needs {want} ({} frames of {} bytes)",
                    desc.frame_count,
                    desc.frame_bytes()
                ),
            });
        }
        Ok(Self {
            desc: desc.clone(),
            file,
        })
    }

    pub fn descriptor(&self) -> &FrameDescriptor {
        &self.desc
    }

    pub fn frame_offset(&self, k: usize) -> u64 {
        (k * self.desc.frame_bytes()) as u64
    }
}

impl FrameSource for RawVideo {
    fn width(&self) -> usize {
        self.desc.width
    }
    fn height(&self) -> usize {
        self.desc.height
    }
    fn fps(&self) -> u32 {
        self.desc.fps
    }
    fn frame_count(&self) -> usize {
        self.desc.frame_count
    }

    fn read_into(&mut self, start: usize, count: usize, out: &mut FrameStack) -> Result<()> {
        if start + count > self.desc.frame_count {
            return Err(Error::Frames {
                offset: self.frame_offset(start + count),
                reason: format!(
                    "frames {start}..{} beyond frame count {}",
                    start + count,
                    self.desc.frame_count
                ),
            });
        }
        out.width = self.desc.width;
        out.height = self.desc.height;
        out.frames = count;
        out.data.resize(self.desc.frame_bytes() * count, 0);
        let offset = self.frame_offset(start);
        self.file
            .seek(SeekFrom::Start(offset))
            .and_then(|_| self.file.read_exact(&mut out.data))
            .map_err(|e| Error::Frames {
                offset,
                reason: e.to_string(),
            })
    }
}

/// In-memory source, mostly for tests and small synthetic sessions.
#[derive(Debug, Clone)]
pub struct MemoryFrames {
    pub stack: FrameStack,
    pub fps: u32,
}

impl FrameSource for MemoryFrames {
    fn width(&self) -> usize {
        self.stack.width
    }
    fn height(&self) -> usize {
        self.stack.height
    }
    fn fps(&self) -> u32 {
        self.fps
    }
    fn frame_count(&self) -> usize {
        self.stack.frames
    }

    fn read_into(&mut self, start: usize, count: usize, out: &mut FrameStack) -> Result<()> {
        let n = self.stack.width * self.stack.height * 3;
        if start + count > self.stack.frames {
            return Err(Error::Frames {
                offset: ((start + count) * n) as u64,
                reason: format!(
                    "frames {start}..{} beyond frame count {}",
                    start + count,
                    self.stack.frames
                ),
            });
        }
        out.width = self.stack.width;
        out.height = self.stack.height;
        out.frames = count;
        out.data.clear();
        out.data
            .extend_from_slice(&self.stack.data[start * n..(start + count) * n]);
        Ok(())
    }
}

/// Streams frames to a raw file and writes the sidecar on `finish`.
pub struct RawVideoWriter {
    desc: FrameDescriptor,
    out: std::io::BufWriter<File>,
    written: usize,
}

impl RawVideoWriter {
    pub fn create(path: impl AsRef<Path>, width: usize, height: usize, fps: u32) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            desc: FrameDescriptor {
                path: path.to_path_buf(),
                width,
                height,
                fps,
                frame_count: 0,
                pixel_format: default_format(),
            },
            out: std::io::BufWriter::new(file),
            written: 0,
        })
    }

    pub fn push(&mut self, frame: &[u8]) -> Result<()> {
        if frame.len() != self.desc.frame_bytes() {
            return Err(Error::shape(
                "frame bytes",
                self.desc.frame_bytes(),
                frame.len(),
            ));
        }
        self.out
            .write_all(frame)
            .map_err(|e| Error::io(&self.desc.path, e))?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and writes the sidecar; returns the descriptor.
    pub fn finish(mut self, sidecar: impl AsRef<Path>) -> Result<FrameDescriptor> {
        self.out
            .flush()
            .map_err(|e| Error::io(&self.desc.path, e))?;
        self.desc.frame_count = self.written;
        let sidecar = sidecar.as_ref();
        let mut stored = self.desc.clone();
        // Keep the pair relocatable when both files share a directory.
        if stored.path.parent() == sidecar.parent() {
            if let Some(name) = stored.path.file_name() {
                stored.path = PathBuf::from(name);
            }
        }
        stored.save(sidecar)?;
        Ok(self.desc)
    }
}
