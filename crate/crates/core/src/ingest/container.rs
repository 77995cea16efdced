//! Binary window-prediction container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "LASR" | version u32 | window index u32 | start frame u32
//! | frame count u32 | H u32 | W u32
//! per frame:
//!   rotation 9 x f64 (row-major) | translation 3 x f64
//!   | points H*W*3 x f32 (x,y,z interleaved, row-major)
//!   | confidence H*W x f32 | validity H*W x u8
//! trailer: CRC32 (IEEE) of all preceding bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{rotation_from_matrix, ConfidenceMap, PointMap, RigidPose};
use crate::windowing::WindowSpec;

use super::{FramePrediction, WindowPrediction};

pub const CONTAINER_MAGIC: [u8; 4] = *b"LASR";
pub const CONTAINER_VERSION: u32 = 1;

/// Parsed fixed-size header of a container file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u32,
    pub window_index: u32,
    pub start_frame: u32,
    pub frame_count: u32,
    pub height: u32,
    pub width: u32,
}

impl ContainerHeader {
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            index: self.window_index as usize,
            start: self.start_frame as usize,
            len: self.frame_count as usize,
        }
    }

    /// Total file size implied by the header, checksum included.
    pub fn expected_file_len(&self) -> u64 {
        let px = self.height as u64 * self.width as u64;
        let per_frame = 9 * 8 + 3 * 8 + px * 12 + px * 4 + px;
        28 + self.frame_count as u64 * per_frame + 4
    }
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    fn write_all(&mut self, buf: &[u8], path: &Path) -> Result<()> {
        self.hasher.update(buf);
        self.inner
            .write_all(buf)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    fn crc(&self) -> u32 {
        self.hasher.clone().finalize()
    }
}

struct TrackingReader<R: Read> {
    inner: R,
    hasher: crc32fast::Hasher,
    offset: u64,
    path: PathBuf,
}

impl<R: Read> TrackingReader<R> {
    fn new(inner: R, path: &Path) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
            offset: 0,
            path: path.to_path_buf(),
        }
    }

    /// Reads exactly `buf.len()` hashed bytes; a short read becomes a
    /// truncation error naming `what` and the current byte offset.
    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        path: self.path.clone(),
                        offset: self.offset + filled as u64,
                        what: what.to_string(),
                    })
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::io(format!("reading {}", self.path.display()), e)),
            }
        }
        self.hasher.update(buf);
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.read_exact(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn crc(&self) -> u32 {
        self.hasher.clone().finalize()
    }
}

/// Writes one window's prediction to `path` in the container format.
pub fn write_window_predictions(pred: &WindowPrediction, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = HashingWriter::new(BufWriter::new(file));
    let spec = pred.window();

    w.write_all(&CONTAINER_MAGIC, path)?;
    for v in [
        CONTAINER_VERSION,
        spec.index as u32,
        spec.start as u32,
        spec.len as u32,
        pred.height() as u32,
        pred.width() as u32,
    ] {
        w.write_all(&v.to_le_bytes(), path)?;
    }

    let px = pred.height() * pred.width();
    let mut buf: Vec<u8> = Vec::with_capacity(px * 12);
    for frame in pred.frames() {
        let rot = frame.pose.rotation.matrix();
        for r in 0..3 {
            for c in 0..3 {
                w.write_all(&rot[(r, c)].to_le_bytes(), path)?;
            }
        }
        for c in 0..3 {
            w.write_all(&frame.pose.translation[c].to_le_bytes(), path)?;
        }

        buf.clear();
        for p in frame.pointmap.raw_points() {
            for c in p {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        w.write_all(&buf, path)?;

        buf.clear();
        for v in frame.confidence.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf, path)?;

        buf.clear();
        buf.extend(frame.pointmap.validity().iter().map(|&v| v as u8));
        w.write_all(&buf, path)?;
    }

    let crc = w.crc();
    w.inner
        .write_all(&crc.to_le_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    w.inner
        .flush()
        .map_err(|e| Error::io(format!("flushing {}", path.display()), e))?;
    Ok(())
}

fn read_header<R: Read>(r: &mut TrackingReader<R>, path: &Path) -> Result<ContainerHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("bad magic {magic:02x?}, expected {CONTAINER_MAGIC:02x?}"),
        });
    }
    let version = r.read_u32("format version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("unsupported version {version}, expected {CONTAINER_VERSION}"),
        });
    }
    let header = ContainerHeader {
        version,
        window_index: r.read_u32("window index")?,
        start_frame: r.read_u32("start frame")?,
        frame_count: r.read_u32("frame count")?,
        height: r.read_u32("height")?,
        width: r.read_u32("width")?,
    };
    if header.frame_count == 0 || header.height == 0 || header.width == 0 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!(
                "degenerate dimensions: {} frames of {}x{}",
                header.frame_count, header.height, header.width
            ),
        });
    }
    Ok(header)
}

fn read_body<R: Read>(
    r: &mut TrackingReader<R>,
    header: &ContainerHeader,
    path: &Path,
) -> Result<WindowPrediction> {
    let h = header.height as usize;
    let w = header.width as usize;
    let px = h * w;
    let mut frames = Vec::with_capacity(header.frame_count as usize);
    for fi in 0..header.frame_count {
        let rot_vals = r.read_f64s(9, &format!("frame {fi} rotation"))?;
        let trans = r.read_f64s(3, &format!("frame {fi} translation"))?;
        let rot_mat = Matrix3::from_row_slice(&rot_vals);
        let rotation = rotation_from_matrix(&rot_mat).map_err(|e| Error::InvalidPayload {
            path: path.to_path_buf(),
            reason: format!("frame {fi}: {e}"),
        })?;
        let pose = RigidPose::new(rotation, Vector3::new(trans[0], trans[1], trans[2]));

        let mut bytes = vec![0u8; px * 12];
        r.read_exact(&mut bytes, &format!("frame {fi} pointmap"))?;
        let points: Vec<[f32; 3]> = bytes
            .chunks_exact(12)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    f32::from_le_bytes(c[8..12].try_into().unwrap()),
                ]
            })
            .collect();

        let mut conf_bytes = vec![0u8; px * 4];
        r.read_exact(&mut conf_bytes, &format!("frame {fi} confidence"))?;
        let conf: Vec<f32> = conf_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut valid_bytes = vec![0u8; px];
        r.read_exact(&mut valid_bytes, &format!("frame {fi} validity"))?;
        let valid: Vec<bool> = valid_bytes.iter().map(|&b| b != 0).collect();

        let pointmap = PointMap::new(h, w, points, valid).map_err(|e| Error::InvalidPayload {
            path: path.to_path_buf(),
            reason: format!("frame {fi}: {e}"),
        })?;
        let confidence =
            ConfidenceMap::new(h, w, conf).map_err(|e| Error::InvalidPayload {
                path: path.to_path_buf(),
                reason: format!("frame {fi}: {e}"),
            })?;
        frames.push(FramePrediction {
            pointmap,
            pose,
            confidence,
        });
    }

    let computed = r.crc();
    let mut crc_bytes = [0u8; 4];
    // The stored checksum is not part of its own hash; read it unhashed.
    let mut filled = 0;
    while filled < 4 {
        match r.inner.read(&mut crc_bytes[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    offset: r.offset + filled as u64,
                    what: "checksum".into(),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
        }
    }
    let stored = u32::from_le_bytes(crc_bytes);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let mut tail = [0u8; 1];
    if matches!(r.inner.read(&mut tail), Ok(n) if n > 0) {
        return Err(Error::InvalidPayload {
            path: path.to_path_buf(),
            reason: "trailing data after checksum".into(),
        });
    }

    WindowPrediction::new(header.window_spec(), frames).map_err(|e| Error::InvalidPayload {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads a container and checks that its declared window matches `window`.
pub fn read_window_predictions(path: &Path, window: &WindowSpec) -> Result<WindowPrediction> {
    let pred = read_window_predictions_any(path)?;
    if pred.window() != window {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            reason: format!(
                "file declares window index={} start={} len={}, expected index={} start={} len={}",
                pred.window().index,
                pred.window().start,
                pred.window().len,
                window.index,
                window.start,
                window.len
            ),
        });
    }
    Ok(pred)
}

/// Reads a container, taking the window declaration from the file itself.
pub fn read_window_predictions_any(path: &Path) -> Result<WindowPrediction> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut r = TrackingReader::new(BufReader::new(file), path);
    let header = read_header(&mut r, path)?;
    read_body(&mut r, &header, path)
}

/// Header-only read used by directory scans and `inspect`.
pub fn inspect_container(path: &Path) -> Result<ContainerHeader> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut r = TrackingReader::new(BufReader::new(file), path);
    read_header(&mut r, path)
}
