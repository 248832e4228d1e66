use std::fmt::Write as _;
use std::path::Path;

use image::{ImageBuffer, Luma};

use super::Indicator;
use crate::checkpoint::Container;
use crate::error::{Error, Result};

/// Per-pixel state of a normal prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MaskState {
    Untested = 0,
    Accepted = 1,
    /// Absorbing: the prior is never used again.
    Rejected = 2,
}

impl MaskState {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(MaskState::Untested),
            1 => Some(MaskState::Accepted),
            2 => Some(MaskState::Rejected),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskState::Untested => "untested",
            MaskState::Accepted => "accepted",
            MaskState::Rejected => "rejected",
        }
    }
}

/// Accept/reject state of every prior pixel of every view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorMask {
    sizes: Vec<(usize, usize)>,
    states: Vec<Vec<MaskState>>,
    rejected: usize,
}

impl PriorMask {
    /// All-untested mask for views of the given `(width, height)`.
    pub fn new(sizes: &[(usize, usize)]) -> Self {
        PriorMask {
            sizes: sizes.to_vec(),
            states: sizes.iter().map(|(w, h)| vec![MaskState::Untested; w * h]).collect(),
            rejected: 0,
        }
    }

    pub fn view_count(&self) -> usize {
        self.states.len()
    }

    pub fn size(&self, view: usize) -> (usize, usize) {
        self.sizes[view]
    }

    pub fn get(&self, view: usize, pixel: usize) -> MaskState {
        self.states[view][pixel]
    }

    pub fn view_states(&self, view: usize) -> &[MaskState] {
        &self.states[view]
    }

    /// Ω for the prior loss: 0 once rejected, 1 otherwise.
    pub fn omega(&self, view: usize, pixel: usize) -> f64 {
        if self.states[view][pixel] == MaskState::Rejected {
            0.0
        } else {
            1.0
        }
    }

    pub fn rejected_count(&self) -> usize {
        self.rejected
    }

    /// Counts of (untested, accepted, rejected) pixels.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for s in self.states.iter().flatten() {
            match s {
                MaskState::Untested => c.0 += 1,
                MaskState::Accepted => c.1 += 1,
                MaskState::Rejected => c.2 += 1,
            }
        }
        c
    }

    /// Applies a check result: a failure rejects, a pass accepts unless
    /// already rejected, an untestable pixel keeps its state.
    pub fn update(&mut self, view: usize, pixel: usize, indicator: Indicator) -> MaskState {
        let cur = self.states[view][pixel];
        let next = match (cur, indicator) {
            (MaskState::Rejected, _) => MaskState::Rejected,
            (_, Indicator::Fail) => MaskState::Rejected,
            (_, Indicator::Pass) => MaskState::Accepted,
            (s, Indicator::Untestable) => s,
        };
        if next == MaskState::Rejected && cur != MaskState::Rejected {
            self.rejected += 1;
        }
        self.states[view][pixel] = next;
        next
    }

    /// Sets a state directly. Leaving `Rejected` is a contract violation.
    pub fn set(&mut self, view: usize, pixel: usize, state: MaskState) -> Result<()> {
        let cur = self.states[view][pixel];
        if cur == MaskState::Rejected && state != MaskState::Rejected {
            return Err(Error::Contract(format!(
                "view {view} pixel {pixel}: rejected priors cannot be restored"
            )));
        }
        if cur != MaskState::Rejected && state == MaskState::Rejected {
            self.rejected += 1;
        }
        self.states[view][pixel] = state;
        Ok(())
    }

    pub fn store(&self, c: &mut Container) {
        let sizes: Vec<u64> = self.sizes.iter().flat_map(|(w, h)| [*w as u64, *h as u64]).collect();
        c.put_floats("mask.sizes", &sizes.iter().map(|v| *v as f64).collect::<Vec<_>>());
        let bytes: Vec<u8> = self.states.iter().flatten().map(|s| *s as u8).collect();
        c.put_bytes("mask.states", &bytes);
    }

    pub fn load(c: &Container) -> Result<Self> {
        let sizes: Vec<f64> = c.floats("mask.sizes")?;
        if !sizes.len().is_multiple_of(2) {
            return Err(Error::Checkpoint("mask sizes are not (width, height) pairs".into()));
        }
        let sizes: Vec<(usize, usize)> = sizes.chunks_exact(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
        let bytes = c.bytes("mask.states")?;
        let total: usize = sizes.iter().map(|(w, h)| w * h).sum();
        if bytes.len() != total {
            return Err(Error::Checkpoint(format!(
                "mask has {} states, expected {total}",
                bytes.len()
            )));
        }
        let mut mask = PriorMask::new(&sizes);
        let mut offset = 0;
        for (v, (w, h)) in sizes.iter().enumerate() {
            for p in 0..w * h {
                let s = MaskState::from_u8(bytes[offset + p])
                    .ok_or_else(|| Error::Checkpoint(format!("invalid mask state {}", bytes[offset + p])))?;
                mask.states[v][p] = s;
                if s == MaskState::Rejected {
                    mask.rejected += 1;
                }
            }
            offset += w * h;
        }
        Ok(mask)
    }

    /// Grayscale image of one view: untested gray, accepted white, rejected black.
    pub fn write_image(&self, view: usize, path: &Path) -> Result<()> {
        let (w, h) = self.sizes[view];
        let px: Vec<u8> = self.states[view]
            .iter()
            .map(|s| match s {
                MaskState::Untested => 128,
                MaskState::Accepted => 255,
                MaskState::Rejected => 0,
            })
            .collect();
        let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w as u32, h as u32, px).expect("mask size");
        img.save(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })
    }

    /// `view,untested,accepted,rejected` rows.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("view,untested,accepted,rejected\n");
        for (v, states) in self.states.iter().enumerate() {
            let count = |t: MaskState| states.iter().filter(|x| **x == t).count();
            let _ = writeln!(
                s,
                "{v},{},{},{}",
                count(MaskState::Untested),
                count(MaskState::Accepted),
                count(MaskState::Rejected)
            );
        }
        s
    }
}
