//! Deterministic content/style data: synthetic generators and image folders.
//!
//! Train and test splits never share a sample. Synthetic samples are keyed by
//! a global id whose low bit is the split; folder files are sorted and the
//! trailing tenth of each list is held out for testing.

mod folder;
mod synth;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use folder::{decode_image_file, decode_image_native, write_image};
pub use synth::{synth_content, synth_style};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

/// Number of distinct synthetic test images per domain.
pub const SYNTH_TEST_CONTENTS: usize = 40;
pub const SYNTH_TEST_STYLES: usize = 100;

/// Global synthetic sample id for `index` within `split`.
pub fn synthetic_id(split: Split, index: u64) -> u64 {
    2 * index + u64::from(split == Split::Test)
}

#[derive(Debug)]
enum Source {
    Synthetic { seed: u64 },
    Folder { root: PathBuf, train: Pool, test: Pool },
}

#[derive(Debug, Default)]
struct Pool {
    contents: Vec<(String, Tensor)>,
    styles: Vec<(String, Tensor)>,
}

/// A content/style image source with fixed train/test partition.
#[derive(Debug, Clone)]
pub struct Dataset {
    source: Arc<Source>,
    size: usize,
}

impl Dataset {
    pub fn synthetic(seed: u64, size: usize) -> Result<Self> {
        check_size(size)?;
        Ok(Dataset { source: Arc::new(Source::Synthetic { seed }), size })
    }

    /// Reads `<root>/content/*` and `<root>/style/*`. Undecodable files are
    /// skipped with a warning.
    pub fn load_image_folder(root: impl AsRef<Path>, size: usize) -> Result<Self> {
        check_size(size)?;
        let root = root.as_ref().to_path_buf();
        let contents = folder::load_dir(&root.join("content"), size)?;
        let styles = folder::load_dir(&root.join("style"), size)?;
        if contents.is_empty() || styles.is_empty() {
            return Err(Error::EmptyFolder(root));
        }
        let (ctrain, ctest) = folder::split_files(contents);
        let (strain, stest) = folder::split_files(styles);
        let source = Source::Folder {
            root,
            train: Pool { contents: ctrain, styles: strain },
            test: Pool { contents: ctest, styles: stest },
        };
        Ok(Dataset { source: Arc::new(source), size })
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn describe(&self) -> String {
        match &*self.source {
            Source::Synthetic { seed } => format!("synthetic(seed={seed})"),
            Source::Folder { root, .. } => root.display().to_string(),
        }
    }

    pub fn stream(&self, split: Split, seed: u64) -> DatasetStream {
        DatasetStream { dataset: self.clone(), split, seed, cursor: 0 }
    }

    /// Sample identifiers of a split, for disjointness audits. Synthetic ids
    /// cover the first `limit` draws; folder ids are file names.
    pub fn split_ids(&self, split: Split, limit: usize) -> Vec<String> {
        match &*self.source {
            Source::Synthetic { .. } => (0..limit as u64).map(|i| synthetic_id(split, i).to_string()).collect(),
            Source::Folder { train, test, .. } => {
                let pool = if split == Split::Train { train } else { test };
                pool.contents
                    .iter()
                    .map(|(n, _)| format!("content/{n}"))
                    .chain(pool.styles.iter().map(|(n, _)| format!("style/{n}")))
                    .collect()
            }
        }
    }

    /// Held-out evaluation pairs: every test content crossed with every test
    /// style, shuffled under `seed` and truncated to `count`.
    pub fn test_pairs(&self, count: usize, seed: u64) -> Result<Vec<(Tensor, Tensor)>> {
        let (nc, ns) = match &*self.source {
            Source::Synthetic { .. } => (SYNTH_TEST_CONTENTS, SYNTH_TEST_STYLES),
            Source::Folder { test, .. } => (test.contents.len(), test.styles.len()),
        };
        let mut combos: Vec<(usize, usize)> = (0..nc).flat_map(|c| (0..ns).map(move |s| (c, s))).collect();
        combos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        combos.truncate(count);
        if combos.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        Ok(combos
            .into_iter()
            .map(|(c, s)| {
                (self.image(Split::Test, Domain::Content, c as u64), self.image(Split::Test, Domain::Style, s as u64))
            })
            .collect())
    }

    fn pool_len(&self, split: Split, domain: Domain) -> Option<usize> {
        match &*self.source {
            Source::Synthetic { .. } => None,
            Source::Folder { train, test, .. } => {
                let pool = if split == Split::Train { train } else { test };
                Some(match domain {
                    Domain::Content => pool.contents.len(),
                    Domain::Style => pool.styles.len(),
                })
            }
        }
    }

    fn image(&self, split: Split, domain: Domain, index: u64) -> Tensor {
        match &*self.source {
            Source::Synthetic { seed } => {
                let id = synthetic_id(split, index);
                match domain {
                    Domain::Content => synth_content(*seed, id, self.size),
                    Domain::Style => synth_style(*seed, id, self.size),
                }
            }
            Source::Folder { train, test, .. } => {
                let pool = if split == Split::Train { train } else { test };
                let list = match domain {
                    Domain::Content => &pool.contents,
                    Domain::Style => &pool.styles,
                };
                list[index as usize].1.clone()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    Content,
    Style,
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!("image size must be a positive multiple of 16, got {size}")));
    }
    Ok(())
}

/// Cursor over batches of one split. `(seed, cursor)` fully determines the
/// next batch.
#[derive(Debug, Clone)]
pub struct DatasetStream {
    dataset: Dataset,
    split: Split,
    seed: u64,
    cursor: u64,
}

impl DatasetStream {
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn set_cursor(&mut self, cursor: u64) {
        self.cursor = cursor;
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Sample index used for position `pos` of the stream. Finite pools are
    /// walked in a fresh seeded permutation every epoch.
    fn index_at(&self, domain: Domain, pos: u64) -> Result<u64> {
        match self.dataset.pool_len(self.split, domain) {
            None => Ok(pos),
            Some(0) => Err(Error::EmptyFolder(PathBuf::from(format!("{:?} {:?} split", self.split, domain)))),
            Some(n) => {
                let n = n as u64;
                let epoch = pos / n;
                let salt = if domain == Domain::Content { 0x51 } else { 0xA7 };
                let mut perm: Vec<u64> = (0..n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt);
                rng.set_stream(epoch);
                perm.shuffle(&mut rng);
                Ok(perm[(pos % n) as usize])
            }
        }
    }

    /// The batch at `cursor` without advancing.
    pub fn batch_at(&self, cursor: u64, batch_size: usize) -> Result<(Tensor, Tensor)> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let mut contents = Vec::with_capacity(batch_size);
        let mut styles = Vec::with_capacity(batch_size);
        for j in 0..batch_size as u64 {
            let pos = cursor * batch_size as u64 + j;
            contents.push(self.dataset.image(self.split, Domain::Content, self.index_at(Domain::Content, pos)?));
            styles.push(self.dataset.image(self.split, Domain::Style, self.index_at(Domain::Style, pos)?));
        }
        Ok((Tensor::stack(&contents)?, Tensor::stack(&styles)?))
    }

    /// Returns `(contents, styles)`, each `[B,3,H,W]`, and advances.
    pub fn next_batch(&mut self, batch_size: usize) -> Result<(Tensor, Tensor)> {
        let batch = self.batch_at(self.cursor, batch_size)?;
        self.cursor += 1;
        Ok(batch)
    }

    /// Sample ids drawn at stream positions `[0, draws)`.
    pub fn drawn_ids(&self, draws: u64) -> Result<Vec<String>> {
        (0..draws)
            .map(|pos| match &*self.dataset.source {
                Source::Synthetic { .. } => Ok(synthetic_id(self.split, pos).to_string()),
                Source::Folder { train, test, .. } => {
                    let pool = if self.split == Split::Train { train } else { test };
                    let i = self.index_at(Domain::Content, pos)?;
                    Ok(format!("content/{}", pool.contents[i as usize].0))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replayed_stream_is_identical() {
        let ds = Dataset::synthetic(3, 16).unwrap();
        let mut a = ds.stream(Split::Train, 9);
        let mut b = ds.stream(Split::Train, 9);
        for _ in 0..3 {
            assert_eq!(a.next_batch(2).unwrap(), b.next_batch(2).unwrap());
        }
        let (c, s) = a.next_batch(4).unwrap();
        assert_eq!(c.shape(), &[4, 3, 16, 16]);
        assert_eq!(s.shape(), &[4, 3, 16, 16]);
        assert_eq!(a.cursor(), 4);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Dataset::synthetic(0, 20).is_err());
        assert!(Dataset::synthetic(0, 0).is_err());
        let ds = Dataset::synthetic(0, 16).unwrap();
        assert!(ds.stream(Split::Train, 0).next_batch(0).is_err());
    }

    #[test]
    fn test_pairs_are_deterministic_and_bounded() {
        let ds = Dataset::synthetic(1, 16).unwrap();
        let a = ds.test_pairs(5, 2).unwrap();
        let b = ds.test_pairs(5, 2).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        assert_eq!(ds.test_pairs(10_000, 2).unwrap().len(), SYNTH_TEST_CONTENTS * SYNTH_TEST_STYLES);
        assert!(matches!(ds.test_pairs(0, 2), Err(Error::EmptyTestSet)));
    }
}
