use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative paths are resolved against the manifest's directory.
    pub image: PathBuf,
    pub mask: PathBuf,
    pub case_id: String,
}

/// Image/mask pairs of one split.
///
/// On disk: a header line
/// `#manifest split=train num_classes=3 palette=background,disc,box`
/// followed by `image<TAB>mask<TAB>case_id` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub num_classes: usize,
    /// Name of each label value.
    pub palette: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("#manifest"))
            .ok_or_else(|| Error::config("manifest must start with a `#manifest` header"))?;
        let mut split = Split::Train;
        let mut num_classes = None;
        let mut palette = Vec::new();
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::config(format!("manifest header field `{field}` is not key=value")))?;
            match k {
                "split" => split = v.parse()?,
                "num_classes" => {
                    num_classes = Some(v.parse().map_err(|_| Error::config(format!("num_classes `{v}`")))?)
                }
                "palette" => palette = v.split(',').map(str::to_string).collect(),
                _ => return Err(Error::config(format!("unknown manifest header key `{k}`"))),
            }
        }
        let num_classes: usize = num_classes.ok_or_else(|| Error::config("manifest header lacks num_classes"))?;
        if palette.is_empty() {
            palette = (0..num_classes).map(|c| format!("class{c}")).collect();
        }
        if palette.len() != num_classes.max(2) {
            return Err(Error::config(format!(
                "palette names {} labels but num_classes is {num_classes}",
                palette.len()
            )));
        }
        let entries = lines
            .enumerate()
            .map(|(n, line)| {
                let cols: Vec<&str> = line.split('\t').collect();
                match cols[..] {
                    [image, mask, case_id] => Ok(ManifestEntry {
                        image: image.into(),
                        mask: mask.into(),
                        case_id: case_id.to_string(),
                    }),
                    _ => Err(Error::config(format!("manifest line {}: expected three tab-separated fields", n + 2))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            root: root.to_path_buf(),
            split,
            num_classes,
            palette,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "#manifest split={} num_classes={} palette={}\n",
            self.split,
            self.num_classes,
            self.palette.join(",")
        );
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.image.display(), e.mask.display(), e.case_id));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let m = DatasetManifest {
            root: PathBuf::from("/data"),
            split: Split::Val,
            num_classes: 3,
            palette: vec!["bg".into(), "a".into(), "b".into()],
            entries: vec![ManifestEntry {
                image: "img/0.png".into(),
                mask: "mask/0.png".into(),
                case_id: "c0".into(),
            }],
        };
        assert_eq!(DatasetManifest::parse(&m.render(), Path::new("/data")).unwrap(), m);
    }

    #[test]
    fn header_is_required() {
        assert!(DatasetManifest::parse("a\tb\tc\n", Path::new(".")).is_err());
    }
}
