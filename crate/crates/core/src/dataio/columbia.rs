//! File naming of the public gaze dataset: `{subject}_{distance}_{pose}P_{pitch}V_{yaw}H.{ext}`.

use crate::error::{Error, Result};

pub const FILENAME_PATTERN: &str = "{subject}_{distance}_{pose}P_{pitch}V_{yaw}H.{ext}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumbiaName {
    pub subject: u32,
    pub distance: String,
    pub head_pose: i32,
    pub pitch: i32,
    pub yaw: i32,
}

impl ColumbiaName {
    /// Subject id as written in file names and manifests (zero-padded).
    pub fn subject_id(&self) -> String {
        format!("{:04}", self.subject)
    }

    pub fn stem(&self) -> String {
        format!(
            "{}_{}_{}P_{}V_{}H",
            self.subject_id(),
            self.distance,
            self.head_pose,
            self.pitch,
            self.yaw
        )
    }

    pub fn file_name(&self, ext: &str) -> String {
        format!("{}.{ext}", self.stem())
    }
}

fn suffixed(field: &str, suffix: char) -> Option<i32> {
    field.strip_suffix(suffix)?.parse().ok()
}

pub fn parse_columbia_filename(name: &str) -> Result<ColumbiaName> {
    let err = || Error::Parse {
        input: name.to_string(),
        expected: FILENAME_PATTERN.to_string(),
    };
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let (stem, ext) = base.rsplit_once('.').ok_or_else(err)?;
    if ext.is_empty() {
        return Err(err());
    }
    let parts: Vec<&str> = stem.split('_').collect();
    let [subject, distance, pose, pitch, yaw] = parts[..] else {
        return Err(err());
    };
    if subject.is_empty() || !subject.bytes().all(|b| b.is_ascii_digit()) || distance.is_empty() {
        return Err(err());
    }
    Ok(ColumbiaName {
        subject: subject.parse().map_err(|_| err())?,
        distance: distance.to_string(),
        head_pose: suffixed(pose, 'P').ok_or_else(err)?,
        pitch: suffixed(pitch, 'V').ok_or_else(err)?,
        yaw: suffixed(yaw, 'H').ok_or_else(err)?,
    })
}
