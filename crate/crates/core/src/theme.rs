use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// An imagery source together with its coordinate family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theme {
    /// 1 m/px aerial photography on the UTM grid.
    Usgs,
    /// 1.56 m/px satellite photography on the latitude/longitude grid.
    Spin2,
}

impl Theme {
    pub const ALL: [Theme; 2] = [Theme::Usgs, Theme::Spin2];

    pub fn name(self) -> &'static str {
        match self {
            Theme::Usgs => "usgs",
            Theme::Spin2 => "spin2",
        }
    }

    /// Ground size of one full-resolution pixel.
    pub fn pixel_scale_m(self) -> f64 {
        match self {
            Theme::Usgs => 1.0,
            Theme::Spin2 => 1.56,
        }
    }

    /// Full-resolution tiles per cut along each axis.
    pub fn tiles_per_side(self) -> u32 {
        match self {
            Theme::Usgs => 8,
            Theme::Spin2 => 5,
        }
    }

    pub fn other(self) -> Theme {
        match self {
            Theme::Usgs => Theme::Spin2,
            Theme::Spin2 => Theme::Usgs,
        }
    }
}

impl fmt::Display for Theme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {what} {value:?}")]
pub struct ParseThemeError {
    what: &'static str,
    value: String,
}

impl FromStr for Theme {
    type Err = ParseThemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "usgs" => Ok(Theme::Usgs),
            "spin2" | "spin-2" => Ok(Theme::Spin2),
            _ => Err(ParseThemeError {
                what: "theme",
                value: s.to_string(),
            }),
        }
    }
}

/// The four pyramid levels, finest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Full resolution (1 m or 1.56 m per pixel).
    Tile,
    /// 8 m per pixel.
    Browse,
    /// 16 m per pixel.
    Thumb,
    /// 32 m per pixel.
    Jump,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Tile, Level::Browse, Level::Thumb, Level::Jump];

    pub fn name(self) -> &'static str {
        match self {
            Level::Tile => "tile",
            Level::Browse => "browse",
            Level::Thumb => "thumb",
            Level::Jump => "jump",
        }
    }

    pub fn meters_per_pixel(self, theme: Theme) -> f64 {
        match self {
            Level::Tile => theme.pixel_scale_m(),
            Level::Browse => 8.0,
            Level::Thumb => 16.0,
            Level::Jump => 32.0,
        }
    }

    /// Position 0..=3, finest to coarsest.
    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn finer(self) -> Option<Level> {
        self.rank().checked_sub(1).map(|r| Level::ALL[r])
    }

    pub fn coarser(self) -> Option<Level> {
        Level::ALL.get(self.rank() + 1).copied()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = ParseThemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tile" => Ok(Level::Tile),
            "browse" => Ok(Level::Browse),
            "thumb" => Ok(Level::Thumb),
            "jump" => Ok(Level::Jump),
            _ => Err(ParseThemeError {
                what: "level",
                value: s.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in Theme::ALL {
            assert_eq!(t.name().parse::<Theme>().unwrap(), t);
        }
        for l in Level::ALL {
            assert_eq!(l.name().parse::<Level>().unwrap(), l);
        }
        assert!("browsey".parse::<Level>().is_err());
    }

    #[test]
    fn level_neighbours() {
        assert_eq!(Level::Tile.finer(), None);
        assert_eq!(Level::Tile.coarser(), Some(Level::Browse));
        assert_eq!(Level::Jump.coarser(), None);
    }
}
