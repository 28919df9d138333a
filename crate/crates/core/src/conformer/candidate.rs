use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The three module slots of a block, in forward order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Mhsa,
    Conv,
    Ffn,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Mhsa, Slot::Conv, Slot::Ffn];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Mhsa => "mhsa",
            Slot::Conv => "conv",
            Slot::Ffn => "ffn",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::parse("slot", format!("unknown slot {s:?}")))
    }
}

/// One candidate operation. Its textual form is the canonical operation
/// name (`mhsa_head8`, `dil_conv_11`, `ffn_512`, `identity`, ...).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CandidateOp {
    Mhsa { heads: usize },
    Identity,
    Conv { kernel: usize, dilation: usize },
    Ffn { hidden: usize },
}

pub const MHSA_CANDIDATES: [CandidateOp; 3] = [
    CandidateOp::Mhsa { heads: 4 },
    CandidateOp::Mhsa { heads: 8 },
    CandidateOp::Mhsa { heads: 16 },
];

pub const CONV_CANDIDATES: [CandidateOp; 7] = [
    CandidateOp::Identity,
    CandidateOp::Conv {
        kernel: 7,
        dilation: 1,
    },
    CandidateOp::Conv {
        kernel: 11,
        dilation: 1,
    },
    CandidateOp::Conv {
        kernel: 15,
        dilation: 1,
    },
    CandidateOp::Conv {
        kernel: 7,
        dilation: 2,
    },
    CandidateOp::Conv {
        kernel: 11,
        dilation: 2,
    },
    CandidateOp::Conv {
        kernel: 15,
        dilation: 2,
    },
];

pub const FFN_CANDIDATES: [CandidateOp; 3] = [
    CandidateOp::Ffn { hidden: 1024 },
    CandidateOp::Ffn { hidden: 512 },
    CandidateOp::Ffn { hidden: 256 },
];

impl CandidateOp {
    /// The standard candidate list for `slot`.
    pub fn defaults(slot: Slot) -> &'static [CandidateOp] {
        match slot {
            Slot::Mhsa => &MHSA_CANDIDATES,
            Slot::Conv => &CONV_CANDIDATES,
            Slot::Ffn => &FFN_CANDIDATES,
        }
    }

    fn all() -> impl Iterator<Item = CandidateOp> {
        MHSA_CANDIDATES
            .into_iter()
            .chain(CONV_CANDIDATES)
            .chain(FFN_CANDIDATES)
    }

    pub fn valid_names() -> Vec<String> {
        Self::all().map(|op| op.to_string()).collect()
    }

    /// Parses any well-formed operation name (`mhsa_head<h>`, `identity`,
    /// `conv_<k>`, `dil_conv_<k>`, `ffn_<n>`), not only the standard ones.
    pub fn parse_any(s: &str) -> Result<Self, Error> {
        let num = |rest: &str| rest.parse::<usize>().ok().filter(|&n| n > 0);
        let op = if s == "identity" {
            Some(CandidateOp::Identity)
        } else if let Some(r) = s.strip_prefix("mhsa_head") {
            num(r).map(|heads| CandidateOp::Mhsa { heads })
        } else if let Some(r) = s.strip_prefix("dil_conv_") {
            num(r).map(|kernel| CandidateOp::Conv {
                kernel,
                dilation: 2,
            })
        } else if let Some(r) = s.strip_prefix("conv_") {
            num(r).map(|kernel| CandidateOp::Conv {
                kernel,
                dilation: 1,
            })
        } else if let Some(r) = s.strip_prefix("ffn_") {
            num(r).map(|hidden| CandidateOp::Ffn { hidden })
        } else {
            None
        };
        op.ok_or_else(|| Error::UnknownOperation {
            name: s.to_string(),
            valid: Self::valid_names(),
        })
    }

    pub fn slot(self) -> Slot {
        match self {
            CandidateOp::Mhsa { .. } => Slot::Mhsa,
            CandidateOp::Identity | CandidateOp::Conv { .. } => Slot::Conv,
            CandidateOp::Ffn { .. } => Slot::Ffn,
        }
    }

    /// Frames of context seen by the depthwise convolution (1 for identity,
    /// `None` for non-convolution slots).
    pub fn receptive_field(self) -> Option<usize> {
        match self {
            CandidateOp::Identity => Some(1),
            CandidateOp::Conv { kernel, dilation } => Some((kernel - 1) * dilation + 1),
            _ => None,
        }
    }
}

impl fmt::Display for CandidateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CandidateOp::Mhsa { heads } => write!(f, "mhsa_head{heads}"),
            CandidateOp::Identity => f.write_str("identity"),
            CandidateOp::Conv {
                kernel,
                dilation: 1,
            } => write!(f, "conv_{kernel}"),
            CandidateOp::Conv { kernel, .. } => write!(f, "dil_conv_{kernel}"),
            CandidateOp::Ffn { hidden } => write!(f, "ffn_{hidden}"),
        }
    }
}

impl FromStr for CandidateOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::all()
            .find(|op| op.to_string() == s)
            .ok_or_else(|| Error::UnknownOperation {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}
