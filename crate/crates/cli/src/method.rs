use std::str::FromStr;

/// Calibration method selector exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Raw confidence (plain softmax), the uncalibrated baseline.
    Conf,
    /// Temperature scaling fitted on the fit split.
    Ts,
    /// Histogram binning.
    Hb,
    /// Isotonic regression.
    Ir,
    /// Multi-class isotonic regression.
    Mir,
    /// Distance-aware temperature rectification.
    Dac,
    /// DAC followed by temperature scaling.
    DacTs,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Conf,
        Method::Ts,
        Method::Hb,
        Method::Ir,
        Method::Mir,
        Method::Dac,
        Method::DacTs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Conf => "conf",
            Method::Ts => "ts",
            Method::Hb => "hb",
            Method::Ir => "ir",
            Method::Mir => "mir",
            Method::Dac => "dac",
            Method::DacTs => "dac+ts",
        }
    }

    /// True for the binning-family methods that cannot follow a class-list
    /// change between fit and evaluation.
    pub fn is_binning_family(&self) -> bool {
        matches!(self, Method::Hb | Method::Ir | Method::Mir)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conf" => Ok(Method::Conf),
            "ts" => Ok(Method::Ts),
            "hb" => Ok(Method::Hb),
            "ir" => Ok(Method::Ir),
            "mir" => Ok(Method::Mir),
            "dac" => Ok(Method::Dac),
            "dac+ts" => Ok(Method::DacTs),
            other => Err(format!(
                "unknown method '{other}' (expected conf|ts|hb|ir|mir|dac|dac+ts)"
            )),
        }
    }
}
