use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Term {
    Hr,
    Sil,
    Lr,
    Lmk,
    Reg,
    Lap,
    Vgg,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Hr => "hr",
            Term::Sil => "sil",
            Term::Lr => "lr",
            Term::Lmk => "lmk",
            Term::Reg => "reg",
            Term::Lap => "lap",
            Term::Vgg => "vgg",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Guide,
    Gaussian,
}

impl Stage {
    /// The terms each stage's objective is made of.
    pub fn terms(self) -> &'static [Term] {
        match self {
            Stage::Guide => &[Term::Hr, Term::Sil, Term::Lr, Term::Lmk, Term::Reg, Term::Lap],
            Stage::Gaussian => &[Term::Hr, Term::Vgg, Term::Lr, Term::Lmk, Term::Reg],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Guide => "guide",
            Stage::Gaussian => "gaussian",
        }
    }
}

/// Weights of the auxiliary terms; the photometric term always has weight 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub sil: f64,
    pub lr: f64,
    pub lmk: f64,
    pub reg: f64,
    pub lap: f64,
    pub vgg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            sil: 0.1,
            lr: 0.1,
            lmk: 0.1,
            reg: 0.001,
            lap: 100.0,
            vgg: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sil, self.lr, self.lmk, self.reg, self.lap, self.vgg];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    pub fn weight(&self, term: Term) -> f64 {
        match term {
            Term::Hr => 1.0,
            Term::Sil => self.sil,
            Term::Lr => self.lr,
            Term::Lmk => self.lmk,
            Term::Reg => self.reg,
            Term::Lap => self.lap,
            Term::Vgg => self.vgg,
        }
    }

    /// Weighted sum of the given terms. A term that does not belong to the
    /// stage is an error rather than silently ignored.
    pub fn total(&self, stage: Stage, terms: &[(Term, f64)]) -> Result<f64> {
        let mut sum = 0.0;
        for &(t, v) in terms {
            if !stage.terms().contains(&t) {
                return Err(Error::Invalid(format!("term {t} is not part of the {} objective", stage.name())));
            }
            sum += self.weight(t) * v;
        }
        Ok(sum)
    }
}
