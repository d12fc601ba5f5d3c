use super::config::LseReduction;
use crate::dsg::{lse_loss, sda_loss, LseAssignment, RelaxationConstants};
use crate::error::Result;
use crate::net::{Forward, Injection, Network};

/// The statistics part of the generation loss for a frozen network: slack or
/// plain matching, optionally with layerwise enhancement.
pub(crate) struct StatObjective<'a> {
    pub net: &'a Network,
    pub margins: RelaxationConstants,
    pub lse: Option<(LseAssignment, f64, LseReduction)>,
}

impl<'a> StatObjective<'a> {
    pub fn new(net: &'a Network, rc: &RelaxationConstants, use_sda: bool, lse: Option<(LseAssignment, f64, LseReduction)>) -> Self {
        let margins = if use_sda { rc.clone() } else { RelaxationConstants::zero(net.n_bn()) };
        StatObjective { net, margins, lse }
    }

    /// Loss value and gradients at the BN input positions of `fwd`.
    pub fn evaluate(&self, fwd: &Forward) -> Result<(f64, Vec<Injection>)> {
        match &self.lse {
            Some((assign, focus, reduction)) => {
                let mut l = lse_loss(fwd, self.net, &self.margins, assign, *focus)?;
                if *reduction == LseReduction::Mean {
                    let s = 1.0 / assign.batch as f64;
                    l.total *= s;
                    l.injections.iter_mut().for_each(|inj| inj.grad.scale(s));
                }
                Ok((l.total, l.injections))
            }
            None => {
                let l = sda_loss(&fwd.trace, self.net, &self.margins)?;
                Ok((l.total, fwd.stat_injections(self.net, &l.grad)?))
            }
        }
    }
}
