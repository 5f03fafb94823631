use super::dataset::EventView;
use super::DataError;

const PT_OFFSET: f64 = 0.1;

/// `pt ← ln(0.1 + pt)`.
pub fn normalize_pt(pt: f64) -> Result<f64, DataError> {
    if !(pt >= 0.0) {
        return Err(DataError::NegativePt(pt));
    }
    Ok((PT_OFFSET + pt).ln())
}

pub fn denormalize_pt(x: f64) -> f64 {
    x.exp() - PT_OFFSET
}

/// Model-ready kinematics of one event. Images stay in GeV and are read
/// from the event view directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedEvent {
    /// `(ln(0.1+pt), eta, phi, m)` per candidate.
    pub jets: [[f32; 4]; 2],
    /// `(ln(0.1+pt), eta, phi)` per true tau.
    pub truth: [[f32; 3]; 2],
    pub label: f32,
}

pub fn normalize_event(ev: &EventView<'_>) -> Result<NormalizedEvent, DataError> {
    let mut out = NormalizedEvent {
        jets: [[0.0; 4]; 2],
        truth: [[0.0; 3]; 2],
        label: ev.label(),
    };
    for k in 0..2 {
        let jet = ev.jet(k);
        out.jets[k] = [normalize_pt(jet[0] as f64)? as f32, jet[1], jet[2], jet[3]];
        let truth = ev.truth(k);
        out.truth[k] = [normalize_pt(truth[0] as f64)? as f32, truth[1], truth[2]];
    }
    Ok(out)
}
