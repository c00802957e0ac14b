use super::SignalError;

/// The eight independent leads, in the order the lead transform expects.
pub const INDEPENDENT_LEADS: [&str; 8] = ["I", "II", "V1", "V2", "V3", "V4", "V5", "V6"];

/// A multi-lead recording. Samples are stored row-major as `f32` µV so that
/// the binary container round-trips them exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    id: String,
    sample_rate_hz: f64,
    leads: Vec<String>,
    num_samples: usize,
    signal: Vec<f32>,
    fiducials: Option<Vec<usize>>,
}

impl EcgRecord {
    /// Validates and builds a record from `leads.len()` rows of equal length.
    pub fn new(
        id: impl Into<String>,
        sample_rate_hz: f64,
        leads: Vec<String>,
        rows: Vec<Vec<f32>>,
        fiducials: Option<Vec<usize>>,
    ) -> Result<Self, SignalError> {
        let id = id.into();
        if rows.len() != leads.len() {
            return Err(SignalError::invalid(&id, format!("{} leads but {} signal rows", leads.len(), rows.len())));
        }
        let num_samples = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != num_samples) {
            return Err(SignalError::invalid(&id, format!("lead {} has {} samples, expected {num_samples}", leads[i], r.len())));
        }
        let signal = rows.into_iter().flatten().collect();
        Self::from_flat(id, sample_rate_hz, leads, num_samples, signal, fiducials)
    }

    pub(crate) fn from_flat(
        id: String,
        sample_rate_hz: f64,
        leads: Vec<String>,
        num_samples: usize,
        signal: Vec<f32>,
        fiducials: Option<Vec<usize>>,
    ) -> Result<Self, SignalError> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(SignalError::invalid(&id, format!("sample rate {sample_rate_hz} is not positive")));
        }
        if signal.len() != leads.len() * num_samples {
            return Err(SignalError::invalid(&id, "signal length does not match leads × samples"));
        }
        if let Some(pos) = signal.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::invalid(
                &id,
                format!("non-finite sample at lead {}, index {}", leads[pos / num_samples.max(1)], pos % num_samples.max(1)),
            ));
        }
        if let Some(f) = fiducials.as_ref().and_then(|f| f.iter().find(|&&i| i >= num_samples)) {
            return Err(SignalError::invalid(&id, format!("fiducial {f} outside [0, {num_samples})")));
        }
        Ok(Self { id, sample_rate_hz, leads, num_samples, signal, fiducials })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn leads(&self) -> &[String] {
        &self.leads
    }

    pub fn num_leads(&self) -> usize {
        self.leads.len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples as f64 / self.sample_rate_hz
    }

    pub fn fiducials(&self) -> Option<&[usize]> {
        self.fiducials.as_deref()
    }

    /// Same record under a new id.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_fiducials(mut self, fiducials: Option<Vec<usize>>) -> Result<Self, SignalError> {
        if let Some(f) = fiducials.as_ref().and_then(|f| f.iter().find(|&&i| i >= self.num_samples)) {
            return Err(SignalError::invalid(&self.id, format!("fiducial {f} outside [0, {})", self.num_samples)));
        }
        self.fiducials = fiducials;
        Ok(self)
    }

    /// Row-major samples, `num_leads × num_samples`.
    pub fn signal(&self) -> &[f32] {
        &self.signal
    }

    pub fn lead(&self, index: usize) -> &[f32] {
        &self.signal[index * self.num_samples..(index + 1) * self.num_samples]
    }

    pub fn lead_index(&self, name: &str) -> Option<usize> {
        self.leads.iter().position(|l| l == name)
    }

    pub fn lead_by_name(&self, name: &str) -> Option<&[f32]> {
        self.lead_index(name).map(|i| self.lead(i))
    }
}
