use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::layout::{FeatureLayout, LayoutKind};
use crate::motion::skeleton::Skeleton;

/// Dynamic features `N×F` bound to a skeleton and a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    dynamics: Array2<f64>,
    layout: FeatureLayout,
    skeleton: Skeleton,
    fps: f64,
}

impl MotionSequence {
    pub fn new(dynamics: Array2<f64>, layout: FeatureLayout, skeleton: Skeleton, fps: f64) -> Result<Self> {
        let (n, f) = dynamics.dim();
        if n == 0 {
            return Err(Error::invalid("motion has no frames"));
        }
        if f != layout.features {
            return Err(Error::shape(format!(
                "motion has {f} features per frame but the layout expects {}",
                layout.features
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if layout.kind == LayoutKind::GanimatorStyle
            && (layout.joints != skeleton.rotated_count() || layout.contacts != skeleton.contact_joints().len())
        {
            return Err(Error::shape(format!(
                "layout has {} joints and {} contacts, skeleton has {} and {}",
                layout.joints,
                layout.contacts,
                skeleton.rotated_count(),
                skeleton.contact_joints().len()
            )));
        }
        if !dynamics.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("motion dynamics".into()));
        }
        let cr = layout.contact_range();
        for row in dynamics.rows() {
            if row
                .iter()
                .skip(cr.start)
                .take(cr.len())
                .any(|&c| !(0.0..=1.0).contains(&c))
            {
                return Err(Error::invalid("contact labels must lie in [0, 1]"));
            }
        }
        Ok(Self {
            dynamics,
            layout,
            skeleton,
            fps,
        })
    }

    /// Like [`MotionSequence::new`] for generated features; contact channels
    /// are clamped to `[0, 1]` first.
    pub fn from_generated(
        mut dynamics: Array2<f64>,
        layout: FeatureLayout,
        skeleton: Skeleton,
        fps: f64,
    ) -> Result<Self> {
        if dynamics.ncols() == layout.features {
            let cr = layout.contact_range();
            for mut row in dynamics.rows_mut() {
                for c in cr.clone() {
                    row[c] = row[c].clamp(0.0, 1.0);
                }
            }
        }
        Self::new(dynamics, layout, skeleton, fps)
    }

    /// Same skeleton, layout and fps with new dynamics.
    pub fn with_dynamics(&self, dynamics: Array2<f64>) -> Result<Self> {
        Self::new(dynamics, self.layout.clone(), self.skeleton.clone(), self.fps)
    }

    pub fn dynamics(&self) -> &Array2<f64> {
        &self.dynamics
    }

    pub fn into_dynamics(self) -> Array2<f64> {
        self.dynamics
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.dynamics.nrows()
    }

    pub fn features(&self) -> usize {
        self.dynamics.ncols()
    }

    pub fn require_ganimator(&self, what: &str) -> Result<()> {
        if self.layout.kind != LayoutKind::GanimatorStyle {
            return Err(Error::invalid(format!("{what} requires the GanimatorStyle layout")));
        }
        Ok(())
    }
}
