//! Dataset class inventory and the `(class, instance)` <-> panoptic id packing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster2D, Raster3D};

pub type ClassId = u32;
pub type InstanceId = u32;
pub type PanopticId = u32;

/// Per-pixel class labels; may contain the dataset's void label.
pub type SemanticRaster = Raster2D<ClassId>;

/// Per-pixel, per-class scores laid out `H x W x C`.
pub type SemanticLogits = Raster3D<f32>;

/// Class inventory split into thing and stuff sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: u32,
    pub thing_classes: BTreeSet<ClassId>,
    pub stuff_classes: BTreeSet<ClassId>,
    #[serde(default = "default_void_label")]
    pub void_label: ClassId,
    #[serde(default = "default_label_divisor")]
    pub label_divisor: u32,
    #[serde(default = "default_stuff_area_threshold")]
    pub stuff_area_threshold: u64,
}

fn default_void_label() -> ClassId {
    255
}

fn default_label_divisor() -> u32 {
    1000
}

fn default_stuff_area_threshold() -> u64 {
    2048
}

impl DatasetSpec {
    pub fn new(
        num_classes: u32,
        thing_classes: impl IntoIterator<Item = ClassId>,
        stuff_classes: impl IntoIterator<Item = ClassId>,
        void_label: ClassId,
        label_divisor: u32,
        stuff_area_threshold: u64,
    ) -> Result<Self> {
        let spec = Self {
            num_classes,
            thing_classes: thing_classes.into_iter().collect(),
            stuff_classes: stuff_classes.into_iter().collect(),
            void_label,
            label_divisor,
            stuff_area_threshold,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 11 stuff classes (ids 0..=10) followed by 8 thing classes (ids 11..=18),
    /// void 255, divisor 1000, stuff area threshold 2048.
    pub fn cityscapes_like() -> Self {
        Self::new(19, 11..19, 0..11, 255, 1000, 2048).expect("static spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidSpec("num_classes must be positive".into()));
        }
        if let Some(c) = self.thing_classes.intersection(&self.stuff_classes).next() {
            return Err(Error::InvalidSpec(format!(
                "class {c} is both thing and stuff"
            )));
        }
        for c in 0..self.num_classes {
            if !self.thing_classes.contains(&c) && !self.stuff_classes.contains(&c) {
                return Err(Error::InvalidSpec(format!(
                    "class {c} is neither thing nor stuff"
                )));
            }
        }
        if let Some(c) = self
            .thing_classes
            .iter()
            .chain(&self.stuff_classes)
            .find(|&&c| c >= self.num_classes)
        {
            return Err(Error::InvalidSpec(format!(
                "class {c} outside 0..{}",
                self.num_classes
            )));
        }
        if self.void_label < self.num_classes {
            return Err(Error::InvalidSpec(format!(
                "void label {} collides with a class id",
                self.void_label
            )));
        }
        if self.label_divisor < 2 {
            return Err(Error::InvalidSpec(
                "label_divisor must be at least 2".into(),
            ));
        }
        let largest = u64::from(self.void_label.max(self.num_classes - 1))
            * u64::from(self.label_divisor)
            + u64::from(self.label_divisor - 1);
        if largest > u64::from(u32::MAX) {
            return Err(Error::InvalidSpec(
                "void_label * label_divisor overflows u32".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn is_thing(&self, class: ClassId) -> bool {
        self.thing_classes.contains(&class)
    }

    #[inline]
    pub fn is_stuff(&self, class: ClassId) -> bool {
        self.stuff_classes.contains(&class)
    }

    /// The panoptic id every void pixel carries.
    #[inline]
    pub fn void_id(&self) -> PanopticId {
        self.void_label * self.label_divisor
    }

    #[inline]
    pub fn class_of(&self, id: PanopticId) -> ClassId {
        id / self.label_divisor
    }

    /// Lookup table `class -> is thing` for hot loops.
    pub(crate) fn thing_table(&self) -> Vec<bool> {
        (0..self.num_classes).map(|c| self.is_thing(c)).collect()
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::cityscapes_like()
    }
}

pub fn encode_panoptic_id(
    class: ClassId,
    instance: InstanceId,
    spec: &DatasetSpec,
) -> Result<PanopticId> {
    if instance >= spec.label_divisor {
        return Err(Error::EncodingOverflow {
            instance,
            divisor: spec.label_divisor,
        });
    }
    if instance != 0 && !spec.is_thing(class) {
        return Err(Error::InvalidCombination { class, instance });
    }
    Ok(class * spec.label_divisor + instance)
}

pub fn decode_panoptic_id(id: PanopticId, spec: &DatasetSpec) -> Result<(ClassId, InstanceId)> {
    let class = id / spec.label_divisor;
    if class >= spec.num_classes && class != spec.void_label {
        return Err(Error::InvalidId { id, class });
    }
    Ok((class, id % spec.label_divisor))
}

/// Per-pixel panoptic ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticMap {
    raster: Raster2D<PanopticId>,
}

impl PanopticMap {
    /// Wraps `raster` after checking every id decodes against `spec`.
    pub fn new(raster: Raster2D<PanopticId>, spec: &DatasetSpec) -> Result<Self> {
        let void = spec.void_id();
        for &id in raster.data() {
            if id == void {
                continue;
            }
            let (class, instance) = decode_panoptic_id(id, spec)?;
            if class == spec.void_label {
                return Err(Error::InvalidId { id, class });
            }
            if instance != 0 && spec.is_stuff(class) {
                return Err(Error::InvalidCombination { class, instance });
            }
        }
        Ok(Self { raster })
    }

    pub(crate) fn from_raster_unchecked(raster: Raster2D<PanopticId>) -> Self {
        Self { raster }
    }

    #[inline]
    pub fn raster(&self) -> &Raster2D<PanopticId> {
        &self.raster
    }

    pub fn into_raster(self) -> Raster2D<PanopticId> {
        self.raster
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.raster.shape()
    }

    /// Class component of every pixel; void pixels map to the void label.
    pub fn semantic(&self, spec: &DatasetSpec) -> SemanticRaster {
        self.raster.map(|&id| spec.class_of(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let spec = DatasetSpec::cityscapes_like();
        assert_eq!(encode_panoptic_id(0, 0, &spec).unwrap(), 0);
        assert_eq!(encode_panoptic_id(17, 12, &spec).unwrap(), 17012);
        assert_eq!(encode_panoptic_id(18, 999, &spec).unwrap(), 18999);
    }

    #[test]
    fn encode_errors() {
        let spec = DatasetSpec::cityscapes_like();
        assert!(matches!(
            encode_panoptic_id(12, 1000, &spec),
            Err(Error::EncodingOverflow { .. })
        ));
        assert!(matches!(
            encode_panoptic_id(3, 1, &spec),
            Err(Error::InvalidCombination {
                class: 3,
                instance: 1
            })
        ));
    }

    #[test]
    fn decode_examples() {
        // class 7 as a thing needs a spec where it is one
        let spec = DatasetSpec::new(19, 5..19, 0..5, 255, 1000, 2048).unwrap();
        assert_eq!(encode_panoptic_id(7, 12, &spec).unwrap(), 7012);
        assert_eq!(decode_panoptic_id(7012, &spec).unwrap(), (7, 12));
        assert_eq!(decode_panoptic_id(0, &spec).unwrap(), (0, 0));
        assert_eq!(decode_panoptic_id(spec.void_id(), &spec).unwrap(), (255, 0));
        assert!(matches!(
            decode_panoptic_id(19_000, &spec),
            Err(Error::InvalidId { class: 19, .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(DatasetSpec::new(3, [0, 1], [1, 2], 255, 1000, 0).is_err());
        assert!(DatasetSpec::new(3, [0], [1], 255, 1000, 0).is_err());
        assert!(DatasetSpec::new(3, [0], [1, 2], 2, 1000, 0).is_err());
        assert!(DatasetSpec::new(3, [0], [1, 2, 5], 255, 1000, 0).is_err());
        assert!(DatasetSpec::new(3, [0], [1, 2], 255, 1, 0).is_err());
        assert!(DatasetSpec::new(3, [0], [1, 2], u32::MAX / 10, 1000, 0).is_err());
        let spec = DatasetSpec::cityscapes_like();
        assert_eq!(spec.thing_classes.len(), 8);
        assert_eq!(spec.stuff_classes.len(), 11);
    }

    #[test]
    fn panoptic_map_rejects_bad_ids() {
        let spec = DatasetSpec::cityscapes_like();
        let ok = Raster2D::from_vec(1, 3, vec![0, 11_001, spec.void_id()]).unwrap();
        assert!(PanopticMap::new(ok, &spec).is_ok());
        let stuff_instance = Raster2D::from_vec(1, 1, vec![2_005]).unwrap();
        assert!(PanopticMap::new(stuff_instance, &spec).is_err());
        let unknown = Raster2D::from_vec(1, 1, vec![40_000]).unwrap();
        assert!(PanopticMap::new(unknown, &spec).is_err());
    }

    #[test]
    fn round_trip_ten_thousand_random_pairs() {
        use rand_core::{RngCore, SeedableRng};
        let spec = DatasetSpec::cityscapes_like();
        let mut rng = rand_xoshiro::Xoshiro256StarStar::seed_from_u64(11);
        for _ in 0..10_000 {
            let class = (rng.next_u64() % 19) as u32;
            let instance = if spec.is_thing(class) {
                (rng.next_u64() % 1000) as u32
            } else {
                0
            };
            let id = encode_panoptic_id(class, instance, &spec).unwrap();
            assert_eq!(decode_panoptic_id(id, &spec).unwrap(), (class, instance));
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(class in 11u32..19, instance in 0u32..1000) {
            let spec = DatasetSpec::cityscapes_like();
            let id = encode_panoptic_id(class, instance, &spec).unwrap();
            prop_assert_eq!(decode_panoptic_id(id, &spec).unwrap(), (class, instance));
        }
    }
}
