//! Sample tensor extents.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Extent of one sample tensor: channels x width x height.
///
/// Serialized as the array `[C, W, H]`. In-memory samples are stored flat in
/// channel-major, row-major order: index `(c * height + y) * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl Shape {
    pub fn new(channels: usize, width: usize, height: usize) -> Self {
        Shape {
            channels,
            width,
            height,
        }
    }

    /// Flat element count of one sample.
    pub fn len(&self) -> usize {
        self.channels * self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.width, self.height)
    }
}

impl Serialize for Shape {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.channels, self.width, self.height].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let dims = <[usize; 3]>::deserialize(deserializer)?;
        if dims.iter().any(|&d| d == 0) {
            return Err(D::Error::custom("shape dimensions must be positive"));
        }
        Ok(Shape::new(dims[0], dims[1], dims[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn len_and_display() {
        let s = Shape::new(1, 28, 28);
        assert_eq!(s.len(), 784);
        assert_eq!(s.to_string(), "1x28x28");
    }

    #[test]
    fn serializes_as_array() {
        let s = Shape::new(3, 4, 5);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[3,4,5]");
        let back: Shape = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(serde_json::from_str::<Shape>("[0,4,5]").is_err());
    }
}
