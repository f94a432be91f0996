use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};

/// Numeric type the aggregate metrics are computed in.
pub trait Scalar: Num + FromPrimitive + Clone + PartialOrd + Debug + Send + Sync + 'static {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    /// `num / den` computed in the scalar type. `den` must be non-zero.
    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn mean<I: IntoIterator<Item = Self>>(values: I) -> Option<Self> {
        let mut sum = Self::zero();
        let mut n = 0usize;
        for v in values {
            sum = sum + v;
            n += 1;
        }
        (n > 0).then(|| sum / Self::from_count(n))
    }
}

impl<T> Scalar for T where T: Num + FromPrimitive + Clone + PartialOrd + Debug + Send + Sync + 'static {}
