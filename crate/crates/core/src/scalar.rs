//! Floating-point abstraction so the solvers run in either f64 or f32.

use ndarray::NdFloat;
use num_traits::{NumCast, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::iter::Sum;

/// Scalar type the numeric core is generic over.
///
/// f64 is the reference precision; f32 mirrors single-precision GPU runs
/// and relaxes test tolerances accordingly (see [`Scalar::TOL_SCALE`]).
pub trait Scalar: NdFloat + Sum + for<'a> Sum<&'a Self> {
    /// Multiplier applied to f64 tolerances when checking invariants
    /// in this precision.
    const TOL_SCALE: f64;

    /// Short name used in configs and manifests ("f32" / "f64").
    const NAME: &'static str;

    fn cast(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("finite f64 converts to scalar")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// ±1 with equal probability.
    fn rademacher<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.gen::<bool>() {
            Self::one()
        } else {
            -Self::one()
        }
    }
}

impl Scalar for f64 {
    const TOL_SCALE: f64 = 1.0;
    const NAME: &'static str = "f64";

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f64>()
    }
}

impl Scalar for f32 {
    // Spec'd relaxation for single precision.
    const TOL_SCALE: f64 = 1e3;
    const NAME: &'static str = "f32";

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f32>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn casts_round_trip() {
        assert_eq!(f64::cast(1.5).as_f64(), 1.5);
        assert_eq!(f32::cast(1.5).as_f64(), 1.5);
    }

    #[test]
    fn rademacher_is_pm_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        use rand::SeedableRng;
        for _ in 0..100 {
            let v = f64::rademacher(&mut rng);
            assert!(v == 1.0 || v == -1.0);
        }
    }
}
