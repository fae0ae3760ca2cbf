//! Reflective chain-of-thought reasoning, executable.
//!
//! The crate models reasoning as a Markov thought process ([`mtp`]), runs it
//! with self-verification and trace-back search ([`reflect`]), evaluates the
//! analytic accuracy theory of the simplified task ([`theory`]) and checks it
//! by Monte-Carlo simulation ([`sim`]). Concrete multiplication and Sudoku
//! tasks with rule-based verifiers live in [`tasks`]; [`corpus`], [`rlkit`]
//! and [`metrics`] turn episodes into training data, advantages and reports.

pub mod corpus;
pub mod metrics;
pub mod mtp;
pub mod reflect;
pub mod rlkit;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod tasks;
pub mod theory;

pub use mtp::{
    is_rejected, reflective_transition, run_nonreflective, Disposition, EpisodeRecord, Event, Label, Outcome, Query,
    QueryPayload, TaskKind, Verification, VerifiedStep,
};
pub use reflect::{run_rmtp, run_rtbs, ReflectConfig, RootAttempts};
pub use rng::{Seed, StreamRng};
pub use theory::{DerivedRates, SimplifiedParams};

/// Serializes `u128` as a decimal string so JSON readers without 128-bit
/// integers round-trip it exactly. Plain JSON numbers are accepted on input.
pub(crate) mod serde_u128 {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    struct U128Visitor;

    impl Visitor<'_> for U128Visitor {
        type Value = u128;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a nonnegative integer or decimal string")
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<u128, E> {
            Ok(u128::from(v))
        }

        fn visit_u128<E: de::Error>(self, v: u128) -> Result<u128, E> {
            Ok(v)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<u128, E> {
            v.parse().map_err(E::custom)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        d.deserialize_any(U128Visitor)
    }

    /// The same encoding for a list.
    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        #[derive(serde::Deserialize)]
        struct Item(#[serde(with = "super")] u128);

        pub fn serialize<S: Serializer>(v: &[u128], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&x.to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u128>, D::Error> {
            Ok(Vec::<Item>::deserialize(d)?.into_iter().map(|i| i.0).collect())
        }
    }
}
