//! Shared fixture helpers for the criterion benches.
