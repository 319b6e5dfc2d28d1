// SPDX-License-Identifier: Apache-2.0

pub mod driver;
pub mod equiv;
pub mod isa;
pub mod machine;
pub mod rules;
pub mod safety;
pub mod slicer;
pub mod synth;
