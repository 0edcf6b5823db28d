#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod corpus;
pub mod distmatch;
pub mod dualsemi;
pub mod seq2seq;
pub mod slotval;
pub mod subword;
