pub mod blocklace;
pub mod constants;
pub mod crypto;
pub mod harness;
pub mod agent;
pub mod tl;
pub mod simnet;
pub mod wl;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/blocklace.md")]
    mod blocklace {}
    #[doc = include_str!("../../../book/src/tl.md")]
    mod tl {}
    #[doc = include_str!("../../../book/src/wl.md")]
    mod wl {}
    #[doc = include_str!("../../../book/src/simnet.md")]
    mod simnet {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
