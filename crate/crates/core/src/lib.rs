pub mod binpack;
pub mod clock;
pub mod connector;
pub mod events;
pub mod harness;
pub mod irm;
pub mod master;
mod net;
pub mod worker;
pub mod protocol;
