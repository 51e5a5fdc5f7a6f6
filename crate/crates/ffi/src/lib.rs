//! C ABI surface; populated alongside the strategy layers.
