//! Placeholder; C ABI surface lands after the core library.
