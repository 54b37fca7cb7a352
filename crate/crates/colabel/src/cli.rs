//! Command-line surface (placeholder during bring-up).
use std::ffi::OsString;

pub fn cli_main<I, T>(_args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    2
}
