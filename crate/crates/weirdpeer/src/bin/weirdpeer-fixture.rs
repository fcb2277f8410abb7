use clap::Parser;
use weirdpeer::fixture::{fixture_main, FixtureCli};

fn main() {
    std::process::exit(fixture_main(FixtureCli::parse()));
}
