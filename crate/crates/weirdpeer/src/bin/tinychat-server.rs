use clap::Parser;
use weirdpeer::testbed::{server::server_main, TestbedArgs};

fn main() {
    let args = TestbedArgs::parse();
    std::process::exit(server_main(&args));
}
