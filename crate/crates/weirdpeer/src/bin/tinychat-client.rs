use clap::Parser;
use weirdpeer::testbed::{client::client_main, TestbedArgs};

fn main() {
    let args = TestbedArgs::parse();
    std::process::exit(client_main(&args));
}
