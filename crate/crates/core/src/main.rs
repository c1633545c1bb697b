fn main() {
    std::process::exit(hartogskit::run_cli());
}
