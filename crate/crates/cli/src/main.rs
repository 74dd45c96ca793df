use std::io;

fn main() {
    let code = edgeskills_cli::run_args(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
