// Drive the command-line front end in-process.

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("run");
    let code = neuapprox::cli::run([
        "neuapprox",
        "complete",
        "--synthetic",
        "texture",
        "--shape",
        "16,16,3",
        "--core-shape",
        "4,4,3",
        "--sampling-rate",
        "0.3",
        "--iterations",
        "100",
        "--learning-rate",
        "0.001",
        "--out",
        out.to_str().unwrap(),
    ]);
    println!("exit code {code}");
    let mut names: Vec<_> = std::fs::read_dir(&out)
        .expect("outputs")
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    println!("{}", names.join(" "));
}
