use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");

    cbindgen::Builder::new()
        .with_config(cbindgen::Config {
            sort_by: cbindgen::SortKey::None,
            cpp_compat: true,
            enumeration: cbindgen::EnumConfig {
                rename_variants: cbindgen::RenameRule::QualifiedScreamingSnakeCase,
                ..Default::default()
            },
            ..cbindgen::Config::default()
        })
        .with_language(cbindgen::Language::C)
        .with_crate(&crate_dir)
        .with_include_guard("RATEGRAPH_H")
        .with_documentation(true)
        .generate()
        .expect("failed to generate C bindings")
        .write_to_file(crate_dir.join("include/rategraph.h"));
}
