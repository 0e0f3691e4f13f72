//! Generates cluttered and multi-digit datasets, writes them as containers
//! and prints a few canvases as text.
//!
//! cargo run --example synth_data -- [out_dir]

use std::path::PathBuf;

use dcn::data::{synth_cluttered, synth_multidigit, write_container, write_pgm, CanvasSpec, Dataset};

fn show(data: &Dataset, i: usize) {
    println!("label {:?}", data.labels[i]);
    for row in data.image(i).chunks(data.width) {
        let line: String = row
            .iter()
            .map(|&p| match p {
                0..=40 => ' ',
                41..=120 => '.',
                121..=200 => '+',
                _ => '#',
            })
            .collect();
        println!("|{line}|");
    }
}

fn main() -> dcn::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&out)?;

    let cluttered = synth_cluttered(&CanvasSpec::cluttered(40, 7), 100)?;
    let centred = synth_multidigit(&CanvasSpec::centred(40, 80, 7), 100)?;
    let wild = synth_multidigit(&CanvasSpec::wild(48, 96, 14, 7), 100)?;
    for (name, data) in [("cluttered", &cluttered), ("centred", &centred), ("wild", &wild)] {
        show(data, 0);
        let path = out.join(format!("{name}.dcn"));
        write_container(data, &path)?;
        write_pgm(&out.join(format!("{name}_0.pgm")), data.image(0), data.height, data.width)?;
        println!("{name}: {} examples of {}x{} -> {}", data.len(), data.height, data.width, path.display());
    }
    Ok(())
}
